"""Split accuracies, weight/centroid norm diagnostics and multi-run comparison."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

SPLITS = ("many", "medium", "few")


def split_of(count, many_threshold=100, few_threshold=20):
    """many: n > 100, medium: 20 <= n <= 100, few: n < 20."""
    if count > many_threshold:
        return "many"
    if count >= few_threshold:
        return "medium"
    return "few"


def assign_splits(train_counts, many_threshold=100, few_threshold=20):
    return [split_of(int(n), many_threshold, few_threshold) for n in train_counts]


@dataclass
class SplitReport:
    overall: float
    many: float | None
    medium: float | None
    few: float | None
    per_class: list
    splits: list
    test_fingerprint: str = ""

    def as_dict(self):
        return {"overall": self.overall, "many": self.many, "medium": self.medium, "few": self.few}

    def metric(self, name):
        return getattr(self, name)


def dataset_fingerprint(test_set):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(test_set.y, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(test_set.x, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def evaluate_predictions(pred, labels, train_counts, many_threshold=100, few_threshold=20, fingerprint=""):
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    k = len(train_counts)
    splits = assign_splits(train_counts, many_threshold, few_threshold)
    correct = pred == labels
    per_class = []
    for c in range(k):
        mask = labels == c
        per_class.append(float(correct[mask].mean()) if mask.any() else None)
    split_acc = {}
    for name in SPLITS:
        members = [c for c in range(k) if splits[c] == name]
        mask = np.isin(labels, members)
        split_acc[name] = float(correct[mask].sum() / mask.sum()) if mask.any() else None
    overall = float(correct.sum() / correct.size) if correct.size else math.nan
    return SplitReport(overall, split_acc["many"], split_acc["medium"], split_acc["few"], per_class, splits, fingerprint)


def evaluate(model, test_set, train_counts, many_threshold=100, few_threshold=20):
    """Top-1 accuracy overall and per split; argmax ties go to the smaller class index."""
    logits = model.predict_logits(test_set.x)
    pred = np.argmax(logits, axis=1)
    return evaluate_predictions(
        pred, test_set.y, train_counts, many_threshold, few_threshold, dataset_fingerprint(test_set)
    )


@dataclass
class NormReport:
    weight_norms: np.ndarray
    centroid_norms: np.ndarray
    stats: dict = field(default_factory=dict)


def _stats(v):
    v = np.asarray(v, dtype=np.float64)
    lo = v.min()
    return {
        "mean": float(v.mean()),
        "std": float(v.std()),
        "max_min_ratio": float(v.max() / lo) if lo > 0 else math.inf,
    }


def norm_report(classifier_weight, centroids):
    w = np.asarray(getattr(classifier_weight, "data", classifier_weight))
    c = np.asarray(getattr(centroids, "centroids", centroids))
    wn = np.linalg.norm(w, axis=1)
    cn = np.linalg.norm(c, axis=1)
    return NormReport(wn, cn, {"weight": _stats(wn), "centroid": _stats(cn)})


@dataclass
class MethodRun:
    method: str
    seed: int
    report: SplitReport


def compare_runs(runs):
    """Per-method mean and sample std (ddof=1, 0 for one run) of every split metric."""
    runs = list(runs)
    if not runs:
        return []
    prints = {r.report.test_fingerprint for r in runs}
    if len(prints) > 1:
        raise ValueError(f"runs were evaluated on different test sets: {sorted(prints)}")
    order, grouped = [], {}
    for r in runs:
        if r.method not in grouped:
            order.append(r.method)
            grouped[r.method] = []
        grouped[r.method].append(r)
    rows = []
    for method in order:
        group = grouped[method]
        row = {"method": method, "seeds": len(group)}
        for metric in ("overall", *SPLITS):
            vals = [r.report.metric(metric) for r in group]
            if any(v is None for v in vals):
                row[f"{metric}_mean"] = None
                row[f"{metric}_std"] = None
                continue
            arr = np.array(vals, dtype=np.float64)
            row[f"{metric}_mean"] = float(arr.mean())
            row[f"{metric}_std"] = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(row)
    return rows


COMPARE_COLUMNS = ["method", "seeds"] + [f"{m}_{s}" for m in ("overall", *SPLITS) for s in ("mean", "std")]


def write_comparison_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if row.get(k) is None else row.get(k) for k in COMPARE_COLUMNS})


def write_split_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in report.as_dict().items():
            w.writerow([name, "" if value is None else repr(value)])


def write_plot_data(path, norms, report):
    """One row per class: index, split, classifier weight norm, centroid norm, accuracy."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "split", "weight_norm", "centroid_norm", "accuracy"])
        for k in range(len(norms.weight_norms)):
            acc = report.per_class[k]
            w.writerow([k, report.splits[k], repr(float(norms.weight_norms[k])),
                        repr(float(norms.centroid_norms[k])), "" if acc is None else repr(acc)])


def format_split_table(report):
    def fmt(v):
        return "   n/a" if v is None else f"{100 * v:6.2f}"

    head = f"{'overall':>8} {'many':>8} {'medium':>8} {'few':>8}"
    body = " ".join(f"{fmt(v):>8}" for v in (report.overall, report.many, report.medium, report.few))
    return head + "\n" + body


def format_comparison(rows):
    lines = [f"{'method':<24} {'overall':>14} {'many':>14} {'medium':>14} {'few':>14}"]
    for row in rows:
        cells = []
        for m in ("overall", *SPLITS):
            mean, std = row[f"{m}_mean"], row[f"{m}_std"]
            cells.append("n/a".rjust(14) if mean is None else f"{100 * mean:6.2f} ± {100 * std:5.2f}".rjust(14))
        lines.append(f"{row['method']:<24} " + " ".join(cells))
    return "\n".join(lines)
