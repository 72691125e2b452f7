"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in pytest's terminal summary (see conftest.py) and by
``python3 tests/test_acceptance.py``.
"""
import functools
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import gradsuite  # noqa: E402
from iccl_lab import losses as L  # noqa: E402
from iccl_lab import tensor as T  # noqa: E402
from iccl_lab.config import desk_preset  # noqa: E402
from iccl_lab.experiments import method_config  # noqa: E402
from iccl_lab.model import CentroidBank, retrieval_probs  # noqa: E402
from iccl_lab.sampling import ClassAwareSampler, class_aware_probs, draw_lambda  # noqa: E402
from iccl_lab.train import load_datasets, run_experiment, stage1_train, stage2_rebalance, thread_limit  # noqa: E402

SEEDS = range(5)
RESULTS = {}


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail}"
    RESULTS[number] = line
    print(line)
    return ok


# -- 1 ----------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    errs = gradsuite.run_suite(cases_per_loss=20)
    elapsed = time.perf_counter() - t0
    n = sum(len(v) for v in errs.values())
    worst = max(max(v) for v in errs.values())
    ok = n >= 100 and worst <= 1e-4 and elapsed < 60
    per = ", ".join(f"{k} {max(v):.1e}" for k, v in errs.items())
    return record(1, "gradient suite", ok, f"{n} cases, max rel err {worst:.2e} (<= 1e-4) [{per}], {elapsed:.1f}s (< 60s)")


# -- 2 ----------------------------------------------------------------------

def criterion_2():
    t0 = time.perf_counter()
    counts = [100, 10, 1]
    y = np.repeat(np.arange(3), counts)
    tvs = {}
    for gamma in (0.0, 0.5, 1.0):
        idx = ClassAwareSampler(y, 3, gamma, seed=0).draw(100_000)
        mass = np.bincount(y[idx], minlength=3) / idx.size
        tvs[gamma] = 0.5 * float(np.abs(mass - class_aware_probs(counts, gamma)).sum())
    moments = {}
    for a, b in ((1.0, 1.0), (2.0, 2.0), (0.2, 1.0)):
        lam = draw_lambda(a, b, np.random.default_rng(0), size=100_000)
        mean, var = a / (a + b), a * b / ((a + b) ** 2 * (a + b + 1))
        moments[(a, b)] = max(abs(lam.mean() - mean) / mean, abs(lam.var() - var) / var)
    elapsed = time.perf_counter() - t0
    ok = max(tvs.values()) <= 0.01 and max(moments.values()) <= 0.05 and elapsed < 30
    tv_s = ", ".join(f"gamma={g:g} TV {v:.4f}" for g, v in tvs.items())
    mo_s = ", ".join(f"Beta{k} {100 * v:.2f}%" for k, v in moments.items())
    return record(2, "sampler fidelity", ok, f"{tv_s}; max moment rel err {mo_s}; {elapsed:.1f}s (< 30s)")


# -- 3 ----------------------------------------------------------------------

def criterion_3():
    rng = np.random.default_rng(3)
    failures = []
    for case in range(200):
        k = int(rng.integers(2, 8))
        b = int(rng.integers(1, 6))
        o = rng.standard_normal((b, k)) * 5
        z = T.l2_normalize(T.Tensor(rng.standard_normal((b, 4)))).data
        c = T.l2_normalize(T.Tensor(rng.standard_normal((k, 4)))).data
        y_h, y_t = rng.integers(0, k, b), rng.integers(0, k, b)
        lam = float(rng.uniform())
        tau = float(rng.uniform(0.05, 1.0))
        checks = [
            (L.interpolative_ce(o, y_h, y_t, 1.0), L.ce_loss(o, y_h)),
            (L.interpolative_ce(o, y_h, y_t, 0.0), L.ce_loss(o, y_t)),
            (L.interpolative_cc(z, y_h, y_t, 1.0, c, tau), L.centroid_contrastive(z, y_h, c, tau)),
            (L.interpolative_cc(z, y_h, y_t, 0.0, c, tau), L.centroid_contrastive(z, y_t, c, tau)),
            (L.interpolative_ce(o, y_h, y_h, lam), L.ce_loss(o, y_h)),
            (L.interpolative_cc(z, y_h, y_h, lam, c, tau), L.centroid_contrastive(z, y_h, c, tau)),
        ]
        for i, (a, b_) in enumerate(checks):
            if float(a.data) != float(b_.data):
                failures.append((case, i))
        bank = CentroidBank(k, 4, momentum=1.0, rng=rng)
        before = bank.centroids.copy()
        bank.update(z, y_h)
        if not np.array_equal(before, bank.centroids):
            failures.append((case, "m=1"))
        sums = [T.softmax(T.Tensor(o)).data.sum(axis=1), retrieval_probs(z, c, tau).sum(axis=1)]
        if max(float(np.abs(s - 1).max()) for s in sums) > 1e-9:
            failures.append((case, "sum"))
    ok = not failures
    return record(3, "endpoint identities", ok, f"200 random cases, {len(failures)} bitwise/sum failures")


# -- 4 ----------------------------------------------------------------------

def _snapshots(cfg, train):
    snaps = []

    def grab(epoch, model, bank):
        snaps.append([p.data.copy() for p in model.parameters()] + [bank.centroids.copy()])

    with thread_limit():
        stage1_train(cfg, train, on_epoch=grab)
    return snaps


def criterion_4():
    cfg = desk_preset().replace(schedule__epochs=8, schedule__warmup_epochs=4)
    train, _ = load_datasets(cfg)
    full = _snapshots(cfg, train)
    uniform = _snapshots(cfg.replace(schedule__warmup_epochs=8), train)
    params = [all(np.array_equal(a, b) for a, b in zip(full[e][:-1], uniform[e][:-1])) for e in range(8)]
    # the bank is re-initialised from class means at the end of epoch T-1, so compare it before that
    bank = [np.array_equal(full[e][-1], uniform[e][-1]) for e in range(8)]
    ok = all(params[:4]) and all(bank[:3]) and not params[7]
    return record(4, "curriculum equivalence", ok,
                  f"T=4 of 8 epochs: parameters bit-identical for epochs 0-3 {all(params[:4])}, "
                  f"centroids bit-identical for epochs 0-2 {all(bank[:3])}, trajectories diverge after T {not params[7]}")


# -- 5, 6, 7 ----------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def directional_runs():
    """CE, Mixup and ICCL on each seed, plus the omega_d = 0 stage-2 variant of ICCL."""
    os.environ["ICCL_THREADS"] = "1"
    t0 = time.perf_counter()
    out = {"ce": [], "mixup": [], "iccl": [], "iccl_wd0": [], "centroid_dev": [], "std": [], "iccl_runs": []}
    for seed in SEEDS:
        cfg = desk_preset().replace(schedule__seed=seed)
        train, test = load_datasets(cfg)
        for method in ("ce", "mixup"):
            mcfg, rebalance = method_config(cfg, method)
            res = run_experiment(mcfg, train, test, rebalance=rebalance)
            out[method].append(res.report.metrics["stage2" if rebalance else "stage1"])
        dev = []
        with thread_limit():
            s1 = stage1_train(cfg, train, test, on_epoch=lambda e, m, bank: dev.append(np.abs(bank.norms() - 1).max()))
            s2 = stage2_rebalance(cfg, s1, train, test, report=s1.report)
            s2_0 = stage2_rebalance(cfg.replace(loss__omega_d=0.0), s1, train, test)
        norms = s1.report.norms
        dev.append(np.abs(norms["stage2"].centroid_norms - 1).max())
        out["iccl"].append(s1.report.metrics["stage2"])
        out["iccl_wd0"].append(s2_0.report.metrics["stage2"])
        out["centroid_dev"].append(float(max(dev)))
        out["std"].append((norms["stage1"].stats["weight"]["std"], norms["stage2"].stats["weight"]["std"]))
        out["iccl_runs"].append((s1, s2))
    out["elapsed"] = time.perf_counter() - t0
    return out


def _mean(reports, metric):
    return 100 * float(np.mean([r.metric(metric) for r in reports]))


def criterion_5():
    r = directional_runs()
    ce, mix, icl = ({m: _mean(r[k], m) for m in ("overall", "few")} for k in ("ce", "mixup", "iccl"))
    d_overall = icl["overall"] - ce["overall"]
    d_few = icl["few"] - ce["few"]
    ok = d_overall >= 3 and d_few >= 5 and icl["few"] > mix["few"] and r["elapsed"] < 600
    return record(5, "directional experiment", ok,
                  f"overall CE {ce['overall']:.2f} / Mixup {mix['overall']:.2f} / ICCL {icl['overall']:.2f} "
                  f"(ICCL-CE {d_overall:+.2f} >= 3); few CE {ce['few']:.2f} / Mixup {mix['few']:.2f} / ICCL {icl['few']:.2f} "
                  f"(ICCL-CE {d_few:+.2f} >= 5, ICCL > Mixup {icl['few'] > mix['few']}); {r['elapsed']:.0f}s for 5 seeds (< 600s)")


def criterion_6():
    r = directional_runs()
    s1, s2 = np.array(r["std"]).T
    decreased = int((s2 < s1).sum())
    worst = max(r["centroid_dev"])
    ok = s2.mean() < s1.mean() and worst <= 1e-6
    per_seed = " ".join(f"{a:.4f}->{b:.4f}" for a, b in zip(s1, s2))
    return record(6, "rebalancing effect", ok,
                  f"mean weight-norm std over seeds {s1.mean():.4f} -> {s2.mean():.4f} "
                  f"(per seed {per_seed}; {decreased}/5 decrease); max |centroid norm - 1| {worst:.1e} (<= 1e-6)")


def criterion_7():
    r = directional_runs()
    opposite, diffs = 0, []
    for with_kd, without in zip(r["iccl"], r["iccl_wd0"]):
        d_many = with_kd.many - without.many
        d_few = with_kd.few - without.few
        opposite += d_many * d_few < 0
        diffs.append(100 * (with_kd.overall - without.overall))
    mean_diff = float(np.mean(diffs))
    ok = opposite >= 4 and abs(mean_diff) <= 2
    return record(7, "distillation trade-off", ok,
                  f"many/few move in opposite directions on {opposite}/5 seeds (>= 4); overall difference "
                  f"omega_d 0.5 vs 0 mean {mean_diff:+.2f} points (|.| <= 2), per seed "
                  + " ".join(f"{d:+.2f}" for d in diffs))


# -- 8 ----------------------------------------------------------------------

def criterion_8():
    r = directional_runs()
    os.environ["ICCL_THREADS"] = "1"
    cfg = desk_preset().replace(schedule__seed=0)
    train, test = load_datasets(cfg)
    with thread_limit():
        s1 = stage1_train(cfg, train, test)
        s2 = stage2_rebalance(cfg, s1, train, test, report=s1.report)
    ref1, ref2 = r["iccl_runs"][0]

    def rows(rep):
        return [row for row in rep.rows if row[2] != "wall_time"]

    same_rows = rows(s1.report) == rows(ref1.report)
    same_metrics = all(s1.report.metrics[s].as_dict() == ref1.report.metrics[s].as_dict() for s in ("stage1", "stage2"))
    same_params = all(np.array_equal(a.data, b.data) for a, b in zip(s2.model.parameters(), ref2.model.parameters()))
    same_bank = np.array_equal(s1.bank.centroids, ref1.bank.centroids)
    ce_cfg, _ = method_config(cfg, "ce")
    again = run_experiment(ce_cfg, train, test, rebalance=False).report.metrics["stage1"]
    same_ce = again.as_dict() == r["ce"][0].as_dict() and again.per_class == r["ce"][0].per_class
    ok = same_rows and same_metrics and same_params and same_bank and same_ce
    return record(8, "reproducibility", ok,
                  f"ICCL seed 0 rerun: loss rows {same_rows}, metrics {same_metrics}, parameters {same_params}, "
                  f"centroids {same_bank}; CE seed 0 metrics {same_ce} (all bitwise, ICCL_THREADS=1)")


def test_criterion_1_gradients():
    assert criterion_1(), RESULTS[1]


def test_criterion_2_samplers():
    assert criterion_2(), RESULTS[2]


def test_criterion_3_endpoints():
    assert criterion_3(), RESULTS[3]


def test_criterion_4_curriculum():
    assert criterion_4(), RESULTS[4]


def test_criterion_5_directional():
    assert criterion_5(), RESULTS[5]


def test_criterion_6_rebalancing():
    assert criterion_6(), RESULTS[6]


def test_criterion_7_distillation():
    assert criterion_7(), RESULTS[7]


def test_criterion_8_reproducibility():
    assert criterion_8(), RESULTS[8]


if __name__ == "__main__":
    checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]
    passed = [c() for c in checks]
    print(f"{sum(passed)}/{len(passed)} criteria passed")
    sys.exit(0 if all(passed) else 1)
