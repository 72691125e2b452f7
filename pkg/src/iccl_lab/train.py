"""Two-stage training: representation learning with a warm-up curriculum, then
classifier rebalancing distilled from the stage-1 classifier."""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint as ckpt
from . import losses as L
from . import tensor as T
from .config import ExperimentConfig
from .data import SyntheticSpec, read_dataset, standardize_images, load_cifar_dir, build_longtailed, synthetic_longtailed
from .evaluation import evaluate, norm_report
from .model import CentroidBank, ICCLNet, ModelSpec
from .optim import SGD, LrSchedule, lr_at
from .sampling import (
    ClassAgnosticSampler,
    ClassAwareSampler,
    augment,
    draw_lambda,
    make_interpolative_batch,
    substream,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def thread_limit():
    """Cap BLAS threads at ``ICCL_THREADS`` (default 1, the reproducible setting)."""
    return threadpool_limits(int(os.environ.get("ICCL_THREADS", "1")))


@dataclass
class RunReport:
    config_hash: str
    seed: int
    rows: list = field(default_factory=list)  # (stage, epoch, term, value)
    metrics: dict = field(default_factory=dict)  # stage -> SplitReport
    norms: dict = field(default_factory=dict)  # stage -> NormReport

    def add(self, stage, epoch, term, value):
        self.rows.append((stage, epoch, term, float(value)))

    def terms(self, stage, term):
        return {e: v for s, e, t, v in self.rows if s == stage and t == term}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "term", "value"])
            for stage, epoch, term, value in self.rows:
                w.writerow([epoch, f"{stage}.{term}", repr(value)])

    def summary(self):
        out = {"config_hash": self.config_hash, "seed": self.seed, "metrics": {}, "norms": {}}
        for stage, rep in self.metrics.items():
            out["metrics"][stage] = rep.as_dict() | {"per_class": rep.per_class, "splits": rep.splits}
        for stage, nr in self.norms.items():
            out["norms"][stage] = nr.stats
        return out

    def write_summary(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_datasets(cfg):
    """(train, test) for the configured source; inputs flattened to float64 rows."""
    d = cfg.dataset
    seed = cfg.schedule.seed
    if d.source == "synthetic":
        spec = SyntheticSpec(
            num_classes=d.num_classes, dim=d.dim, n_max=d.n_max, imbalance_ratio=d.imbalance_ratio,
            test_per_class=d.test_per_class, mean_scale=d.mean_scale, noise=d.noise,
            modes_per_class=d.modes_per_class, mode_spread=d.mode_spread,
        )
        return synthetic_longtailed(spec, int(substream(seed, "data").integers(2**32)))
    if d.source == "file":
        train, test = read_dataset(d.path), read_dataset(d.test_path)
    else:
        base = load_cifar_dir(d.path, "train", d.num_classes)
        train = build_longtailed(base, d.imbalance_ratio, seed=int(substream(seed, "data").integers(2**32)))
        test = load_cifar_dir(d.path, "test", d.num_classes)
    for ds in (train, test):
        if ds.x.dtype == np.uint8:
            ds.x = standardize_images(ds.x, d.norm_mean, d.norm_std)
    return train, test


def build_model(cfg, input_dim, num_classes):
    spec = ModelSpec(
        input_dim=input_dim, hidden=list(cfg.model.hidden), feature_dim=cfg.model.feature_dim,
        embed_dim=cfg.model.embed_dim, num_classes=num_classes,
    )
    return ICCLNet(spec, substream(cfg.schedule.seed, "init"))


def _schedule(cfg, base_lr=None, epochs=None, kind=None):
    s = cfg.schedule
    kind = kind or s.lr_kind
    return LrSchedule(
        kind=kind, base_lr=base_lr or s.base_lr, total_epochs=epochs if epochs is not None else s.epochs,
        warmup_epochs=s.lr_warmup_epochs if epochs is None else 0,
        milestones=list(s.milestones), decay=s.lr_decay,
    )


def _fill_missing_grads(params):
    # parameters a loss does not touch (e.g. the projection head under CE only) step on decay alone
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def _check_finite(loss, stage, epoch, step):
    if not np.isfinite(loss.data).all():
        raise TrainingDiverged(f"{stage}: loss became {loss.item()} at epoch {epoch}, step {step}")


def _flat(x):
    return x.reshape(len(x), -1) if x.ndim > 2 else x


@dataclass
class Stage1Result:
    model: ICCLNet
    bank: CentroidBank
    optimizer: SGD
    report: RunReport
    train_counts: np.ndarray


def stage1_train(cfg: ExperimentConfig, train, test=None, on_epoch=None):
    """Representation learning.

    Epochs ``< T`` optimise ``omega_u * (L_ce + L_cc)`` on the uniform branch only
    (``use_ce`` and the interpolative switches apply afterwards); later epochs
    optimise the weighted sum of both branches. ``on_epoch(epoch, model, bank)`` runs
    after each epoch.
    """
    cfg.validate()
    seed = cfg.schedule.seed
    k = train.num_classes
    input_dim = int(np.prod(train.example_shape))
    model = build_model(cfg, input_dim, k)
    bank = CentroidBank(k, cfg.model.embed_dim, cfg.model.momentum, cfg.model.renormalize,
                        rng=substream(seed, "init/centroids"))
    params = model.parameters()
    opt = SGD(params, cfg.schedule.base_lr, cfg.schedule.momentum, cfg.schedule.weight_decay)
    schedule = _schedule(cfg)
    report = RunReport(cfg.hash(), seed)
    lw, ls, sc = cfg.loss, cfg.sampler, cfg.schedule
    weights = L.LossWeights(lw.omega_u, lw.omega_it, lw.omega_d, lw.tau_d)
    after_warm = L.LossWeights(0.0 if lw.zero_omega_u_after_warmup else lw.omega_u, lw.omega_it)
    tau = cfg.model.tau

    head = ClassAgnosticSampler(len(train), seed)
    use_interp = (lw.use_ce_it or lw.use_cc_it) and lw.omega_it != 0
    if ls.tail_sampler == "class_aware":
        tail = ClassAwareSampler(train.y, k, ls.gamma, seed)
    else:
        tail = None

    for epoch in range(sc.epochs):
        t0 = time.perf_counter()
        opt.lr = lr_at(schedule, epoch)
        warm = epoch < sc.warmup_epochs
        if tail is not None:
            tail.reseed(epoch)
        tail_rng = substream(seed, "sampler/uniform_tail", epoch)
        lam_rng = substream(seed, "sampler/lambda", epoch)
        aug_rng = substream(seed, "augment", epoch)
        sums, steps = {}, 0
        for idx in head.epoch(epoch, sc.batch_size):
            x_h = augment(train.x[idx], aug_rng, cfg.dataset.augment)
            y_h = train.y[idx]
            g, z, o = model.forward(_flat(x_h))
            terms = {}
            if warm or lw.use_ce:
                terms["ce"] = L.ce_loss(o, y_h)
            if warm:
                if lw.use_cc_warmup:
                    terms["cc"] = L.centroid_contrastive(z, y_h, bank, tau)
                warm_loss = T.add(terms["ce"], terms["cc"]) if "cc" in terms else terms["ce"]
                loss = T.scale(warm_loss, weights.omega_u)
            else:
                if use_interp:
                    b = len(idx)
                    t_idx = tail.draw(b) if tail is not None else tail_rng.integers(0, len(train), b)
                    x_t = augment(train.x[t_idx], aug_rng, cfg.dataset.augment)
                    lam = draw_lambda(ls.beta_alpha, ls.beta_beta, lam_rng, size=b if ls.per_example_lambda else None)
                    batch = make_interpolative_batch(x_h, y_h, x_t, train.y[t_idx], lam)
                    _, z_f, o_f = model.forward(_flat(batch.x_f))
                    if lw.use_ce_it:
                        terms["ce_it"] = L.interpolative_ce(o_f, batch.y_h, batch.y_t, batch.lam)
                    if lw.use_cc_it:
                        terms["cc_it"] = L.interpolative_cc(z_f, batch.y_h, batch.y_t, batch.lam, bank, tau)
                loss = L.total_loss(terms.get("ce"), terms.get("ce_it"), terms.get("cc_it"), after_warm)
            _check_finite(loss, "stage1", epoch, steps)
            opt.zero_grad()
            T.backward(loss)
            _fill_missing_grads(params)
            opt.step()
            bank.update(z.data, y_h)
            for name, t in terms.items():
                sums[name] = sums.get(name, 0.0) + t.item()
            sums["total"] = sums.get("total", 0.0) + loss.item()
            steps += 1
        if epoch == 0 or epoch == sc.warmup_epochs - 1:
            bank.initialize(model.embed(_flat(train.x)), train.y, substream(seed, "init/centroids", epoch + 1))
        for name in ("total", "ce", "cc", "ce_it", "cc_it"):
            if name in sums:
                report.add("stage1", epoch, name, sums[name] / steps)
        report.add("stage1", epoch, "lr", opt.lr)
        report.add("stage1", epoch, "wall_time", time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, model, bank)
        log.debug("stage1 epoch %d loss %.4f", epoch, sums["total"] / steps)

    counts = train.class_counts
    norms = norm_report(model.classifier.weight, bank)
    report.norms["stage1"] = norms
    if test is not None:
        report.metrics["stage1"] = evaluate(model, test, counts, cfg.eval.many_threshold, cfg.eval.few_threshold)
    return Stage1Result(model, bank, opt, report, counts)


@dataclass
class Stage2Result:
    model: ICCLNet
    teacher: ICCLNet
    report: RunReport


def teacher_logits(teacher, x):
    return teacher.classify(teacher.encode(x)).data


def stage2_rebalance(cfg: ExperimentConfig, stage1, train, test=None, report=None):
    """Retrain the classifier under the class-aware sampler with ``gamma_prime``.

    The teacher is a frozen copy of the stage-1 network; the student classifier
    starts from it. The encoder stays frozen unless ``stage2.freeze_encoder`` is off.
    """
    cfg.validate()
    seed = cfg.schedule.seed
    s2 = cfg.stage2
    teacher = copy.deepcopy(stage1.model)
    for p in teacher.parameters():
        p.requires_grad = False
    model = copy.deepcopy(stage1.model)
    report = report or RunReport(cfg.hash(), seed)
    weights = L.LossWeights(omega_d=cfg.loss.omega_d, tau_d=cfg.loss.tau_d)
    k = train.num_classes

    frozen = s2.freeze_encoder
    if frozen:
        for p in model.encoder.parameters():
            p.requires_grad = False
    cls_params = model.classifier.parameters()
    opts = [SGD(cls_params, cfg.schedule.base_lr * s2.lr_factor, cfg.schedule.momentum, cfg.schedule.weight_decay)]
    schedules = [_schedule(cfg, base_lr=cfg.schedule.base_lr * s2.lr_factor, epochs=max(s2.epochs, 1), kind="cosine")]
    if not frozen:
        opts.append(SGD(model.encoder.parameters(), s2.encoder_lr, cfg.schedule.momentum, cfg.schedule.weight_decay))
        schedules.append(_schedule(cfg, base_lr=s2.encoder_lr, epochs=max(s2.epochs, 1), kind="cosine"))

    cached = None
    if frozen and not cfg.dataset.augment:
        cached = model.encode(_flat(train.x)).data
        cached_teacher = teacher.classify(T.Tensor(cached)).data

    sampler = ClassAwareSampler(train.y, k, cfg.sampler.gamma_prime, seed, stream="stage2/aware")
    steps_per_epoch = -(-len(train) // s2.batch_size)
    for epoch in range(s2.epochs):
        t0 = time.perf_counter()
        for opt, sch in zip(opts, schedules):
            opt.lr = lr_at(sch, epoch)
        sampler.reseed(epoch)
        aug_rng = substream(seed, "stage2/augment", epoch)
        total, ce_sum = 0.0, 0.0
        for step in range(steps_per_epoch):
            idx = sampler.draw(s2.batch_size)
            y = train.y[idx]
            if cached is not None:
                g = T.Tensor(cached[idx])
                o_t = cached_teacher[idx]
            else:
                x = _flat(augment(train.x[idx], aug_rng, cfg.dataset.augment))
                g = model.encode(x)
                o_t = teacher_logits(teacher, x)
            o_s = model.classify(g)
            loss = L.rebalance_loss(o_s, o_t, y, weights)
            _check_finite(loss, "stage2", epoch, step)
            for opt in opts:
                opt.zero_grad()
            T.backward(loss)
            for opt in opts:
                _fill_missing_grads(opt.params)
                opt.step()
            total += loss.item()
        report.add("stage2", epoch, "total", total / steps_per_epoch)
        report.add("stage2", epoch, "lr", opts[0].lr)
        report.add("stage2", epoch, "wall_time", time.perf_counter() - t0)

    for p in model.parameters():
        p.requires_grad = True
    report.norms["stage2"] = norm_report(model.classifier.weight, stage1.bank)
    if test is not None:
        report.metrics["stage2"] = evaluate(model, test, train.class_counts, cfg.eval.many_threshold, cfg.eval.few_threshold)
    return Stage2Result(model, teacher, report)


# -- checkpoints -------------------------------------------------------------

def checkpoint_arrays(model, bank=None, optimizer=None, train_counts=None, teacher=None):
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    if bank is not None:
        arrays[ckpt.CENTROID_PREFIX + "centroids"] = bank.centroids
        arrays[ckpt.CENTROID_PREFIX + "momentum"] = np.array(bank.momentum)
        arrays[ckpt.CENTROID_PREFIX + "renormalize"] = np.array(float(bank.renormalize))
    if optimizer is not None:
        for name, v in optimizer.state_arrays().items():
            arrays[ckpt.OPT_PREFIX + name] = v
        arrays[ckpt.OPT_PREFIX + "lr"] = np.array(optimizer.lr)
    if train_counts is not None:
        arrays["meta/train_counts"] = np.asarray(train_counts, dtype=np.float64)
    if teacher is not None:
        for name, p in teacher.named_parameters().items():
            arrays["teacher/" + name] = p.data
    return arrays


def save_checkpoint(path, model, bank=None, optimizer=None, train_counts=None, teacher=None):
    ckpt.save(path, checkpoint_arrays(model, bank, optimizer, train_counts, teacher))


def _spec_from_arrays(arrays, prefix=""):
    def need(name):
        if prefix + name not in arrays:
            raise ckpt.CheckpointError(f"checkpoint is missing field {prefix + name!r}")
        return arrays[prefix + name]

    layers = sorted(
        int(n[len(prefix) + len("encoder."):].split(".")[0])
        for n in arrays if n.startswith(prefix + "encoder.") and n.endswith(".weight")
    )
    if not layers or layers != list(range(len(layers))):
        raise ckpt.CheckpointError(f"checkpoint has no contiguous {prefix}encoder.N.weight fields")
    w = [need(f"encoder.{i}.weight") for i in layers]
    head = need("head.1.weight")
    cls = need("classifier.weight")
    spec = ModelSpec(
        input_dim=w[0].shape[1], hidden=[m.shape[0] for m in w[:-1]], feature_dim=w[-1].shape[0],
        embed_dim=head.shape[0], num_classes=cls.shape[0],
    )
    return spec


def model_from_arrays(arrays, prefix=""):
    spec = _spec_from_arrays(arrays, prefix)
    model = ICCLNet(spec, np.random.default_rng(0))
    for name, p in model.named_parameters().items():
        key = prefix + name
        if key not in arrays:
            raise ckpt.CheckpointError(f"checkpoint is missing field {key!r}")
        if arrays[key].shape != p.shape:
            raise ckpt.CheckpointError(f"field {key!r} has shape {arrays[key].shape}, expected {p.shape}")
        p.data = arrays[key].copy()
    return model


def bank_from_arrays(arrays):
    key = ckpt.CENTROID_PREFIX + "centroids"
    if key not in arrays:
        return None
    c = arrays[key]
    bank = CentroidBank(c.shape[0], c.shape[1], float(arrays[ckpt.CENTROID_PREFIX + "momentum"]),
                        bool(arrays[ckpt.CENTROID_PREFIX + "renormalize"]))
    bank.centroids = c.copy()
    return bank


@dataclass
class LoadedCheckpoint:
    model: ICCLNet
    bank: CentroidBank | None
    train_counts: np.ndarray | None
    teacher: ICCLNet | None
    arrays: dict


def load_checkpoint(path):
    arrays = ckpt.load(path)
    model = model_from_arrays(arrays)
    teacher = model_from_arrays(arrays, "teacher/") if any(n.startswith("teacher/") for n in arrays) else None
    counts = arrays.get("meta/train_counts")
    return LoadedCheckpoint(model, bank_from_arrays(arrays), None if counts is None else counts.astype(np.int64),
                            teacher, arrays)


def stage1_from_checkpoint(loaded, cfg):
    """Rebuild a Stage1Result for rebalancing, checking shapes against ``cfg``."""
    m = loaded.model.spec
    problems = []
    if m.feature_dim != cfg.model.feature_dim:
        problems.append(f"model.feature_dim: checkpoint {m.feature_dim}, config {cfg.model.feature_dim}")
    if m.embed_dim != cfg.model.embed_dim:
        problems.append(f"model.embed_dim: checkpoint {m.embed_dim}, config {cfg.model.embed_dim}")
    if list(m.hidden) != list(cfg.model.hidden):
        problems.append(f"model.hidden: checkpoint {m.hidden}, config {cfg.model.hidden}")
    if m.num_classes != cfg.dataset.num_classes:
        problems.append(f"dataset.num_classes: checkpoint {m.num_classes}, config {cfg.dataset.num_classes}")
    if loaded.bank is None:
        problems.append("centroid/centroids: missing from checkpoint")
    if problems:
        raise ckpt.CheckpointError("incompatible stage-1 checkpoint: " + "; ".join(problems))
    opt = SGD(loaded.model.parameters(), cfg.schedule.base_lr, cfg.schedule.momentum, cfg.schedule.weight_decay)
    return Stage1Result(loaded.model, loaded.bank, opt, RunReport(cfg.hash(), cfg.schedule.seed), loaded.train_counts)


@dataclass
class ExperimentResult:
    stage1: Stage1Result
    stage2: Stage2Result | None
    report: RunReport


def run_experiment(cfg, train=None, test=None, rebalance=True):
    """Stage 1 and (optionally) stage 2 for one config; metrics land in ``report``."""
    if train is None:
        train, test = load_datasets(cfg)
    with thread_limit():
        s1 = stage1_train(cfg, train, test)
        s2 = stage2_rebalance(cfg, s1, train, test, report=s1.report) if rebalance else None
    return ExperimentResult(s1, s2, s1.report)
