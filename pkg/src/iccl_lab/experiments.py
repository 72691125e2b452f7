"""Method presets, ablation grids and sweeps built on :func:`run_experiment`."""
from __future__ import annotations

from .evaluation import MethodRun, compare_runs
from .train import load_datasets, run_experiment

# post-warm-up loss switches for each named method; "rebalance" selects stage 2
METHODS = {
    "ce": dict(overrides={"loss__omega_it": 0.0, "loss__use_cc_warmup": False, "schedule__warmup_epochs": 0,
                          "loss__zero_omega_u_after_warmup": False}, rebalance=False),
    "ce+rebalance": dict(overrides={"loss__omega_it": 0.0, "loss__use_cc_warmup": False, "schedule__warmup_epochs": 0,
                                    "loss__zero_omega_u_after_warmup": False}, rebalance=True),
    "mixup": dict(overrides={"loss__omega_u": 0.0, "loss__use_ce": False, "loss__use_cc_it": False,
                             "loss__use_cc_warmup": False, "schedule__warmup_epochs": 0}, rebalance=True),
    "iccl": dict(overrides={}, rebalance=True),
}

ABLATION_COMPONENTS = ("ce", "ce_it", "cc_it", "warmup")

# component on/off rows of the loss ablation grid
ABLATION_ROWS = [
    "ce",
    "ce_it",
    "ce_it+warmup",
    "ce+cc_it+warmup",
    "ce+ce_it+warmup",
    "ce+ce_it+cc_it",
    "ce+ce_it+cc_it+warmup",
]


def ablation_overrides(row, cfg):
    """Config overrides for a ``+``-joined set of loss components.

    ``warmup`` keeps the configured T (uniform-branch CE + centroid contrastive
    epochs); without it T is 0. The other components switch the post-warm-up
    terms.
    """
    parts = set(row.split("+"))
    unknown = parts - set(ABLATION_COMPONENTS)
    if unknown or not parts - {"warmup"}:
        raise ValueError(f"bad loss-ablation row {row!r}; components are {', '.join(ABLATION_COMPONENTS)}")
    warm = "warmup" in parts
    return {
        "loss__use_ce": "ce" in parts,
        "loss__omega_u": cfg.loss.omega_u if "ce" in parts or warm else 0.0,
        "loss__zero_omega_u_after_warmup": "ce" not in parts,
        "loss__use_ce_it": "ce_it" in parts,
        "loss__use_cc_it": "cc_it" in parts,
        "loss__omega_it": cfg.loss.omega_it if {"ce_it", "cc_it"} & parts else 0.0,
        "loss__use_cc_warmup": warm,
        "schedule__warmup_epochs": cfg.schedule.warmup_epochs if warm else 0,
    }


def method_config(cfg, method):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    spec = METHODS[method]
    return cfg.replace(**spec["overrides"]), spec["rebalance"]


def final_report(result, rebalance):
    return result.report.metrics["stage2" if rebalance else "stage1"]


def run_methods(cfg, methods, seeds, on_result=None):
    """Run each method on each seed; the dataset is shared across methods per seed."""
    runs = []
    for seed in seeds:
        seeded = cfg.replace(schedule__seed=seed)
        train, test = load_datasets(seeded)
        for method in methods:
            mcfg, rebalance = method_config(seeded, method)
            res = run_experiment(mcfg, train, test, rebalance=rebalance)
            runs.append(MethodRun(method, seed, final_report(res, rebalance)))
            if on_result is not None:
                on_result(method, seed, res)
    return runs


SWEEP_AXES = ("beta", "gamma", "gamma_prime", "omega_d", "T", "loss-ablation")


def axis_overrides(cfg, axis, value):
    """(row label, overrides) for one sweep value."""
    value = str(value).strip()
    if axis == "beta":
        a, _, b = value.partition(":")
        b = b or a
        return f"Beta({a},{b})", {"sampler__beta_alpha": float(a), "sampler__beta_beta": float(b)}
    if axis == "gamma":
        if value == "uniform":
            return "uniform", {"sampler__tail_sampler": "uniform"}
        return f"gamma={value}", {"sampler__tail_sampler": "class_aware", "sampler__gamma": float(value)}
    if axis == "gamma_prime":
        return f"gamma'={value}", {"sampler__gamma_prime": float(value)}
    if axis == "omega_d":
        return f"omega_d={value}", {"loss__omega_d": float(value)}
    if axis == "T":
        return f"T={value}", {"schedule__warmup_epochs": int(value)}
    if axis == "loss-ablation":
        return value, ablation_overrides(value, cfg)
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def expand_axis_values(axis, values):
    if axis == "loss-ablation" and values in (["all"], ("all",)):
        return list(ABLATION_ROWS)
    return list(values)


def sweep(cfg, axis, values, seeds=(0,), rebalance=True, on_result=None):
    """Cross product of axis values and seeds; returns the comparison rows."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    values = expand_axis_values(axis, values)
    labelled = [axis_overrides(cfg, axis, v) for v in values]
    runs = []
    for seed in seeds:
        seeded = cfg.replace(schedule__seed=seed)
        train, test = load_datasets(seeded)
        for label, over in labelled:
            res = run_experiment(seeded.replace(**over), train, test, rebalance=rebalance)
            runs.append(MethodRun(label, seed, final_report(res, rebalance)))
            if on_result is not None:
                on_result(label, seed, res)
    return compare_runs(runs)
