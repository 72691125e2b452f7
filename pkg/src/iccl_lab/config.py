"""Experiment configuration and its sectioned ``key = value`` file format.

Grammar (read with :mod:`configparser`, interpolation off, keys case-sensitive)::

    [section]
    key = value        ; one per line, '#' or ';' starts a comment line

Sections: dataset, sampler, model, loss, schedule, stage2, eval.  Lists are
comma-separated, booleans are ``true``/``false``.  Unknown sections or keys
are an error; omitted keys keep their defaults.
"""
from __future__ import annotations

import configparser
import copy
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # synthetic | file | cifar
    path: str = ""
    test_path: str = ""
    num_classes: int = 10
    dim: int = 32
    n_max: int = 1210
    imbalance_ratio: float = 100.0
    test_per_class: int = 200
    mean_scale: float = 1.0
    noise: float = 1.0
    modes_per_class: int = 1
    mode_spread: float = 0.0
    augment: bool = False
    norm_mean: list = field(default_factory=lambda: [0.4914, 0.4822, 0.4465])
    norm_std: list = field(default_factory=lambda: [0.2470, 0.2435, 0.2616])


@dataclass
class SamplerConfig:
    gamma: float = 0.0
    gamma_prime: float = 1.0
    beta_alpha: float = 1.0
    beta_beta: float = 1.0
    tail_sampler: str = "class_aware"  # class_aware | uniform
    per_example_lambda: bool = False


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [256])
    feature_dim: int = 256
    embed_dim: int = 128
    tau: float = 0.07
    momentum: float = 0.99
    renormalize: bool = True


@dataclass
class LossConfig:
    omega_u: float = 1.0
    omega_it: float = 1.0
    omega_d: float = 0.5
    tau_d: float = 10.0
    use_ce: bool = True  # uniform-branch CE after warm-up; warm-up always trains CE
    use_ce_it: bool = True
    use_cc_it: bool = True
    use_cc_warmup: bool = True
    zero_omega_u_after_warmup: bool = False


@dataclass
class ScheduleConfig:
    seed: int = 0
    epochs: int = 200
    warmup_epochs: int = 100  # T: uniform-branch-only epochs
    batch_size: int = 128
    lr_kind: str = "step"
    base_lr: float = 0.1
    lr_warmup_epochs: int = 5
    milestones: list = field(default_factory=lambda: [120, 160])
    lr_decay: float = 0.01
    weight_decay: float = 2e-4
    momentum: float = 0.9


@dataclass
class Stage2Config:
    epochs: int = 10
    lr_factor: float = 0.1
    freeze_encoder: bool = True
    encoder_lr: float = 0.01
    batch_size: int = 128


@dataclass
class EvalConfig:
    many_threshold: int = 100
    few_threshold: int = 20


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        s = self.schedule
        if not 0 <= s.warmup_epochs <= s.epochs:
            raise ConfigError(f"schedule.warmup_epochs={s.warmup_epochs} must lie in [0, epochs={s.epochs}]")
        if s.batch_size < 1 or self.stage2.batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        if not 0 <= self.model.momentum <= 1:
            raise ConfigError("model.momentum must lie in [0, 1]")
        if self.model.tau <= 0 or self.loss.tau_d <= 0:
            raise ConfigError("temperatures must be positive")
        if not 0 <= self.loss.omega_d <= 1:
            raise ConfigError("loss.omega_d must lie in [0, 1]")
        if self.sampler.tail_sampler not in ("class_aware", "uniform"):
            raise ConfigError(f"sampler.tail_sampler must be class_aware or uniform, got {self.sampler.tail_sampler!r}")
        if self.dataset.source not in ("synthetic", "file", "cifar"):
            raise ConfigError(f"dataset.source must be synthetic, file or cifar, got {self.dataset.source!r}")
        if not self.model.hidden:
            raise ConfigError("model.hidden needs at least one hidden layer")
        return self

    def replace(self, **dotted):
        """Copy with ``section__key=value`` overrides, e.g. ``replace(loss__omega_d=0)``."""
        out = copy.deepcopy(self)
        for key, value in dotted.items():
            section, _, name = key.partition("__")
            set_value(out, f"{section}.{name}", value)
        return out

    def hash(self):
        return hashlib.sha256(dumps(self).encode("utf-8")).hexdigest()[:16]


SECTIONS = [f.name for f in fields(ExperimentConfig)]


def set_value(cfg, dotted, value):
    section, _, name = dotted.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    sec = getattr(cfg, section)
    known = {f.name: f for f in fields(sec)}
    if name not in known:
        raise ConfigError(f"unknown key {name!r} in section [{section}]")
    if isinstance(value, str):
        value = _parse(value, known[name], f"{section}.{name}")
    setattr(sec, name, value)


def _parse(text, f, where):
    default = f.default_factory() if f.default is dataclasses.MISSING else f.default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            if not text:
                return []
            kind = type(default[0]) if default else float
            return [kind(v.strip()) for v in text.split(",")]
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    return str(value)


def loads(text, base=None):
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = copy.deepcopy(base) if base is not None else ExperimentConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            set_value(cfg, f"{section}.{key}", value)
    return cfg.validate()


def load(path, base=None):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), base)


def dumps(cfg):
    buf = io.StringIO()
    for section in SECTIONS:
        buf.write(f"[{section}]\n")
        sec = getattr(cfg, section)
        for f in fields(sec):
            buf.write(f"{f.name} = {_format(getattr(sec, f.name))}\n")
        buf.write("\n")
    return buf.getvalue()


def dump(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


def cifar_preset(num_classes=10):
    """Recipe used for CIFAR-LT with a desk-scale encoder."""
    cfg = ExperimentConfig()
    cfg.dataset.source = "cifar"
    cfg.dataset.num_classes = num_classes
    cfg.dataset.augment = True
    cfg.model.embed_dim = 32
    cfg.model.tau = 0.3
    cfg.loss.zero_omega_u_after_warmup = True
    cfg.schedule.warmup_epochs = 100 if num_classes == 10 else 80
    cfg.stage2.freeze_encoder = False
    cfg.stage2.encoder_lr = 0.01
    return cfg


def desk_preset():
    """Synthetic long-tailed Gaussian mixture run sized for a laptop CPU.

    Follows the CIFAR-LT recipe (tau 0.3, d_z 32, omega_u zeroed after warm-up)
    on a 10-class, 32-dimensional mixture with ~3k training examples.
    """
    cfg = ExperimentConfig()
    cfg.dataset.source = "synthetic"
    cfg.dataset.mean_scale = 3.5
    cfg.model.tau = 0.3
    cfg.loss.zero_omega_u_after_warmup = True
    cfg.model.hidden = [128]
    cfg.model.feature_dim = 64
    cfg.model.embed_dim = 32
    cfg.schedule.epochs = 60
    cfg.schedule.warmup_epochs = 30
    cfg.schedule.lr_kind = "cosine"
    cfg.schedule.lr_warmup_epochs = 0
    cfg.schedule.milestones = []
    cfg.schedule.weight_decay = 7e-4
    return cfg
