"""Experiment configuration: nested YAML sections with strict key checking.

Every section is a dataclass; unknown keys anywhere raise ``ConfigError``.
``dump_config`` writes a file that ``load_config`` reads back to an equal
object, so a run can be reproduced from its echoed config.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .errors import ConfigError

KINDS = ("regress-synthetic", "regress-vectorfield", "bayesopt", "embed-regress", "gradcheck")
GVF_KINDS = ("hodge", "projected", "frame")
FAMILIES = ("iv", "il")


@dataclass
class ModelConfig:
    """Architecture.  ``layers`` may be a list for sweeps."""

    layers: object = 1
    gvf: str = "hodge"
    family: str = "iv"
    head: str = "scalar"
    head_family: str = None
    K: int = 5
    head_K: int = 6
    inducing_degree: int = None
    num_inducing: int = 49
    nu: float = 1.5
    train_nu: bool = True
    extended: bool = False
    noise_var: float = 1e-2


@dataclass
class TrainingConfig:
    iters: int = 1000
    lr: float = 0.01
    batch_size: int = None
    samples: int = 3
    eval_samples: int = 10


@dataclass
class DataConfig:
    """Dataset source.  ``n_train`` may be a list for sweeps."""

    n_train: object = 100
    n_test: int = 5000
    noise_var: float = 1e-4
    csv: str = None
    test_csv: str = None
    test_fraction: float = 0.2
    input_dim: int = 2
    bias: float = 1.0


@dataclass
class AcquisitionSection:
    num_samples: int = 32
    lattice: int = 2000
    starts: int = 20
    steps: int = 100
    step_size: float = 0.05


@dataclass
class BayesoptSection:
    target: str = "bo_target"
    d: int = 2
    iterations: int = 200
    switch_at: int = 180
    num_initial: int = 5
    fit_iters: int = 500
    lr: float = 0.01
    K: int = 10
    nu: float = 2.5
    deep_layers: int = 2
    deep_gvf: str = "projected"
    deep_inducing: int = 30
    compare: bool = True
    acquisition: AcquisitionSection = field(default_factory=AcquisitionSection)


@dataclass
class GradcheckSection:
    n: int = 16
    step: float = 1e-5
    tolerance: float = 1e-4


@dataclass
class ExperimentConfig:
    kind: str = "regress-synthetic"
    seed: int = 0
    seeds: int = 1
    out: str = "results"
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    bayesopt: BayesoptSection = field(default_factory=BayesoptSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    def seed_list(self):
        return [self.seed + i for i in range(self.seeds)]


def _build(cls, raw, path):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = f" in [{path}]" if path else ""
        raise ConfigError(f"unknown key(s){where}: {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in raw.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _as_list(value, name):
    values = value if isinstance(value, (list, tuple)) else [value]
    if not values:
        raise ConfigError(f"{name} must not be empty")
    return [int(v) for v in values]


def validate(cfg):
    """Cross-field checks; returns ``cfg``."""
    if cfg.kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}, not {cfg.kind!r}")
    if cfg.seeds < 1:
        raise ConfigError("seeds must be at least 1")
    m, t, d = cfg.model, cfg.training, cfg.data
    layers = _as_list(m.layers, "model.layers")
    if min(layers) < 1:
        raise ConfigError("model.layers must be positive")
    if m.gvf not in GVF_KINDS:
        raise ConfigError(f"model.gvf must be one of {', '.join(GVF_KINDS)}")
    for name in ("family", "head_family"):
        value = getattr(m, name)
        if value is not None and value not in FAMILIES:
            raise ConfigError(f"model.{name} must be 'iv' or 'il'")
    if m.head not in ("scalar", "vector"):
        raise ConfigError("model.head must be 'scalar' or 'vector'")
    if m.K < 0 or (m.head_K is not None and m.head_K < 0):
        raise ConfigError("truncation degrees must be nonnegative")
    if m.inducing_degree is not None and not 0 <= m.inducing_degree <= m.K:
        raise ConfigError("model.inducing_degree must lie in [0, K]")
    if m.num_inducing < 1:
        raise ConfigError("model.num_inducing must be positive")
    if not m.nu > 0 or not m.noise_var > 0:
        raise ConfigError("model.nu and model.noise_var must be positive")
    if t.iters < 0 or not t.lr > 0 or t.samples < 1 or t.eval_samples < 1:
        raise ConfigError("invalid training section")
    if t.batch_size is not None and t.batch_size < 1:
        raise ConfigError("training.batch_size must be positive")
    if min(_as_list(d.n_train, "data.n_train")) < 1 or d.n_test < 1:
        raise ConfigError("data sizes must be positive")
    if d.noise_var < 0:
        raise ConfigError("data.noise_var must be nonnegative")
    if not 0.0 < d.test_fraction < 1.0:
        raise ConfigError("data.test_fraction must lie in (0, 1)")
    if cfg.kind == "regress-vectorfield":
        if d.csv is None:
            raise ConfigError("regress-vectorfield needs data.csv")
        if m.head != "vector":
            raise ConfigError("regress-vectorfield needs model.head = vector")
    if cfg.kind == "embed-regress" and d.input_dim < 1:
        raise ConfigError("data.input_dim must be positive")
    b = cfg.bayesopt
    if b.iterations < 0 or b.num_initial < 1 or b.fit_iters < 0:
        raise ConfigError("invalid bayesopt section")
    if b.switch_at is not None and b.switch_at < 0:
        raise ConfigError("bayesopt.switch_at must be nonnegative")
    if b.deep_gvf not in GVF_KINDS:
        raise ConfigError(f"bayesopt.deep_gvf must be one of {', '.join(GVF_KINDS)}")
    a = b.acquisition
    if min(a.num_samples, a.lattice, a.starts) < 1 or a.steps < 0 or not a.step_size > 0:
        raise ConfigError("invalid bayesopt.acquisition section")
    if cfg.gradcheck.n < 1 or not cfg.gradcheck.step > 0:
        raise ConfigError("invalid gradcheck section")
    return cfg


def config_from_dict(raw):
    return validate(_build(ExperimentConfig, raw, ""))


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed config {path}: {err}") from err
    return config_from_dict(raw)


def config_to_dict(cfg):
    return asdict(cfg)


def dump_config(cfg, path=None):
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
