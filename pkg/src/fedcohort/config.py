"""Run configuration: a flat dotted-key schema read from YAML.

Files may be nested (``fl: {algorithm: fedavg}``) or flat (``fl.algorithm: fedavg``);
both normalise to the same dotted keys. Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

DEFAULT_RATES = tuple(round(0.1 * i, 1) for i in range(11))
STRICT, LENIENT = 0.30, 0.60


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    path: str | None = None
    labels_path: str | None = None
    n_clusters: int = 15
    dim: int = 64
    samples_per_cluster: int = 1500
    spread: float = 1.0
    separation: float = 4.0
    n_classes: int = 10
    classes_per_cluster: int = 2


@dataclass(frozen=True)
class PartitionConfig:
    per_cluster_train: int = 400
    test_size: int = 300
    rates: tuple[float, ...] = DEFAULT_RATES
    cluster_source: str = "kmeans"


@dataclass(frozen=True)
class PcaConfig:
    n_components: int = 50
    public_size: int = 500


@dataclass(frozen=True)
class ClusteringConfig:
    k: int = 15
    max_iter: int = 300
    tol: float = 1e-6
    n_init: int = 10
    # which features the server's K-means is fit on: the clean projected pool,
    # the public anchor subset, or the pooled noisy client uploads
    fit_on: str = "pool"


@dataclass(frozen=True)
class LdpSection:
    epsilon: float | None = 10.0
    sensitivity: str = "coordinate"


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "strict"
    fraction: float = STRICT


@dataclass(frozen=True)
class FlConfig:
    algorithm: str = "fedavg"
    mu: float = 0.01
    lam: float = 0.01
    k: int = 4
    rounds: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    hidden: int = 64
    features: str = "raw"


@dataclass(frozen=True)
class AttackConfig:
    n: int = 200
    alpha: float = 0.05
    rounds: int = 50
    epsilons: tuple[float | None, ...] = (0.1, 1.0, 10.0, 100.0, 1000.0)
    noise: str = "per_round"


@dataclass(frozen=True)
class GridConfig:
    repeats: int = 1
    epsilons: tuple[float | None, ...] = (0.1, 1.0, 10.0, None)
    algorithms: tuple[str, ...] = ("fedavg", "fedprox", "feddyn")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = DatasetConfig()
    partition: PartitionConfig = PartitionConfig()
    pca: PcaConfig = PcaConfig()
    clustering: ClusteringConfig = ClusteringConfig()
    ldp: LdpSection = LdpSection()
    policy: PolicyConfig = PolicyConfig()
    fl: FlConfig = FlConfig()
    attack: AttackConfig = AttackConfig()
    grid: GridConfig = GridConfig()
    seed: int | None = None
    explicit: frozenset = field(default=frozenset(), compare=False, repr=False)


# --------------------------------------------------------------------------
# value coercion


def _int(lo: int | None = None) -> Callable[[str, Any], int]:
    def conv(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (isinstance(v, float) and not v.is_integer()):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        v = int(v)
        if lo is not None and v < lo:
            raise ConfigError(f"{key}: {v} is below the minimum {lo}")
        return v
    return conv


def _float(lo: float | None = None, hi: float | None = None, open_lo: bool = False) -> Callable:
    def conv(key, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(f"{key}: must be finite, got {v}")
        if lo is not None and (v <= lo if open_lo else v < lo):
            raise ConfigError(f"{key}: {v} must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"{key}: {v} must be <= {hi}")
        return v
    return conv


def _epsilon(key, v):
    if v is None or (isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "none", "off")):
        return None
    if isinstance(v, float) and math.isinf(v) and v > 0:
        return None
    return _float(0.0, open_lo=True)(key, v)


def _choice(*options: str) -> Callable:
    def conv(key, v):
        if v not in options:
            raise ConfigError(f"{key}: {v!r} is not one of {', '.join(options)}")
        return v
    return conv


def _str_or_none(key, v):
    if v is None:
        return None
    if not isinstance(v, str):
        raise ConfigError(f"{key}: expected a string path, got {v!r}")
    return v


def _list(item: Callable) -> Callable:
    def conv(key, v):
        if not isinstance(v, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {v!r}")
        return tuple(item(f"{key}[{i}]", x) for i, x in enumerate(v))
    return conv


def _seed(key, v):
    if v is None:
        return None
    return _int(0)(key, v)


# dotted key -> (section attr or None, field name, converter)
SCHEMA: dict[str, tuple[str | None, str, Callable]] = {
    "seed": (None, "seed", _seed),
    "dataset.source": ("dataset", "source", _choice("synthetic", "idx", "cifar", "csv")),
    "dataset.path": ("dataset", "path", _str_or_none),
    "dataset.labels_path": ("dataset", "labels_path", _str_or_none),
    "dataset.n_clusters": ("dataset", "n_clusters", _int(2)),
    "dataset.dim": ("dataset", "dim", _int(2)),
    "dataset.samples_per_cluster": ("dataset", "samples_per_cluster", _int(1)),
    "dataset.spread": ("dataset", "spread", _float(0.0, open_lo=True)),
    "dataset.separation": ("dataset", "separation", _float(0.0, open_lo=True)),
    "dataset.n_classes": ("dataset", "n_classes", _int(2)),
    "dataset.classes_per_cluster": ("dataset", "classes_per_cluster", _int(1)),
    "partition.per_cluster_train": ("partition", "per_cluster_train", _int(1)),
    "partition.test_size": ("partition", "test_size", _int(0)),
    "partition.rates": ("partition", "rates", _list(_float(0.0, 1.0))),
    "partition.cluster_source": ("partition", "cluster_source", _choice("kmeans", "generator")),
    "pca.n_components": ("pca", "n_components", _int(1)),
    "pca.public_size": ("pca", "public_size", _int(2)),
    "clustering.k": ("clustering", "k", _int(1)),
    "clustering.max_iter": ("clustering", "max_iter", _int(1)),
    "clustering.tol": ("clustering", "tol", _float(0.0)),
    "clustering.n_init": ("clustering", "n_init", _int(1)),
    "clustering.fit_on": ("clustering", "fit_on", _choice("pool", "public", "noisy")),
    "ldp.epsilon": ("ldp", "epsilon", _epsilon),
    "ldp.sensitivity": ("ldp", "sensitivity", _choice("coordinate", "global")),
    "policy.kind": ("policy", "kind", _choice("strict", "lenient", "custom")),
    "policy.fraction": ("policy", "fraction", _float(0.0, 1.0, open_lo=True)),
    "fl.algorithm": ("fl", "algorithm", _choice("fedavg", "fedprox", "feddyn", "ifca")),
    "fl.mu": ("fl", "mu", _float(0.0)),
    "fl.lambda": ("fl", "lam", _float(0.0)),
    "fl.k": ("fl", "k", _int(1)),
    "fl.rounds": ("fl", "rounds", _int(0)),
    "fl.learning_rate": ("fl", "learning_rate", _float(0.0, open_lo=True)),
    "fl.batch_size": ("fl", "batch_size", _int(1)),
    "fl.epochs": ("fl", "epochs", _int(1)),
    "fl.hidden": ("fl", "hidden", _int(1)),
    "fl.features": ("fl", "features", _choice("raw", "pca")),
    "attack.n": ("attack", "n", _int(1)),
    "attack.alpha": ("attack", "alpha", _float(0.0, 1.0, open_lo=True)),
    "attack.rounds": ("attack", "rounds", _int(1)),
    "attack.epsilons": ("attack", "epsilons", _list(_epsilon)),
    "attack.noise": ("attack", "noise", _choice("per_round", "release")),
    "grid.repeats": ("grid", "repeats", _int(1)),
    "grid.epsilons": ("grid", "epsilons", _list(_epsilon)),
    "grid.algorithms": ("grid", "algorithms", _list(_choice("fedavg", "fedprox", "feddyn", "ifca"))),
}


def _flatten(tree: Any, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"expected a mapping at {prefix or 'top level'}, got {type(tree).__name__}")
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_yaml_value(text: str) -> Any:
    return yaml.safe_load(text)


def build_config(values: dict[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply dotted-key ``values`` on top of ``base`` (defaults if omitted), validating each."""
    cfg = base or ExperimentConfig()
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key, raw in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        section, name, conv = SCHEMA[key]
        v = conv(key, raw)
        if section is None:
            top[name] = v
        else:
            sections.setdefault(section, {})[name] = v

    pol = sections.get("policy", {})
    if "kind" in pol or "fraction" in pol:
        kind = pol.get("kind", "custom" if "fraction" in pol else cfg.policy.kind)
        presets = {"strict": STRICT, "lenient": LENIENT}
        if kind in presets:
            if "fraction" in pol and abs(pol["fraction"] - presets[kind]) > 1e-12:
                raise ConfigError(f"policy.fraction={pol['fraction']} contradicts policy.kind={kind} ({presets[kind]})")
            pol["fraction"] = presets[kind]
        pol["kind"] = kind
        if kind == "custom" and "fraction" not in pol:
            pol["fraction"] = cfg.policy.fraction

    new = {name: replace(getattr(cfg, name), **kv) for name, kv in sections.items()}
    new.update(top)
    ds = new.get("dataset", cfg.dataset)
    if ds.classes_per_cluster > ds.n_classes:
        raise ConfigError("dataset.classes_per_cluster must be <= dataset.n_classes")
    if ds.source != "synthetic" and not ds.path:
        raise ConfigError(f"dataset.path is required for dataset.source={ds.source}")
    if ds.source == "idx" and not ds.labels_path:
        raise ConfigError("dataset.labels_path is required for IDX images")
    return replace(cfg, **new, explicit=frozenset(cfg.explicit | set(values)))


def parse_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a YAML config file; ``overrides`` are ``key=value`` strings applied last."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    values = _flatten(tree or {})
    values.update(parse_overrides(overrides or []))
    return build_config(values)


def parse_overrides(items: list[str]) -> dict[str, Any]:
    """``["fl.mu=0.1", ...]`` to a dotted-key dict; later items win."""
    values = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        values[k.strip()] = parse_yaml_value(v)
    return values


def to_values(cfg: ExperimentConfig) -> dict[str, Any]:
    """Flat dotted-key view of every setting, the inverse of :func:`build_config`."""
    out = {}
    for key, (section, name, _) in SCHEMA.items():
        v = getattr(cfg, name) if section is None else getattr(getattr(cfg, section), name)
        if key in ("ldp.epsilon",):
            v = "inf" if v is None else v
        elif key in ("attack.epsilons", "grid.epsilons"):
            v = ["inf" if e is None else e for e in v]
        elif isinstance(v, tuple):
            v = list(v)
        out[key] = v
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_values(cfg), sort_keys=True, default_flow_style=None)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()


def with_defaults(cfg: ExperimentConfig, preset: dict[str, Any]) -> ExperimentConfig:
    """Fill ``preset`` values into keys the user did not set explicitly."""
    fill = {k: v for k, v in preset.items() if k not in cfg.explicit}
    if not fill:
        return cfg
    out = build_config(fill, cfg)
    return replace(out, explicit=cfg.explicit)

