"""Laplace-mechanism LDP on projected features and the nearest-neighbour membership attack."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import min_distance


@dataclass(frozen=True)
class LdpConfig:
    """Privacy budget. ``epsilon=None`` means no noise at all."""

    epsilon: float | None
    seed: int = 0
    sensitivity: str = "coordinate"  # or "global"

    def __post_init__(self):
        if self.epsilon is not None and not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be finite and > 0 (use None for no noise), got {self.epsilon}")
        if self.sensitivity not in ("coordinate", "global"):
            raise ValueError(f"unknown sensitivity mode {self.sensitivity!r}")

    @property
    def no_noise(self) -> bool:
        return self.epsilon is None


def derive_rng(base_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for ``(base_seed, *key)``, e.g. ``(seed, client_id, round)``."""
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=tuple(int(k) for k in key)))


def sensitivity_l1(features: np.ndarray) -> np.ndarray:
    """Coordinate-wise range ``max_i x_ij - min_i x_ij``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("sensitivity needs a non-empty 2-D feature matrix")
    return x.max(axis=0) - x.min(axis=0)


def sensitivity_global(features: np.ndarray, block: int = 256) -> np.ndarray:
    """Largest L1 distance between any two rows, broadcast to every coordinate."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("sensitivity needs a non-empty 2-D feature matrix")
    best = 0.0
    for lo in range(0, len(x), block):
        d = np.abs(x[lo:lo + block, None, :] - x[None, :, :]).sum(axis=2)
        best = max(best, float(d.max()))
    return np.full(x.shape[1], best)


def sensitivity(features: np.ndarray, mode: str = "coordinate") -> np.ndarray:
    if mode == "coordinate":
        return sensitivity_l1(features)
    if mode == "global":
        return sensitivity_global(features)
    raise ValueError(f"unknown sensitivity mode {mode!r}")


def laplace_icdf(u: np.ndarray, scale: np.ndarray | float) -> np.ndarray:
    """Map uniforms in (0, 1) to Laplace(0, scale) by the inverse CDF."""
    u = np.asarray(u, dtype=np.float64)
    lower = u < 0.5
    mag = np.where(lower, np.log(2.0 * np.where(lower, u, 0.25)), -np.log(2.0 - 2.0 * np.where(lower, 0.75, u)))
    return np.asarray(scale) * mag


def _open_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    # random() is [0, 1); nudge the single excluded endpoint
    return np.where(u == 0.0, np.finfo(np.float64).tiny, u)


def add_laplace_noise(
    features: np.ndarray,
    sens: np.ndarray,
    cfg: LdpConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Perturb every entry with independent ``Laplace(0, s_j / epsilon)`` noise."""
    x = np.asarray(features, dtype=np.float64)
    sens = np.asarray(sens, dtype=np.float64)
    if sens.shape != (x.shape[1],):
        raise ValueError(f"sensitivity has shape {sens.shape}, features have {x.shape[1]} columns")
    if np.any(sens < 0):
        raise ValueError("sensitivity entries must be non-negative")
    if cfg.no_noise:
        return x.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    noise = laplace_icdf(_open_uniform(rng, x.shape), sens / cfg.epsilon)
    return x + noise


def privatize(features: np.ndarray, cfg: LdpConfig, client_id: int, round_index: int = 0) -> np.ndarray:
    """Client-side LDP: sensitivity from the client's own features, noise from its own stream."""
    if cfg.no_noise:
        return np.asarray(features, dtype=np.float64).copy()
    sens = sensitivity(features, cfg.sensitivity)
    return add_laplace_noise(features, sens, cfg, derive_rng(cfg.seed, client_id, round_index))


# --------------------------------------------------------------------------
# membership inference


@dataclass
class MiaRound:
    power: float
    fpr: float
    threshold: float
    member_distances: np.ndarray
    control_distances: np.ndarray


@dataclass
class AttackReport:
    epsilon: float | None
    rounds: int
    alpha: float
    power_mean: float
    power_std: float
    fpr_realized: float
    raw: list[MiaRound] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {
            "epsilon": "inf" if self.epsilon is None else self.epsilon,
            "rounds": self.rounds,
            "alpha": self.alpha,
            "power_mean": self.power_mean,
            "power_std": self.power_std,
            "fpr_realized": self.fpr_realized,
        }


def quantile_threshold(control: np.ndarray, alpha: float) -> float:
    """The ``ceil(alpha*m)``-th smallest control distance."""
    m = len(control)
    k = max(1, math.ceil(alpha * m - 1e-9))
    return float(np.sort(control)[k - 1])


def mia_round(
    X: np.ndarray,
    n: int,
    alpha: float,
    cfg: LdpConfig,
    round_seed: int,
    released: np.ndarray | None = None,
) -> MiaRound:
    """One round of the distance attack against a Laplace-perturbed reference set.

    ``X`` is split in half into a reference set A and a held-out set B. A is
    perturbed with coordinate-wise Laplace noise (sensitivity taken from A)
    into A~. Up to ``n`` members from A are the cases and up to ``n`` points
    from B, which are not in A, are the controls. The threshold is the
    alpha-quantile of control distances to A~; power is the fraction of
    members within it.

    ``released`` is an already-noised copy of ``X`` (one row per row of X).
    When given, A~ is taken from its rows instead of re-noising A, which
    models a client that uploads its representation once.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 4:
        raise ValueError("membership attack needs at least 4 rows")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(round_seed)
    half = len(X) // 2
    perm = rng.permutation(len(X))
    if released is not None and np.shape(released) != X.shape:
        raise ValueError(f"released copy has shape {np.shape(released)}, expected {X.shape}")
    A, B = X[perm[:half]], X[perm[half:2 * half]]
    m = min(n, half)
    if n > half:
        warnings.warn(f"n={n} exceeds the half size {half}; using {m}", stacklevel=2)
    cases = A[rng.choice(half, size=m, replace=False)]
    controls = B[rng.choice(half, size=m, replace=False)]
    if released is None:
        A_noisy = add_laplace_noise(A, sensitivity(A, cfg.sensitivity), cfg, rng)
    else:
        A_noisy = np.asarray(released, dtype=np.float64)[perm[:half]]
    d_case = min_distance(cases, A_noisy)
    d_ctrl = min_distance(controls, A_noisy)
    gamma = quantile_threshold(d_ctrl, alpha)
    return MiaRound(
        power=float(np.mean(d_case <= gamma)),
        fpr=float(np.mean(d_ctrl <= gamma)),
        threshold=gamma,
        member_distances=d_case,
        control_distances=d_ctrl,
    )


def round_seed(seed: int, round_index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0x4D1A, round_index)).generate_state(1, np.uint64)[0])


def mia_power_curve(
    X: np.ndarray,
    n: int,
    alpha: float,
    epsilons: list[float | None],
    rounds: int,
    seed: int,
    sensitivity_mode: str = "coordinate",
    noise: str = "per_round",
) -> list[AttackReport]:
    """Aggregate ``rounds`` attack rounds per epsilon.

    Round ``t`` uses the same split and noise stream for every epsilon, so the
    curve compares budgets on common random numbers. ``noise="per_round"``
    re-noises the reference half every round; ``noise="release"`` noises all
    of ``X`` once per epsilon (sensitivity from X) and every round attacks
    that single release.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if noise not in ("per_round", "release"):
        raise ValueError(f"unknown noise mode {noise!r}")
    reports = []
    for eps in epsilons:
        cfg = LdpConfig(eps, seed, sensitivity_mode)
        released = None
        if noise == "release":
            X = np.asarray(X, dtype=np.float64)
            released = add_laplace_noise(X, sensitivity(X, sensitivity_mode), cfg, derive_rng(seed, 0x5E1E))
        raw = [mia_round(X, n, alpha, cfg, round_seed(seed, t), released) for t in range(rounds)]
        powers = np.array([r.power for r in raw])
        reports.append(AttackReport(
            epsilon=eps,
            rounds=rounds,
            alpha=alpha,
            power_mean=float(powers.mean()),
            power_std=float(powers.std()),
            fpr_realized=float(np.mean([r.fpr for r in raw])),
            raw=raw,
        ))
    return reports
