"""Small dense classifier, local SGD, and the FedAvg / FedProx / FedDyn / IFCA server rules."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from itertools import pairwise
from pathlib import Path

import numpy as np

from .errors import DivergenceError, FormatError, ShapeError


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        size = sum(int(np.prod(s)) for _, s in self.layout)
        if size != len(self.values):
            raise ShapeError(f"layout describes {size} values, got {len(self.values)}")

    def tensors(self) -> list[np.ndarray]:
        out, pos = [], 0
        for _, shape in self.layout:
            size = int(np.prod(shape))
            out.append(self.values[pos:pos + size].reshape(shape))
            pos += size
        return out

    def with_values(self, values: np.ndarray) -> ModelParams:
        return ModelParams(np.asarray(values, dtype=np.float64), self.layout)

    def copy(self) -> ModelParams:
        return ModelParams(self.values.copy(), self.layout)


@dataclass(frozen=True)
class LocalSpec:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs_per_round: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.epochs_per_round > 0):
            raise ValueError("learning_rate, batch_size and epochs_per_round must be positive")


@dataclass(frozen=True)
class Prox:
    mu: float
    anchor: np.ndarray


@dataclass(frozen=True)
class Dyn:
    h: np.ndarray
    lam: float
    anchor: np.ndarray | None = None  # carried for symmetry with Prox; the objective ignores it


@dataclass
class FedDynState:
    h: np.ndarray
    lam: float = 0.01


@dataclass
class RoundResult:
    round: int
    global_params: ModelParams
    per_client_params: list[ModelParams]
    target_test_accuracy: float
    assignments: list[int] | None = None


def save_params(params: ModelParams, directory) -> list[Path]:
    """``model_layout.txt`` (one ``name dims`` line per tensor) plus ``model_values.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layout = directory / "model_layout.txt"
    values = directory / "model_values.csv"
    layout.write_text("".join(f"{name} {'x'.join(str(d) for d in shape)}\n" for name, shape in params.layout))
    values.write_text("".join(repr(float(v)) + "\n" for v in params.values))
    return [layout, values]


def load_params(directory) -> ModelParams:
    directory = Path(directory)
    layout = []
    for ln in (directory / "model_layout.txt").read_text().splitlines():
        parts = ln.split()
        if len(parts) != 2:
            raise FormatError(f"{directory}: bad layout line {ln!r}")
        layout.append((parts[0], tuple(int(d) for d in parts[1].split("x"))))
    values = np.array([float(v) for v in (directory / "model_values.csv").read_text().split()], dtype=np.float64)
    return ModelParams(values, tuple(layout))


# --------------------------------------------------------------------------
# model


def model_init(widths: Sequence[int], seed: int) -> ModelParams:
    """Dense ReLU net ``widths[0] -> ... -> widths[-1]``, PyTorch-style uniform init."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"every layer width must be >= 1, got {widths}")
    rng = np.random.default_rng(seed)
    layout, chunks = [], []
    for li, (fan_in, fan_out) in enumerate(pairwise(widths)):
        bound = 1.0 / np.sqrt(fan_in)
        layout += [(f"W{li}", (fan_in, fan_out)), (f"b{li}", (fan_out,))]
        chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, fan_out))
    return ModelParams(np.concatenate(chunks), tuple(layout))


def widths_of(params: ModelParams) -> list[int]:
    shapes = [s for name, s in params.layout if name.startswith("W")]
    return [shapes[0][0]] + [s[1] for s in shapes]


def logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    t = params.tensors()
    a = np.asarray(x, dtype=np.float64)
    n_layers = len(t) // 2
    for li in range(n_layers):
        a = a @ t[2 * li] + t[2 * li + 1]
        if li < n_layers - 1:
            a = np.maximum(a, 0.0)
    return a


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def data_loss(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy, no regulariser."""
    lp = _log_softmax(logits(params, x))
    return float(-lp[np.arange(len(y)), y].mean())


def objective(params: ModelParams, x, y, mode: Prox | Dyn | None = None) -> float:
    w = params.values
    loss = data_loss(params, x, y)
    if isinstance(mode, Prox):
        d = w - mode.anchor
        loss += 0.5 * mode.mu * float(d @ d)
    elif isinstance(mode, Dyn):
        loss += -float(mode.h @ w) + 0.5 * mode.lam * float(w @ w)
    return loss


def loss_and_grad(params: ModelParams, x, y, mode: Prox | Dyn | None = None) -> tuple[float, np.ndarray]:
    """Objective value and its exact gradient with respect to the flat parameter vector."""
    t = params.tensors()
    n_layers = len(t) // 2
    acts = [np.asarray(x, dtype=np.float64)]
    for li in range(n_layers):
        z = acts[-1] @ t[2 * li] + t[2 * li + 1]
        acts.append(np.maximum(z, 0.0) if li < n_layers - 1 else z)
    lp = _log_softmax(acts[-1])
    n = len(y)
    rows = np.arange(n)
    loss = float(-lp[rows, y].mean())

    delta = np.exp(lp)
    delta[rows, y] -= 1.0
    delta /= n
    grads = [None] * len(t)
    for li in range(n_layers - 1, -1, -1):
        grads[2 * li] = acts[li].T @ delta
        grads[2 * li + 1] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ t[2 * li].T) * (acts[li] > 0)
    g = np.concatenate([gr.ravel() for gr in grads])

    w = params.values
    if isinstance(mode, Prox) and mode.mu:
        d = w - mode.anchor
        loss += 0.5 * mode.mu * float(d @ d)
        g += mode.mu * d
    elif isinstance(mode, Dyn) and (mode.lam or np.any(mode.h)):
        loss += -float(mode.h @ w) + 0.5 * mode.lam * float(w @ w)
        g += mode.lam * w - mode.h
    return loss, g


def _check_mode(params: ModelParams, mode) -> None:
    if isinstance(mode, Prox) and len(mode.anchor) != len(params.values):
        raise ShapeError("prox anchor length differs from the parameter vector")
    if isinstance(mode, Dyn) and len(mode.h) != len(params.values):
        raise ShapeError("control variate length differs from the parameter vector")


def local_train(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    spec: LocalSpec,
    mode: Prox | Dyn | None = None,
    rng: np.random.Generator | None = None,
) -> ModelParams:
    """Mini-batch SGD for ``spec.epochs_per_round`` passes over ``(x, y)``."""
    _check_mode(params, mode)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    w = params.values.copy()
    cur = params.with_values(w)
    n = len(y)
    batch = 0
    for _ in range(spec.epochs_per_round):
        order = rng.permutation(n)
        for lo in range(0, n, spec.batch_size):
            idx = order[lo:lo + spec.batch_size]
            loss, g = loss_and_grad(cur, x[idx], y[idx], mode)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite loss at batch {batch}", batch_index=batch)
            w -= spec.learning_rate * g
            batch += 1
    return cur


def evaluate(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy; ties between logits go to the lowest class index."""
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    pred = np.argmax(logits(params, x), axis=1)
    return float(np.mean(pred == np.asarray(y)))


# --------------------------------------------------------------------------
# server rules


def fedavg_aggregate(updates: Sequence[tuple[ModelParams, int]]) -> ModelParams:
    """Dataset-size weighted mean ``sum_k (n_k / n) w_k``.

    Accumulated as ``w_0 + sum_k (n_k / n)(w_k - w_0)`` so identical inputs
    come back bit for bit.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    layout = updates[0][0].layout
    for p, n_k in updates:
        if p.layout != layout:
            raise ShapeError("all updates must share one layout")
        if n_k <= 0:
            raise ValueError("client sizes must be positive")
    total = sum(n_k for _, n_k in updates)
    base = updates[0][0].values
    out = base.copy()
    for p, n_k in updates[1:]:
        out += (n_k / total) * (p.values - base)
    # the first client's own term is (n_0/n)(w_0 - w_0) = 0
    return ModelParams(out, layout)


def feddyn_server_update(
    updates: Sequence[tuple[ModelParams, int]],
    states: Sequence[FedDynState],
    prev_global: ModelParams,
    lam: float,
) -> tuple[ModelParams, list[FedDynState]]:
    """``h_k <- h_k - lam (w_k - w^t)`` for every participant, global = weighted mean."""
    if len(updates) != len(states):
        raise ValueError("one FedDyn state per update required")
    new_states = []
    for (p, _), st in zip(updates, states):
        if lam:
            new_states.append(FedDynState(st.h - lam * (p.values - prev_global.values), lam))
        else:
            new_states.append(FedDynState(st.h.copy(), lam))
    return fedavg_aggregate(updates), new_states


def client_rng(seed: int, client_id: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xF1, int(client_id), int(round_index))))


def ifca_round(
    cluster_models: Sequence[ModelParams],
    clients: Sequence,
    spec: LocalSpec,
    round_index: int = 0,
) -> tuple[list[ModelParams], list[int]]:
    """One IFCA round: pick the lowest-loss model, train it locally, average per cluster.

    ``clients`` items need ``client_id``, ``train_x`` and ``train_y``. A
    cluster nobody picked keeps its previous model unchanged.
    """
    if not cluster_models:
        raise ValueError("IFCA needs at least one cluster model")
    assignments, trained = [], []
    for c in clients:
        losses = [data_loss(m, c.train_x, c.train_y) for m in cluster_models]
        j = int(np.argmin(losses))
        assignments.append(j)
        rng = client_rng(spec.seed, c.client_id, round_index)
        trained.append((local_train(cluster_models[j], c.train_x, c.train_y, spec, None, rng), len(c.train_y)))
    out = []
    for j, model in enumerate(cluster_models):
        members = [u for u, a in zip(trained, assignments) if a == j]
        out.append(fedavg_aggregate(members) if members else model)
    return out, assignments


# --------------------------------------------------------------------------
# federation driver


@dataclass(frozen=True)
class Algorithm:
    name: str = "fedavg"  # fedavg | fedprox | feddyn | ifca
    mu: float = 0.01
    lam: float = 0.01
    k: int = 4

    def __post_init__(self):
        if self.name not in ("fedavg", "fedprox", "feddyn", "ifca"):
            raise ValueError(f"unknown algorithm {self.name!r}")
        if self.mu < 0 or self.lam < 0 or self.k < 1:
            raise ValueError("mu, lambda must be >= 0 and k >= 1")


def federate(
    init: ModelParams | Sequence[ModelParams],
    clients: Sequence,
    target,
    algorithm: Algorithm,
    spec: LocalSpec,
    rounds: int,
) -> list[RoundResult]:
    """Full-participation federation; returns round 0 (initial model) through ``rounds``.

    ``clients`` must contain ``target``. For IFCA, ``init`` is the list of
    cluster models and the reported global model is whichever one the target
    would pick by training loss.
    """
    ids = [c.client_id for c in clients]
    if target.client_id not in ids:
        raise ValueError("the target must take part in its own federation")

    if algorithm.name == "ifca":
        models = list(init) if isinstance(init, (list, tuple)) else [init]

        def target_view(ms):
            j = int(np.argmin([data_loss(m, target.train_x, target.train_y) for m in ms]))
            return ms[j]

        g = target_view(models)
        results = [RoundResult(0, g, [], evaluate(g, target.test_x, target.test_y))]
        for t in range(1, rounds + 1):
            try:
                models, assign = ifca_round(models, clients, spec, t)
            except DivergenceError as exc:
                exc.round_index = t
                raise
            g = target_view(models)
            results.append(RoundResult(t, g, list(models), evaluate(g, target.test_x, target.test_y), assign))
        return results

    g = init
    states = [FedDynState(np.zeros_like(g.values), algorithm.lam) for _ in clients]
    results = [RoundResult(0, g, [], evaluate(g, target.test_x, target.test_y))]
    for t in range(1, rounds + 1):
        updates = []
        for c, st in zip(clients, states):
            if algorithm.name == "fedprox":
                mode = Prox(algorithm.mu, g.values)
            elif algorithm.name == "feddyn":
                mode = Dyn(st.h, algorithm.lam, g.values)
            else:
                mode = None
            rng = client_rng(spec.seed, c.client_id, t)
            try:
                p = local_train(g, c.train_x, c.train_y, spec, mode, rng)
            except DivergenceError as exc:
                exc.round_index = t
                raise
            updates.append((p, len(c.train_y)))
        if algorithm.name == "feddyn":
            new_g, states = feddyn_server_update(updates, states, g, algorithm.lam)
        else:
            new_g = fedavg_aggregate(updates)
        g = new_g
        results.append(RoundResult(t, g, [u for u, _ in updates], evaluate(g, target.test_x, target.test_y)))
    return results
