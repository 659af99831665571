"""Dataset ingestion, synthetic blobs, and client construction."""
from __future__ import annotations

import csv
import math
import struct
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import CapacityError, FormatError, InvalidLabelError, LengthMismatchError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072


# --------------------------------------------------------------------------
# file formats


def _read_idx_raw(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated magic number at offset 0")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension header at offset {len(raw)} (expected {header_end} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    for i, dim in enumerate(dims):
        if dim == 0 and i > 0:
            raise FormatError(f"{path}: zero dimension at offset {4 + 4 * i}")
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header_end
    if payload != expected:
        raise LengthMismatchError(
            f"{path}: header declares {expected} payload bytes {dims}, found {payload}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(path) -> np.ndarray:
    """Read an MNIST IDX file.

    Image files (magic 0x803) come back as an ``(n, rows*cols)`` float matrix
    scaled into [0, 1]; label files (magic 0x801) as an int64 vector.
    """
    arr = _read_idx_raw(path)
    if arr.ndim == 1:
        return arr.astype(np.int64)
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0


def load_mnist(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    x = load_idx(images_path)
    y = load_idx(labels_path)
    if x.ndim != 2 or y.ndim != 1:
        raise FormatError(f"expected an image file and a label file, got {images_path}, {labels_path}")
    if len(x) != len(y):
        raise LengthMismatchError(f"{len(x)} images but {len(y)} labels")
    return x, y


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX. 1-D arrays get the label magic, 3-D the image magic."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise FormatError("IDX writer only supports uint8 payloads")
    if array.ndim == 1:
        magic = IDX_LABELS
    elif array.ndim == 3:
        magic = IDX_IMAGES
    else:
        raise FormatError(f"IDX writer needs a 1-D or 3-D array, got {array.ndim}-D")
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(array).tobytes())


def load_cifar_binary(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a CIFAR-10 binary batch: 1 label byte + 3072 channel-major pixel bytes per record."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise InvalidLabelError(f"{path}: record {bad[0]} has label {labels[bad[0]]}")
    return rec[:, 1:].astype(np.float64) / 255.0, labels


def write_synthetic_csv(path, x: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"c{j}" for j in range(x.shape[1])])
        for lab, row in zip(labels, x):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def read_synthetic_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[0] != "label":
            raise FormatError(f"{path}: header must start with 'label'")
        rows = list(r)
    dim = len(header) - 1
    if not rows:
        return np.zeros((0, dim)), np.zeros(0, dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != dim + 1:
            raise LengthMismatchError(f"{path}: line {i + 2} has {len(row)} fields, expected {dim + 1}")
    labels = np.array([int(row[0]) for row in rows], dtype=np.int64)
    x = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
    return x, labels


# --------------------------------------------------------------------------
# synthetic data


def generate_synthetic(
    n_clusters: int,
    dim: int,
    samples_per_cluster: int,
    spread: float,
    seed: int,
    n_classes: int = 10,
    classes_per_cluster: int = 2,
    separation: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs with a cluster-specific labelling rule.

    Returns ``(x, labels, cluster_ids)``. When ``dim >= n_clusters`` the
    centres are ``separation`` times a random orthonormal frame, so every pair
    of centres sits at the same distance; otherwise they are standard normal
    draws scaled by ``separation``.

    Inside cluster ``c`` the label is ``(offset_c + bin) % n_classes`` where
    ``bin`` cuts the projection of the within-cluster deviation onto a random
    unit direction into ``classes_per_cluster`` equal-probability slabs, so
    each cluster is linearly separable into its classes.
    """
    if n_clusters < 2 or dim < 2:
        raise ValueError("need n_clusters >= 2 and dim >= 2")
    if not spread > 0:
        raise ValueError("spread must be positive")
    if samples_per_cluster < 1 or not 1 <= classes_per_cluster <= n_classes:
        raise ValueError("bad samples_per_cluster or classes_per_cluster")
    rng = np.random.default_rng(seed)
    if dim >= n_clusters:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n_clusters)))
        centers = separation * q.T
    else:
        centers = separation * rng.standard_normal((n_clusters, dim))
    directions = rng.standard_normal((n_clusters, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    offsets = rng.integers(0, n_classes, size=n_clusters)

    cuts = np.array([NormalDist().inv_cdf(i / classes_per_cluster) for i in range(1, classes_per_cluster)])

    z = rng.standard_normal((n_clusters, samples_per_cluster, dim))
    proj = np.einsum("csd,cd->cs", z, directions)
    bins = np.searchsorted(cuts, proj)
    labels = (offsets[:, None] + bins) % n_classes
    x = centers[:, None, :] + spread * z
    cluster_ids = np.repeat(np.arange(n_clusters), samples_per_cluster)
    return x.reshape(-1, dim), labels.reshape(-1).astype(np.int64), cluster_ids


# --------------------------------------------------------------------------
# clients


@dataclass(frozen=True)
class PartitionPlan:
    target_clusters: tuple[int, int, int]
    per_cluster_train: int = 400
    dissimilarity_rates: tuple[float, ...] = ()
    test_size: int = 300
    seed: int = 0

    def __post_init__(self):
        if len(set(self.target_clusters)) != len(self.target_clusters):
            raise ValueError(f"target clusters must be distinct: {self.target_clusters}")
        if self.per_cluster_train < 1 or self.test_size < 0:
            raise ValueError("counts must be positive")
        for r in self.dissimilarity_rates:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"dissimilarity rate {r} outside [0, 1]")


@dataclass
class ClientDataset:
    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    train_index: np.ndarray
    provenance: list[tuple[int, int]]
    test_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    test_y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rate: float | None = None

    def __post_init__(self):
        if len(self.train_y) == 0:
            raise ValueError(f"client {self.client_id} has an empty training set")
        total = sum(c for _, c in self.provenance)
        assert total == len(self.train_y), f"provenance sums to {total}, train has {len(self.train_y)}"

    def __len__(self) -> int:
        return len(self.train_y)


def choose_target_clusters(n_clusters: int, seed: int, count: int = 3) -> tuple[int, ...]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x7A,)))
    return tuple(int(c) for c in np.sort(rng.choice(n_clusters, size=count, replace=False)))


def _apportion(total: int, weights: Sequence[int]) -> list[int]:
    # largest remainder, ties to the earlier entry
    wsum = sum(weights)
    exact = [total * w / wsum for w in weights]
    base = [math.floor(e) for e in exact]
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[: total - sum(base)]:
        base[i] += 1
    return base


def _members(assignments: np.ndarray, cluster: int) -> np.ndarray:
    return np.flatnonzero(assignments == cluster)


def build_target_client(
    x: np.ndarray,
    y: np.ndarray,
    assignments: np.ndarray,
    plan: PartitionPlan,
    client_id: int = 0,
) -> ClientDataset:
    """Train = ``per_cluster_train`` samples from each target cluster, test in the same proportions."""
    rng = np.random.default_rng(np.random.SeedSequence(plan.seed, spawn_key=(client_id,)))
    train_counts = [plan.per_cluster_train] * len(plan.target_clusters)
    test_counts = _apportion(plan.test_size, train_counts) if plan.test_size else [0] * len(train_counts)
    train_idx, test_idx = [], []
    for c, n_tr, n_te in zip(plan.target_clusters, train_counts, test_counts):
        members = _members(assignments, c)
        if len(members) < n_tr + n_te:
            raise CapacityError(f"cluster {c} has {len(members)} samples, target needs {n_tr + n_te}")
        perm = rng.permutation(members)
        train_idx.append(perm[:n_tr])
        test_idx.append(perm[n_tr:n_tr + n_te])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return ClientDataset(
        client_id=client_id,
        train_x=x[tr], train_y=y[tr], train_index=tr,
        test_x=x[te], test_y=y[te], test_index=te,
        provenance=[(int(c), n) for c, n in zip(plan.target_clusters, train_counts)],
        rate=0.0,
    )


def _draw(rng, members: np.ndarray, count: int, exclude: np.ndarray, what: str) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if len(members) < count:
        raise CapacityError(f"{what} has {len(members)} samples, need {count}")
    free = np.setdiff1d(members, exclude, assume_unique=False)
    if len(free) >= count:
        return rng.choice(free, size=count, replace=False)
    warnings.warn(f"{what}: only {len(free)} samples disjoint from the target, reusing target samples",
                  stacklevel=3)
    return rng.choice(members, size=count, replace=False)


def build_peer_client(
    x: np.ndarray,
    y: np.ndarray,
    assignments: np.ndarray,
    plan: PartitionPlan,
    r: float,
    seed: int,
    client_id: int,
    exclude: np.ndarray | None = None,
) -> ClientDataset:
    """Peer with dissimilarity rate ``r``.

    Keeps ``floor((1-r)*per_cluster_train)`` samples from every target cluster
    and fills the rest of the ``3*per_cluster_train`` budget from one ``c_diff``
    cluster outside the target set. At ``r == 1`` the whole budget is drawn
    uniformly from the union of all non-target clusters instead.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"dissimilarity rate {r} outside [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(client_id,)))
    exclude = np.zeros(0, dtype=np.int64) if exclude is None else np.asarray(exclude)
    target = list(plan.target_clusters)
    per = plan.per_cluster_train
    budget = per * len(target)
    # negative ids mark samples withheld from client construction (e.g. the public set)
    others = np.array(sorted(c for c in set(np.unique(assignments).tolist()) - set(target) if c >= 0))
    if len(others) == 0:
        raise CapacityError("no cluster outside the target set")
    c_diff = int(rng.choice(others))

    keep = math.floor((1.0 - r) * per + 1e-9)
    chunks, provenance = [], []
    if r >= 1.0:
        pool = np.flatnonzero(np.isin(assignments, others))
        chosen = _draw(rng, pool, budget, exclude, "non-target clusters")
        chunks.append(chosen)
        ids, counts = np.unique(assignments[chosen], return_counts=True)
        provenance = [(int(c), int(n)) for c, n in zip(ids, counts)]
    else:
        for c in target:
            chunks.append(_draw(rng, _members(assignments, c), keep, exclude, f"cluster {c}"))
            provenance.append((int(c), keep))
        n_diff = budget - keep * len(target)
        chunks.append(_draw(rng, _members(assignments, c_diff), n_diff, exclude, f"cluster {c_diff}"))
        provenance.append((c_diff, n_diff))
    idx = np.concatenate(chunks).astype(np.int64)
    return ClientDataset(
        client_id=client_id,
        train_x=x[idx], train_y=y[idx], train_index=idx,
        test_x=np.zeros((0, x.shape[1])), test_y=np.zeros(0, dtype=np.int64),
        test_index=np.zeros(0, dtype=np.int64),
        provenance=provenance,
        rate=float(r),
    )


def build_cohort(
    x: np.ndarray,
    y: np.ndarray,
    assignments: np.ndarray,
    plan: PartitionPlan,
) -> tuple[ClientDataset, list[ClientDataset]]:
    """Target (client 0) plus one peer per rate in ``plan.dissimilarity_rates`` (clients 1..n)."""
    target = build_target_client(x, y, assignments, plan, client_id=0)
    taken = np.concatenate([target.train_index, target.test_index])
    peers = [
        build_peer_client(x, y, assignments, plan, r, plan.seed, client_id=i + 1, exclude=taken)
        for i, r in enumerate(plan.dissimilarity_rates)
    ]
    return target, peers
