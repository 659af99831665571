"""Shared PCA anchor: fit on public data, project client data into its space."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (n_components, d), rows orthonormal
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    rank_deficient: bool = False

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude coordinate of each row made positive; first index wins ties
    pivot = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), pivot])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def pca_fit(public_data: np.ndarray, n_components: int = 50) -> PcaModel:
    """Top eigenvectors of the sample covariance (1/(n-1)), eigenvalue-descending."""
    x = np.asarray(public_data, dtype=np.float64)
    n, d = x.shape
    if not 1 <= n_components <= d:
        raise ShapeError(f"n_components={n_components} must lie in [1, {d}]")
    if n <= n_components:
        raise ShapeError(f"need more than {n_components} rows, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    tol = max(total, 1.0) * d * np.finfo(np.float64).eps
    evals = np.where(evals > tol, evals, 0.0)
    kept = evals[:n_components]
    rank_deficient = bool(np.count_nonzero(kept) < n_components)
    if rank_deficient:
        warnings.warn(
            f"covariance has rank {np.count_nonzero(evals)} < {n_components}; "
            "surplus components are an orthonormal completion with zero variance",
            stacklevel=2,
        )
    ratio = kept / total if total > 0 else np.zeros_like(kept)
    return PcaModel(
        mean=mean,
        components=_fix_signs(evecs[:, :n_components].T.copy()),
        explained_variance=kept,
        explained_variance_ratio=ratio,
        rank_deficient=rank_deficient,
    )


def pca_project(model: PcaModel, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.dim:
        raise ShapeError(f"data has shape {data.shape}, model expects {model.dim} columns")
    return (data - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores) @ model.components + model.mean


def elbow_scan(data: np.ndarray, candidates: list[int]) -> list[tuple[int, float]]:
    """Cumulative explained variance for each candidate component count.

    No count is picked automatically; the table is meant for a human or a config file.
    """
    if list(candidates) != sorted(candidates):
        raise ValueError("candidates must be sorted ascending")
    if not candidates:
        return []
    x = np.asarray(data, dtype=np.float64)
    centered = x - x.mean(axis=0)
    evals = np.linalg.eigvalsh(centered.T @ centered / (len(x) - 1))[::-1]
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    cum = np.cumsum(evals) / total if total > 0 else np.ones_like(evals)
    cum = np.minimum(np.maximum.accumulate(cum), 1.0)
    out = []
    for k in candidates:
        k = min(int(k), len(cum))
        out.append((k, float(cum[k - 1])))
    return out


# --------------------------------------------------------------------------
# CSV bundle: manifest.txt + mean.csv + components.csv + ratio.csv


def _write_rows(path: Path, rows) -> None:
    with open(path, "w") as fh:
        fh.writelines(",".join(repr(float(v)) for v in row) + "\n" for row in rows)


def _read_rows(path: Path) -> np.ndarray:
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    return np.array([[float(v) for v in ln.split(",")] for ln in lines], dtype=np.float64)


def save_pca(model: PcaModel, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / n for n in ("pca_manifest.txt", "pca_mean.csv", "pca_components.csv", "pca_ratio.csv")]
    paths[0].write_text(
        f"kind = pca\ndim = {model.dim}\nn_components = {model.n_components}\n"
        f"rank_deficient = {int(model.rank_deficient)}\n"
    )
    _write_rows(paths[1], [model.mean])
    _write_rows(paths[2], model.components)
    _write_rows(paths[3], [model.explained_variance, model.explained_variance_ratio])
    return paths


def load_pca(directory) -> PcaModel:
    directory = Path(directory)
    lines = (directory / "pca_manifest.txt").read_text().splitlines()
    meta = {k.strip(): v.strip() for k, v in (ln.split("=", 1) for ln in lines if "=" in ln)}
    if meta.get("kind") != "pca":
        raise FormatError(f"{directory}: not a PCA bundle")
    mean = _read_rows(directory / "pca_mean.csv")[0]
    comps = _read_rows(directory / "pca_components.csv")
    var, ratio = _read_rows(directory / "pca_ratio.csv")
    if comps.shape != (int(meta["n_components"]), int(meta["dim"])):
        raise FormatError(f"{directory}: component block has shape {comps.shape}")
    return PcaModel(mean, comps, var, ratio, bool(int(meta.get("rank_deficient", 0))))
