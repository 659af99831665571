"""CSV tables, run manifests and the plain-text summary."""
from __future__ import annotations

import hashlib
import json
import math
import time
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def format_value(v) -> str:
    """Shortest round-trip text for floats; ints and strings as-is."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if v in (float("inf"), float("-inf")):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def _columns(rows: Sequence[Mapping]) -> list[str]:
    cols = list(rows[0].keys())
    for i, row in enumerate(rows[1:], start=1):
        if list(row.keys()) != cols:
            raise ValueError(f"row {i} has columns {list(row.keys())}, expected {cols}")
    return cols


def table_text(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    if not rows:
        raise ValueError("cannot render an empty table")
    cols = list(columns) if columns is not None else _columns(rows)
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(format_value(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def write_table(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    text = table_text(rows, columns)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# summaries

_SETTING_KEYS = ("experiment", "setting")


def _mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return float(sum(xs) / len(xs))


def summarize(name: str, rows: Sequence[Mapping]) -> list[str]:
    """A few human-readable lines about one table."""
    if not rows:
        return [f"{name}: empty"]
    cols = set(rows[0])
    out = [f"{name}: {len(rows)} rows"]
    if {"algorithm", "target_accuracy"} <= cols:
        key = next((k for k in _SETTING_KEYS if k in cols), None)
        groups: dict[tuple, list[float]] = defaultdict(list)
        for r in rows:
            groups[(r["algorithm"], r[key] if key else "")].append(float(r["target_accuracy"]))
        best: dict[str, tuple[float, str]] = {}
        for (algo, setting), accs in groups.items():
            m = _mean(accs)
            # ties keep the first setting seen, which is the table order
            if algo not in best or m > best[algo][0]:
                best[algo] = (m, setting)
        for algo, (m, setting) in best.items():
            label = f" {key}={setting}" if key else ""
            out.append(f"  best {algo}:{label} mean target accuracy {m:.4f}")
    elif {"epsilon", "power_mean"} <= cols:
        for r in rows:
            out.append(f"  epsilon={format_value(r['epsilon'])} power={float(r['power_mean']):.4f}"
                       f" fpr={float(r['fpr_realized']):.4f}")
    elif {"epsilon", "emd"} <= cols:
        by_eps: dict[str, list[float]] = defaultdict(list)
        for r in rows:
            by_eps[format_value(r["epsilon"])].append(float(r["emd"]))
        for eps, vals in by_eps.items():
            out.append(f"  epsilon={eps} emd min {min(vals):.4f} max {max(vals):.4f}")
    elif "emd" in cols:
        vals = [float(r["emd"]) for r in rows]
        out.append(f"  emd min {min(vals):.4f} max {max(vals):.4f}")
    return out


def render_report(tables: Mapping[str, Sequence[Mapping]], out_dir) -> list[Path]:
    """One ``<name>.csv`` per table plus ``summary.txt``; returns every path written."""
    if not tables or any(not rows for rows in tables.values()):
        raise ValueError("render_report needs non-empty tables")
    out_dir = Path(out_dir)
    paths = [write_table(out_dir / f"{name}.csv", rows) for name, rows in tables.items()]
    lines = []
    for name, rows in tables.items():
        lines.extend(summarize(name, rows))
    summary = out_dir / "summary.txt"
    try:
        summary.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {summary}: {exc.strerror or exc}") from exc
    paths.append(summary)
    return paths


# --------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    config_hash: str
    artifacts: list[str] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    data_files: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + time.perf_counter() - t0

    def add(self, paths: Iterable) -> None:
        for p in paths:
            s = str(p)
            if s not in self.artifacts:
                self.artifacts.append(s)

    def add_data_file(self, path) -> None:
        self.data_files[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "artifacts": {p: sha256_file(p) for p in self.artifacts},
            "stage_seconds": self.stage_seconds,
            "data_files": self.data_files,
            "versions": self.versions,
        }

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        return path
