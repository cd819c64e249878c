"""
File formats: CSV grids with 17 significant digits and JSON reports.

A dataset directory holds ``dataset.json`` (grid, K, noise metadata,
truth description) and the payloads ``g0.csv`` and ``g1.csv`` with one
row per source position and one column per Gamma point.  Seventeen
significant digits round-trip every float64 exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .domain import GridSpec
from .forward import DNData

__all__ = [
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "write_dataset",
    "read_dataset",
    "to_jsonable",
]

FMT = "%.17g"


def write_csv(path, array, header: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a = np.atleast_2d(np.asarray(array, dtype=float))
    np.savetxt(path, a, fmt=FMT, delimiter=",", header=header or "", comments="# " if header else "")
    return path


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def to_jsonable(obj):
    """Recursively convert numpy scalars and arrays for ``json.dump``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_dataset(directory, data: DNData, grid: GridSpec, truth_spec=None, extra=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "grid": {"n1": grid.n1, "n2": grid.n2, "side": grid.side, "top": grid.top, "bottom": grid.bottom},
        "K": data.K,
        "noise_level": data.noise_level,
        "seed": data.seed,
        "truth_spec": truth_spec,
        "gamma_columns": None if data.columns is None else [int(c) for c in data.columns],
    }
    if extra:
        header.update(extra)
    write_json(d / "dataset.json", header)
    write_csv(d / "g0.csv", data.g0)
    write_csv(d / "g1.csv", data.g1)
    return d


def read_dataset(directory):
    """Return ``(DNData, GridSpec, header)``."""
    d = Path(directory)
    header = read_json(d / "dataset.json")
    grid = GridSpec(**header["grid"])
    g0 = read_csv(d / "g0.csv")
    g1 = read_csv(d / "g1.csv")
    K = int(header["K"])
    if g0.shape[0] != K:
        raise ValueError(f"g0.csv has {g0.shape[0]} rows, header says K={K}")
    cols = header.get("gamma_columns")
    data = DNData(
        np.linspace(0.0, 1.0, K),
        g0,
        g1,
        float(header.get("noise_level", 0.0)),
        header.get("seed"),
        None if cols is None else np.asarray(cols, dtype=int),
    )
    return data, grid, header
