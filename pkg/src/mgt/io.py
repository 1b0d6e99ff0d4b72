"""Map manifests, point files and deterministic JSON / CSV output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .gallery import MapSpec, make_map
from .metric import MetricSpace, SampledMap


def plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(plain(obj), indent=2) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
    return path


def write_csv(rows, columns, path) -> Path:
    """Tidy CSV with a header row, '.' decimals and LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else plain(row.get(c)) for c in columns])
    return path


def manifest_dict(spec: MapSpec, grid=None) -> dict:
    fmap = make_map(spec, grid)
    d = spec.to_dict()
    if grid is not None:
        d["grid"] = grid
    d["target"] = fmap.target.to_dict()
    return d


def save_manifest(spec: MapSpec, path, grid=None) -> Path:
    return write_json(manifest_dict(spec, grid), path)


def load_manifest(path) -> SampledMap:
    """Evaluable map from a manifest file.

    Gallery kinds are rebuilt from their parameters.  The ``samples`` kind
    reads node values from a CSV (one row per node in C order, one column per
    target coordinate) named by ``params.file`` relative to the manifest.
    """
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if d.get("kind") != "samples":
        return make_map(MapSpec.from_dict(d))
    params = d.get("params", {})
    box = np.asarray(d["box"], dtype=float)
    grid = np.broadcast_to(np.asarray(d.get("grid", 65)), (len(box),))
    target = MetricSpace.from_dict(d.get("target", {"kind": "euclidean", "dim": 1}))
    vals = np.loadtxt(path.parent / params["file"], delimiter=",", ndmin=2)
    if vals.shape[0] != int(np.prod(grid)):
        raise InvalidSpec(f"sample file has {vals.shape[0]} rows for a grid of {int(np.prod(grid))} nodes")
    samples = vals.reshape(tuple(int(g) for g in grid) + (vals.shape[1],))
    return SampledMap(box[:, 0], box[:, 1], tuple(int(g) for g in grid), target,
                      int(params.get("n", target.dim or 1)), samples=samples, lip_hint=params.get("lip"))


def load_points(path) -> np.ndarray:
    """Numeric point cloud from CSV; a non-numeric header row is skipped."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",") if v]
        skip = 0
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", ndmin=2, skiprows=skip)
