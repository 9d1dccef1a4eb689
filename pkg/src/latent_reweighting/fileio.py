"""CSV and JSON files written and read by the command-line driver.

Every file starts with a ``#`` comment line carrying the run metadata
(master seed, config hash, bundle format version).
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError

SAMPLE_COLUMNS = ("x", "y", "method", "seed", "wall_time_us")
HEATMAP_COLUMNS = ("z1", "z2", "w")


def metadata_line(meta: dict) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items()))


def parse_metadata(line: str) -> dict:
    out = {}
    for item in line.lstrip("#").split():
        if "=" in item:
            k, v = item.split("=", 1)
            out[k] = v
    return out


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, columns, rows, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(metadata_line(meta) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_rows(path) -> Tuple[dict, List[Dict[str, str]]]:
    """Returns ``(metadata, rows)``; comment lines other than the first are skipped."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise ConfigError(f"{path} does not exist") from exc
    meta = parse_metadata(lines[0]) if lines and lines[0].startswith("#") else {}
    body = [l for l in lines if not l.startswith("#")]
    if not body:
        raise ConfigError(f"{path}: missing header row")
    return meta, list(csv.DictReader(body))


def write_samples(path, points: np.ndarray, method: str, seed: int, wall_time_us: float, meta: dict) -> Path:
    rows = [(p[0], p[1], method, seed, wall_time_us) for p in np.asarray(points, float).reshape(-1, 2)]
    return write_rows(path, SAMPLE_COLUMNS, rows, meta)


def read_points(path) -> Tuple[dict, np.ndarray]:
    meta, rows = read_rows(path)
    try:
        pts = np.array([[float(r["x"]), float(r["y"])] for r in rows], dtype=float).reshape(-1, 2)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: expected numeric x,y columns ({exc})") from exc
    return meta, pts


def write_heatmap_csv(path, z: np.ndarray, w: np.ndarray, dims=(0, 1), meta: Optional[dict] = None) -> Path:
    i, j = dims
    rows = [(a[i], a[j], v) for a, v in zip(z, np.asarray(w, float).ravel())]
    return write_rows(path, HEATMAP_COLUMNS, rows, meta or {})


def load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path} does not exist") from exc
    except json.JSONDecodeError as exc:
        line = exc.doc.splitlines()[exc.lineno - 1] if exc.doc.splitlines() else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
