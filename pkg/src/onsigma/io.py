"""Self-describing output files: CSV, JSON metadata, binary field snapshots.

Every CSV starts with a comment line carrying the sha256 of the resolved
run config, then a header row.  Floats are written with ``repr`` (shortest
round-trip form) so identical runs produce byte-identical bodies.

Snapshot files carry an 8-field ASCII header line

    ONSIGMA-SNAP <version> <M> <N> <m> <lam> <time> <count>

followed by count * M * M little-endian float64 values, row-major.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = "ONSIGMA-SNAP"
SNAPSHOT_VERSION = 1


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, columns, rows, config_hash):
    path = Path(path)
    lines = [f"# config_sha256={config_hash}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path):
    """Returns (columns, dict of column -> float array, config_hash)."""
    lines = Path(path).read_text().splitlines()
    config_hash = None
    body = []
    for ln in lines:
        if ln.startswith("#"):
            if "config_sha256=" in ln:
                config_hash = ln.split("config_sha256=")[1].strip()
            continue
        if ln.strip():
            body.append(ln)
    if not body:
        raise ValueError(f"{path}: empty CSV body")
    columns = body[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in body[1:]])
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    table = {c: data[:, i] for i, c in enumerate(columns)}
    return columns, table, config_hash


def write_metadata(path, record):
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return Path(path)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_snapshot(path, fields, grid_m, n_components, mass, lam, time):
    """fields: (count, M, M) float64 array of real-space values."""
    fields = np.ascontiguousarray(fields, dtype="<f8")
    count, m1, m2 = fields.shape
    if m1 != grid_m or m2 != grid_m:
        raise ValueError("field shape does not match grid size")
    header = (
        f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {grid_m} {n_components} "
        f"{fmt(mass)} {fmt(lam)} {fmt(time)} {count}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(fields.tobytes())
    return Path(path)


def read_snapshot(path):
    """Returns (fields (count, M, M), header dict)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 8 or header[0] != SNAPSHOT_MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        version, M, n, mass, lam, time, count = (
            int(header[1]),
            int(header[2]),
            int(header[3]),
            float(header[4]),
            float(header[5]),
            float(header[6]),
            int(header[7]),
        )
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count * M * M:
        raise ValueError(f"{path}: truncated snapshot payload")
    meta = {"version": version, "M": M, "N": n, "m": mass, "lam": lam,
            "time": time, "count": count}
    return data.reshape(count, M, M).copy(), meta
