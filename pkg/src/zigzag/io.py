"""Plot-ready text exports of trajectories, jumps, field maps and manifests.

Numbers are written with 17 significant digits, so reading a file back gives
the stored doubles exactly (when no display rescale is applied).
"""

from __future__ import annotations

import json
import platform
from importlib import metadata
from pathlib import Path

import numpy as np

from .analysis import FieldMap
from .integrator import IntegratorSettings, TrajectoryRecord

FLOAT = "%.17g"


def trajectory_header(n_particles: int) -> list[str]:
    cols = ["t"]
    for k in range(1, n_particles + 1):
        cols += [f"x{k}", f"y{k}", f"z{k}", f"chi{k}", f"s{k}x", f"s{k}y", f"s{k}z"]
    return cols + ["rho"]


JUMP_HEADER = ["t", "k", "x", "y", "z", "chi_before", "s_z", "s_x", "s_y"]


def _write(path: Path, header: list[str], table: np.ndarray, int_cols=()) -> None:
    fmt = ["%d" if i in int_cols else FLOAT for i in range(len(header))]
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=",".join(header), comments="")


def write_trajectory(path, record: TrajectoryRecord, rescale: float = 1.0) -> None:
    """One row per recorded time; coordinates and time divided by `rescale`."""
    n = record.n_particles
    table = np.empty((len(record.times), 2 + 7 * n))
    table[:, 0] = record.times / rescale
    for k in range(n):
        c = 1 + 7 * k
        table[:, c:c + 3] = record.positions[:, k] / rescale
        table[:, c + 3] = record.chiralities[:, k]
        table[:, c + 4:c + 7] = record.spins[:, k]
    table[:, -1] = record.densities
    _write(Path(path), trajectory_header(n), table, {4 + 7 * k for k in range(n)})


def write_jumps(path, record: TrajectoryRecord, rescale: float = 1.0) -> None:
    """One row per chirality flip; k is the 1-based particle number."""
    m = len(record.jump_t)
    table = np.empty((m, len(JUMP_HEADER)))
    table[:, 0] = record.jump_t / rescale
    table[:, 1] = record.jump_k + 1
    table[:, 2:5] = record.jump_x / rescale
    table[:, 5] = record.jump_chi_before
    table[:, 6] = record.jump_s[:, 2]
    table[:, 7] = record.jump_s[:, 0]
    table[:, 8] = record.jump_s[:, 1]
    _write(Path(path), JUMP_HEADER, table, {1, 5})


def _read(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        has_rows = bool(fh.readline().strip())
    if not has_rows:
        return header, np.empty((0, len(header)))
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def read_record(traj_path, jumps_path, settings: IntegratorSettings | None = None,
                **extra) -> TrajectoryRecord:
    """Rebuild a TrajectoryRecord from the two exported files (rescale 1)."""
    header, tab = _read(traj_path)
    n = (len(header) - 2) // 7
    if header != trajectory_header(n):
        raise ValueError(f"{traj_path}: unexpected header {header}")
    jh, jt = _read(jumps_path)
    if jh != JUMP_HEADER:
        raise ValueError(f"{jumps_path}: unexpected header {jh}")
    cols = [1 + 7 * k for k in range(n)]
    positions = np.stack([tab[:, c:c + 3] for c in cols], axis=1)
    chis = np.stack([tab[:, c + 3] for c in cols], axis=1).astype(np.int64)
    spins = np.stack([tab[:, c + 4:c + 7] for c in cols], axis=1)
    return TrajectoryRecord(
        tab[:, 0].copy(), positions, chis, spins, tab[:, -1].copy(),
        jt[:, 0].copy(), jt[:, 1].astype(np.int64) - 1, jt[:, 2:5].copy(), jt[:, 5].astype(np.int64),
        jt[:, [7, 8, 6]].copy(), settings or IntegratorSettings(), **extra)


def write_field_map(path, fmap: FieldMap, rescale: float = 1.0) -> None:
    """Flat table with one row per grid node; node-proximity entries are nan."""
    pts = fmap.positions.reshape(-1, 3) / rescale
    cols = [pts, fmap.spin.reshape(-1, 3), fmap.rate_plus.reshape(-1, 1), fmap.rate_minus.reshape(-1, 1),
            fmap.velocity.reshape(-1, 3), fmap.density.reshape(-1, 1)]
    header = ["x", "y", "z", "sx", "sy", "sz", "r_plus", "r_minus", "vx", "vy", "vz", "rho"]
    _write(Path(path), header, np.hstack(cols))


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(path, payload: dict) -> None:
    """JSON with sorted keys and no wall-clock data, so reruns are byte-identical."""
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
