"""Result files: hashed CSV tables and the binary snapshot dump."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import BoundaryCondition, LatticeRegion
from .samplers import FkConfig, Snapshot, SpinConfig

SNAPSHOT_MAGIC = b"MGLM"
SNAPSHOT_HEADER = struct.Struct("<4sIIdBdQ")
_BC_BYTE = {BoundaryCondition.PLUS: 1, BoundaryCondition.MINUS: 2, BoundaryCondition.FREE: 0}
_BYTE_BC = {v: k for k, v in _BC_BYTE.items()}


class MixedHashError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_result_csv(path, columns, rows, config_hash: str, seed: int) -> Path:
    """CSV with a leading comment line carrying the config hash and seed."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write(f"# config_hash={config_hash} seed={seed}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


@dataclass
class ResultTable:
    path: Path
    config_hash: str
    seed: int
    columns: list
    rows: list


def read_result_csv(path) -> ResultTable:
    path = Path(path)
    with open(path, newline="") as f:
        head = f.readline().strip()
        if not head.startswith("# config_hash="):
            raise ValueError(f"{path}: missing config hash line")
        fields = dict(kv.split("=", 1) for kv in head[2:].split())
        rd = csv.reader(f)
        columns = next(rd)
        rows = [r for r in rd]
    return ResultTable(path, fields["config_hash"], int(fields["seed"]), columns, rows)


def load_results(paths, force: bool = False) -> list[ResultTable]:
    """Read result tables for joint analysis; refuses tables produced by
    different configurations unless ``force``."""
    tables = [read_result_csv(p) for p in paths]
    hashes = {t.config_hash for t in tables}
    if len(hashes) > 1 and not force:
        raise MixedHashError(f"result files come from {len(hashes)} different configs: {sorted(hashes)}")
    return tables


def _pack(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=bool)).tobytes()


def snapshot_bytes(snap: Snapshot, h: float) -> bytes:
    """Header (magic, width, height, a, bc, h, sweep) followed by packed spin
    bits (1 = plus), lattice bond bits and ghost bond bits, row-major."""
    s = snap.spin
    r = s.region
    head = SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, r.width, r.height, float(r.a), _BC_BYTE[s.bc], float(h), int(s.sweep))
    omega = snap.fk.omega if snap.fk is not None else np.zeros(r.n_edges, dtype=bool)
    tau = snap.fk.tau if snap.fk is not None else np.zeros(r.n_sites, dtype=bool)
    return head + _pack(s.spins > 0) + _pack(omega) + _pack(tau)


def write_snapshots(path, snaps, h: float) -> int:
    n = 0
    with open(path, "wb") as f:
        for s in snaps:
            f.write(snapshot_bytes(s, h))
            n += 1
    return n


def _nbytes(n: int) -> int:
    return (n + 7) // 8


def read_snapshots(path) -> list[tuple[Snapshot, float]]:
    """Inverse of write_snapshots; returns (snapshot, h) pairs. Boundary
    half-edge bits are not stored, so FK snapshots come back with them closed."""
    data = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(data):
        magic, W, H, a, bcb, h, sweep = SNAPSHOT_HEADER.unpack_from(data, pos)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot magic at byte {pos}")
        pos += SNAPSHOT_HEADER.size
        region = LatticeRegion(W, H, a)
        bc = _BYTE_BC[bcb]
        parts = []
        for n in (region.n_sites, region.n_edges, region.n_sites):
            k = _nbytes(n)
            parts.append(np.unpackbits(np.frombuffer(data, np.uint8, k, pos))[:n].astype(bool))
            pos += k
        spins = np.where(parts[0], 1, -1).astype(np.int8)
        nb = len(region.boundary_edges) if bc.wired else 0
        fk = FkConfig(parts[1], np.zeros(nb, dtype=bool), parts[2], region, bc)
        out.append((Snapshot(SpinConfig(spins, region, bc, sweep), fk), h))
    return out
