"""Markov chain Monte Carlo for the Ising model at inverse temperature beta
with an optional uniform field, on a finite rectangle with plus, minus or
free boundary conditions.

Three dynamics share one Boltzmann measure: single-site Metropolis, the
Swendsen-Wang cluster algorithm (which also emits the intermediate
Fortuin-Kasteleyn configuration) and the Wolff single-cluster update.
The field enters through a ghost vertex carrying the spin ``sign(h)``:
ghost edges open with probability ``1 - exp(-2|h_site|)`` on sites whose
spin agrees with the ghost, and clusters attached to the ghost (or to a
wired boundary) are never flipped freely.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numba as nb
import numpy as np

from .lattice import BoundaryCondition, LatticeRegion, ModelParams
from .unionfind import find, union

METROPOLIS, SW, WOLFF, HEATBATH = 0, 1, 2, 3
ALGORITHMS = {"metropolis": METROPOLIS, "sw": SW, "wolff": WOLFF, "heatbath": HEATBATH}
CODE_BITS = 62


def chain_rng(seed: int, *chain_key: int) -> np.random.Generator:
    """Independent counter-based stream for chain ``chain_key`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in chain_key))
    return np.random.Generator(np.random.Philox(ss))


def bond_probability(coupling: float) -> float:
    return -math.expm1(-2.0 * abs(coupling))


@dataclass
class SpinConfig:
    spins: np.ndarray
    region: LatticeRegion
    bc: BoundaryCondition
    sweep: int = 0

    def __post_init__(self):
        if self.spins.shape != (self.region.n_sites,):
            raise ValueError("spin array does not match the region")

    @property
    def total(self) -> int:
        return int(self.spins.sum(dtype=np.int64))

    def grid(self) -> np.ndarray:
        return self.spins.reshape(self.region.height, self.region.width)

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.spins.copy(), self.region, self.bc, self.sweep)


@dataclass
class FkConfig:
    """Bond occupation of the lattice edges (omega), of the half-edges to the
    wired boundary (``boundary``, empty for free bc) and of the ghost edges
    (tau, one per site)."""

    omega: np.ndarray
    boundary: np.ndarray
    tau: np.ndarray
    region: LatticeRegion
    bc: BoundaryCondition
    ghost_sign: int = 1

    def __post_init__(self):
        if self.omega.shape != (self.region.n_edges,):
            raise ValueError("omega does not match the region edges")
        if self.tau.shape != (self.region.n_sites,):
            raise ValueError("tau does not match the region sites")
        n_b = len(self.region.boundary_edges) if self.bc.wired else 0
        if self.boundary.shape != (n_b,):
            raise ValueError("boundary bits do not match the boundary condition")

    @property
    def wired(self) -> bool:
        return self.bc.wired

    @classmethod
    def uniform(cls, region: LatticeRegion, bc: BoundaryCondition, open_: bool, tau: bool = False) -> "FkConfig":
        bc = BoundaryCondition.parse(bc)
        n_b = len(region.boundary_edges) if bc.wired else 0
        return cls(
            np.full(region.n_edges, open_, dtype=bool),
            np.full(n_b, open_, dtype=bool),
            np.full(region.n_sites, tau, dtype=bool),
            region,
            bc,
        )

    def copy(self) -> "FkConfig":
        return FkConfig(self.omega.copy(), self.boundary.copy(), self.tau.copy(), self.region, self.bc, self.ghost_sign)


@dataclass
class ChainState:
    config: SpinConfig
    params: ModelParams
    rng: np.random.Generator
    fk: FkConfig | None = None
    _work: dict = field(default_factory=dict, repr=False)

    @property
    def region(self) -> LatticeRegion:
        return self.config.region

    @property
    def bc(self) -> BoundaryCondition:
        return self.config.bc

    @property
    def sweep(self) -> int:
        return self.config.sweep


def initial_state(
    region: LatticeRegion,
    bc: BoundaryCondition,
    params: ModelParams,
    rng: np.random.Generator,
    start: str = "auto",
) -> ChainState:
    bc = BoundaryCondition.parse(bc)
    if start == "auto":
        start = "plus" if bc.sign > 0 else "minus" if bc.sign < 0 else "random"
    if start == "plus":
        spins = np.ones(region.n_sites, dtype=np.int8)
    elif start == "minus":
        spins = -np.ones(region.n_sites, dtype=np.int8)
    elif start == "random":
        spins = np.where(rng.random(region.n_sites) < 0.5, 1, -1).astype(np.int8)
    else:
        raise ValueError(f"unknown start {start!r}")
    return ChainState(SpinConfig(spins, region, bc), params, rng)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def _metropolis_sweep(spins, nbr, bfield, beta, h, rng):
    # random scan: a fixed site order with free zero-cost flips is not ergodic
    n = spins.size
    for _ in range(n):
        s = min(int(rng.random() * n), n - 1)
        loc = bfield[s]
        for d in range(4):
            t = nbr[s, d]
            if t >= 0:
                loc += spins[t]
        dE = 2.0 * spins[s] * (beta * loc + h)
        if dE <= 0.0 or rng.random() < math.exp(-dE):
            spins[s] = -spins[s]


@nb.njit(nogil=True, cache=True)
def _heatbath_sweep(spins, nbr, bfield, beta, h, rng):
    for s in range(spins.size):
        loc = bfield[s]
        for d in range(4):
            t = nbr[s, d]
            if t >= 0:
                loc += spins[t]
        p_up = 1.0 / (1.0 + math.exp(-2.0 * (beta * loc + h)))
        spins[s] = 1 if rng.random() < p_up else -1


@nb.njit(nogil=True, cache=True)
def _sw_sweep(spins, edges, bedges, bsign, gsign, p, pg, rng, parent, omega, bnd, tau, color):
    """One Swendsen-Wang update. Vertex N is the wired boundary, N+1 the ghost."""
    n = spins.size
    B = n
    G = n + 1
    for x in range(n + 2):
        parent[x] = x
    for e in range(edges.shape[0]):
        x = edges[e, 0]
        y = edges[e, 1]
        if spins[x] == spins[y] and rng.random() < p:
            omega[e] = True
            union(parent, x, y)
        else:
            omega[e] = False
    for k in range(bnd.size):
        x = bedges[k, 0]
        if spins[x] == bsign and rng.random() < p:
            bnd[k] = True
            union(parent, x, B)
        else:
            bnd[k] = False
    for x in range(n):
        if pg > 0.0 and spins[x] == gsign and rng.random() < pg:
            tau[x] = True
            union(parent, x, G)
        else:
            tau[x] = False
    for x in range(n + 2):
        color[x] = 0
    color[find(parent, B)] = bsign
    if gsign != 0 and pg > 0.0:
        color[find(parent, G)] = gsign
    for x in range(n):
        r = find(parent, x)
        if color[r] == 0:
            color[r] = 1 if rng.random() < 0.5 else -1
        spins[x] = color[r]


@nb.njit(nogil=True, cache=True)
def _wolff_update(spins, nbr, nbound, bsign, gsign, p, pg, rng, stack, members, mark, stamp):
    """Single-cluster update; returns the cluster size (0 if it was pinned).

    A cluster that bonds to the wired boundary or to the ghost is left alone;
    growth stops at the first such bond since the move is then the identity.
    """
    n = spins.size
    seed = int(rng.random() * n)
    if seed >= n:
        seed = n - 1
    s0 = spins[seed]
    mark[seed] = stamp
    stack[0] = seed
    top = 1
    size = 0
    while top > 0:
        top -= 1
        x = stack[top]
        members[size] = x
        size += 1
        if s0 == bsign:
            for _ in range(nbound[x]):
                if rng.random() < p:
                    return 0
        if pg > 0.0 and s0 == gsign and rng.random() < pg:
            return 0
        for d in range(4):
            y = nbr[x, d]
            if y >= 0 and mark[y] != stamp and spins[y] == s0 and rng.random() < p:
                mark[y] = stamp
                stack[top] = y
                top += 1
    for k in range(size):
        spins[members[k]] = -s0
    return size


@nb.njit(nogil=True, cache=True)
def _state_code(spins):
    c = 0
    for s in range(spins.size):
        if spins[s] > 0:
            c |= 1 << s
    return c


@nb.njit(nogil=True, cache=True)
def _fk_code(omega, bnd, tau):
    c = 0
    k = 0
    for e in range(omega.size):
        if omega[e]:
            c |= 1 << k
        k += 1
    for e in range(bnd.size):
        if bnd[e]:
            c |= 1 << k
        k += 1
    for e in range(tau.size):
        if tau[e]:
            c |= 1 << k
        k += 1
    return c


@nb.njit(nogil=True, cache=True)
def _run(alg, spins, nbr, bfield, nbound, edges, bedges, bsign, gsign, beta, h, rng,
         n_equil, n_records, thin, sums, codes, fkcodes, csizes, with_codes, with_fk):
    n = spins.size
    p = -math.expm1(-2.0 * beta)
    pg = -math.expm1(-2.0 * abs(h))
    parent = np.empty(n + 2, dtype=np.int64)
    omega = np.zeros(edges.shape[0], dtype=np.bool_)
    bnd = np.zeros(bedges.shape[0], dtype=np.bool_)
    tau = np.zeros(n, dtype=np.bool_)
    color = np.zeros(n + 2, dtype=np.int8)
    stack = np.empty(n, dtype=np.int64)
    members = np.empty(n, dtype=np.int64)
    mark = np.zeros(n, dtype=np.int64)
    stamp = 0
    size = 0
    for k in range(n_equil + n_records * thin):
        if alg == 0:
            _metropolis_sweep(spins, nbr, bfield, beta, h, rng)
        elif alg == 1:
            _sw_sweep(spins, edges, bedges, bsign, gsign, p, pg, rng, parent, omega, bnd, tau, color)
        elif alg == 2:
            stamp += 1
            size = _wolff_update(spins, nbr, nbound, bsign, gsign, p, pg, rng, stack, members, mark, stamp)
        else:
            _heatbath_sweep(spins, nbr, bfield, beta, h, rng)
        if k >= n_equil and (k - n_equil + 1) % thin == 0:
            r = (k - n_equil + 1) // thin - 1
            tot = 0
            for s in range(n):
                tot += spins[s]
            sums[r] = tot
            if alg == 2:
                csizes[r] = size
            if with_codes:
                codes[r] = _state_code(spins)
            if with_fk:
                fkcodes[r] = _fk_code(omega, bnd, tau)
    return stamp


def _kernel_args(region: LatticeRegion, bc: BoundaryCondition, params: ModelParams):
    bsign = bc.sign
    bfield = (bsign * region.n_boundary).astype(np.int64)
    bedges = region.boundary_edges if bc.wired else np.zeros((0, 2), dtype=np.int64)
    h = params.h_site
    gsign = int(np.sign(h))
    return bfield, bedges, bsign, gsign


def _advance(state: ChainState, algorithm: int, n_sweeps: int):
    """Run ``n_sweeps`` updates in place; SW leaves its last FK configuration."""
    region, bc, params = state.region, state.bc, state.params
    bfield, bedges, bsign, gsign = _kernel_args(region, bc, params)
    spins = state.config.spins
    h = params.h_site
    if algorithm == SW:
        w = state._work
        if "parent" not in w:
            w["parent"] = np.empty(region.n_sites + 2, dtype=np.int64)
            w["color"] = np.zeros(region.n_sites + 2, dtype=np.int8)
        omega = np.zeros(region.n_edges, dtype=bool)
        bnd = np.zeros(len(bedges), dtype=bool)
        tau = np.zeros(region.n_sites, dtype=bool)
        p, pg = bond_probability(params.beta), bond_probability(h)
        for _ in range(n_sweeps):
            _sw_sweep(spins, region.edges, bedges, bsign, gsign, p, pg, state.rng,
                      w["parent"], omega, bnd, tau, w["color"])
        if n_sweeps:
            state.fk = FkConfig(omega, bnd, tau, region, bc, gsign if gsign else 1)
    elif algorithm == WOLFF:
        w = state._work
        if "stack" not in w:
            w["stack"] = np.empty(region.n_sites, dtype=np.int64)
            w["members"] = np.empty(region.n_sites, dtype=np.int64)
            w["mark"] = np.zeros(region.n_sites, dtype=np.int64)
            w["stamp"] = 0
        p, pg = bond_probability(params.beta), bond_probability(h)
        sizes = []
        for _ in range(n_sweeps):
            w["stamp"] += 1
            sizes.append(_wolff_update(spins, region.neighbors, region.n_boundary, bsign, gsign, p, pg,
                                       state.rng, w["stack"], w["members"], w["mark"], w["stamp"]))
        w["last_sizes"] = sizes
    elif algorithm == METROPOLIS:
        for _ in range(n_sweeps):
            _metropolis_sweep(spins, region.neighbors, bfield, params.beta, h, state.rng)
    elif algorithm == HEATBATH:
        for _ in range(n_sweeps):
            _heatbath_sweep(spins, region.neighbors, bfield, params.beta, h, state.rng)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    state.config.sweep += n_sweeps
    return state


def metropolis_sweep(state: ChainState) -> ChainState:
    """One typewriter-order sweep of single-site Metropolis updates (in place)."""
    return _advance(state, METROPOLIS, 1)


def sw_sweep(state: ChainState) -> ChainState:
    """One Swendsen-Wang update; the bond configuration is left in ``state.fk``."""
    return _advance(state, SW, 1)


def wolff_update(state: ChainState) -> ChainState:
    return _advance(state, WOLFF, 1)


def heatbath_sweep(state: ChainState) -> ChainState:
    return _advance(state, HEATBATH, 1)


def algorithm_id(algorithm) -> int:
    if isinstance(algorithm, (int, np.integer)):
        if int(algorithm) in ALGORITHMS.values():
            return int(algorithm)
    elif str(algorithm).lower() in ALGORITHMS:
        return ALGORITHMS[str(algorithm).lower()]
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")


@dataclass
class Snapshot:
    spin: SpinConfig
    fk: FkConfig | None = None


def run_chain(
    params: ModelParams,
    bc,
    region: LatticeRegion,
    algorithm="sw",
    n_equil: int | None = 0,
    n_meas: int = 0,
    thin: int = 1,
    seed: int = 0,
    chain_id=0,
    start: str = "auto",
) -> Iterator[Snapshot]:
    """Yield a snapshot every ``thin`` sweeps of the ``n_meas`` measurement sweeps.

    ``n_equil=None`` picks the burn-in from a pilot run (20 integrated
    autocorrelation times of the total spin). Snapshots are copies; the FK
    part is present only for Swendsen-Wang.
    """
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if n_meas < 0 or (n_equil is not None and n_equil < 0):
        raise ValueError("sweep counts must be non-negative")
    alg = algorithm_id(algorithm)
    bc = BoundaryCondition.parse(bc)
    key = chain_id if isinstance(chain_id, tuple) else (chain_id,)
    state = initial_state(region, bc, params, chain_rng(seed, *key), start)
    if n_equil is None:
        n_equil = pilot_equilibration(state, alg)
    _advance(state, alg, n_equil)
    for _ in range(n_meas // thin):
        _advance(state, alg, thin)
        yield Snapshot(state.config.copy(), state.fk.copy() if alg == SW and state.fk is not None else None)


def pilot_equilibration(state: ChainState, alg: int, pilot: int = 200, factor: float = 20.0, minimum: int = 20) -> int:
    """Burn-in length from a pilot run; the pilot sweeps themselves also count as burn-in."""
    from .stats import series_stats

    sums = np.empty(pilot)
    for k in range(pilot):
        _advance(state, alg, 1)
        sums[k] = state.config.total
    tau = series_stats(sums).tau_int
    return max(minimum, int(math.ceil(factor * tau)))


@dataclass
class SeriesRecord:
    sums: np.ndarray
    codes: np.ndarray | None
    fk_codes: np.ndarray | None
    cluster_sizes: np.ndarray | None
    final: ChainState


def sample_series(
    params: ModelParams,
    bc,
    region: LatticeRegion,
    algorithm="sw",
    n_equil: int = 0,
    n_samples: int = 0,
    thin: int = 1,
    seed: int = 0,
    chain_id=0,
    with_codes: bool = False,
    with_fk: bool = False,
    start: str = "auto",
) -> SeriesRecord:
    """Fast path for long runs: the whole chain executes inside one kernel and
    only the total spin (plus optional bit-packed state codes) is recorded."""
    alg = algorithm_id(algorithm)
    bc = BoundaryCondition.parse(bc)
    key = chain_id if isinstance(chain_id, tuple) else (chain_id,)
    state = initial_state(region, bc, params, chain_rng(seed, *key), start)
    bfield, bedges, bsign, gsign = _kernel_args(region, bc, params)
    if with_codes and region.n_sites > CODE_BITS:
        raise ValueError("state codes need at most 62 sites")
    n_fk_bits = region.n_edges + len(bedges) + region.n_sites
    if with_fk and (alg != SW or n_fk_bits > CODE_BITS):
        raise ValueError("FK codes need Swendsen-Wang and at most 62 bonds")
    sums = np.zeros(n_samples, dtype=np.int64)
    codes = np.zeros(n_samples if with_codes else 0, dtype=np.int64)
    fkc = np.zeros(n_samples if with_fk else 0, dtype=np.int64)
    cs = np.zeros(n_samples if alg == WOLFF else 0, dtype=np.int64)
    _run(alg, state.config.spins, region.neighbors, bfield, region.n_boundary, region.edges, bedges,
         bsign, gsign, params.beta, params.h_site, state.rng, n_equil, n_samples, thin,
         sums, codes, fkc, cs if alg == WOLFF else np.zeros(max(n_samples, 1), dtype=np.int64),
         with_codes, with_fk)
    state.config.sweep += n_equil + n_samples * thin
    return SeriesRecord(sums, codes if with_codes else None, fkc if with_fk else None,
                        cs if alg == WOLFF else None, state)


def decode_states(codes: np.ndarray, n_sites: int) -> np.ndarray:
    """Spin arrays (n, n_sites) from bit-packed codes."""
    bits = (codes[:, None] >> np.arange(n_sites)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


@dataclass(frozen=True)
class ChainSpec:
    """How to run each chain of an experiment."""

    algorithm: str = "sw"
    n_equil: int = 500
    n_meas: int = 5000
    thin: int = 1
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        algorithm_id(self.algorithm)
        if self.thin < 1 or self.n_meas < 0 or self.n_equil < 0:
            raise ValueError("invalid chain sweep counts")

    @property
    def n_samples(self) -> int:
        return self.n_meas // self.thin


def parallel_map(fn, items, threads: int | None = None) -> list:
    """Order-preserving map over a thread pool; kernels release the GIL."""
    items = list(items)
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
