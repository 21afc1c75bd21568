"""Exhaustive enumeration on tiny lattices: exact spin laws and exact
random-cluster measures with boundary wiring and a ghost vertex."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numba as nb
import numpy as np
from scipy.special import logsumexp

from .lattice import BoundaryCondition, LatticeRegion, ModelParams, renormalization_factor
from .samplers import bond_probability
from .unionfind import find, union

MAX_SITES = 24
MAX_STATE_SITES = 16
MAX_FK_EDGES = 12
FIXTURE = "ising_3x3_plus_betac_h0.tsv"


class OracleSizeError(ValueError):
    pass


def _check_sites(region: LatticeRegion, limit: int = MAX_SITES):
    if region.n_sites > limit:
        raise OracleSizeError(f"exhaustive enumeration limited to {limit} sites, region has {region.n_sites}")


@nb.njit(nogil=True, cache=True)
def _density_of_states(n, edges, nbound, bsign, emax, out):
    # out[(S + n) // 2, E + emax] counts states with total spin S and
    # interaction sum E = sum_<xy> s_x s_y + bsign * sum_x nbound_x s_x
    spins = np.empty(n, dtype=np.int64)
    for code in range(1 << n):
        S = 0
        for s in range(n):
            v = 1 if (code >> s) & 1 else -1
            spins[s] = v
            S += v
        E = 0
        for e in range(edges.shape[0]):
            E += spins[edges[e, 0]] * spins[edges[e, 1]]
        if bsign != 0:
            for s in range(n):
                E += bsign * nbound[s] * spins[s]
        out[(S + n) // 2, E + emax] += 1


@nb.njit(nogil=True, cache=True)
def _state_energies(n, edges, nbound, bsign, E, S):
    spins = np.empty(n, dtype=np.int64)
    for code in range(1 << n):
        tot = 0
        for s in range(n):
            v = 1 if (code >> s) & 1 else -1
            spins[s] = v
            tot += v
        en = 0
        for e in range(edges.shape[0]):
            en += spins[edges[e, 0]] * spins[edges[e, 1]]
        if bsign != 0:
            for s in range(n):
                en += bsign * nbound[s] * spins[s]
        E[code] = en
        S[code] = tot


_DOS_CACHE: dict = {}


def density_of_states(region: LatticeRegion, bc) -> tuple[np.ndarray, int]:
    """Integer table g[(S+N)/2, E+emax] and the offset emax."""
    _check_sites(region)
    bc = BoundaryCondition.parse(bc)
    key = (region.width, region.height, bc)
    if key not in _DOS_CACHE:
        n = region.n_sites
        emax = region.n_edges + (int(region.n_boundary.sum()) if bc.wired else 0)
        out = np.zeros((n + 1, 2 * emax + 1), dtype=np.int64)
        _density_of_states(n, region.edges, region.n_boundary, bc.sign, emax, out)
        out.flags.writeable = False
        _DOS_CACHE[key] = (out, emax)
    return _DOS_CACHE[key]


@dataclass(frozen=True)
class ExactDistribution:
    """Exact law of the total spin S; m = a^(15/8) S."""

    S: np.ndarray
    prob: np.ndarray
    log_z: float
    region: LatticeRegion
    bc: BoundaryCondition
    params: ModelParams

    @property
    def a(self) -> float:
        return self.params.a

    @property
    def scale(self) -> float:
        return renormalization_factor(self.params.a)

    @property
    def m(self) -> np.ndarray:
        return self.scale * self.S

    def mean_m(self) -> float:
        return float(np.dot(self.prob, self.m))

    def var_m(self) -> float:
        mu = self.mean_m()
        return float(np.dot(self.prob, (self.m - mu) ** 2))

    def pmf(self) -> dict[int, float]:
        return {int(s): float(p) for s, p in zip(self.S, self.prob)}


def enumerate_ising(region: LatticeRegion, bc, params: ModelParams) -> ExactDistribution:
    """Exact Boltzmann law of S with weight exp(beta*E + h_site*S)."""
    bc = BoundaryCondition.parse(bc)
    g, emax = density_of_states(region, bc)
    n = region.n_sites
    E = np.arange(-emax, emax + 1)
    S = np.arange(-n, n + 1, 2)
    with np.errstate(divide="ignore"):
        logg = np.log(g.astype(float))
    logw = logsumexp(logg + params.beta * E[None, :], axis=1) + params.h_site * S
    keep = np.isfinite(logw)
    log_z = float(logsumexp(logw[keep]))
    prob = np.exp(logw[keep] - log_z)
    prob /= prob.sum()
    return ExactDistribution(S[keep], prob, log_z, region, bc, params)


def state_log_probs(region: LatticeRegion, bc, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-state log probabilities indexed by the bit code (bit s set = spin +1)
    and the total spin of each state."""
    _check_sites(region, MAX_STATE_SITES)
    bc = BoundaryCondition.parse(bc)
    n = region.n_sites
    E = np.empty(1 << n, dtype=np.int64)
    S = np.empty(1 << n, dtype=np.int64)
    _state_energies(n, region.edges, region.n_boundary, bc.sign, E, S)
    logw = params.beta * E + params.h_site * S
    return logw - logsumexp(logw), S


def exact_mgf(dist: ExactDistribution, t: float, log: bool = False) -> float:
    """E[exp(t m)]; ``log=True`` returns log E[exp(t m)] without overflow."""
    with np.errstate(divide="ignore"):
        lv = float(logsumexp(np.log(dist.prob) + t * dist.m))
    return lv if log else math.exp(lv) if lv < 709.0 else math.inf


def exact_charfn(dist: ExactDistribution, t: float) -> complex:
    return complex(np.dot(dist.prob, np.exp(1j * t * dist.m)))


def mirror(dist: ExactDistribution) -> ExactDistribution:
    return ExactDistribution(-dist.S[::-1], dist.prob[::-1].copy(), dist.log_z, dist.region,
                             dist.bc.flipped(), dist.params)


# ---------------------------------------------------------------------------
# random-cluster measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactFK:
    """Exact law of (omega, boundary, tau) as bit codes in the sampler layout:
    lattice edges, then wired boundary half-edges, then one ghost edge per site."""

    codes: np.ndarray
    prob: np.ndarray
    region: LatticeRegion
    bc: BoundaryCondition
    params: ModelParams
    spin_law: np.ndarray  # per-state spin probabilities induced by uniform colouring

    @property
    def n_edges(self) -> int:
        return self.region.n_edges

    @property
    def n_boundary(self) -> int:
        return len(self.region.boundary_edges) if self.bc.wired else 0

    @property
    def n_bits(self) -> int:
        return self.n_edges + self.n_boundary + self.region.n_sites

    def bits(self) -> np.ndarray:
        return ((self.codes[:, None] >> np.arange(self.n_bits)[None, :]) & 1).astype(bool)

    def edge_marginals(self) -> np.ndarray:
        """P(bit open) for every bit of the code layout."""
        return self.prob @ self.bits()

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.prob, values))


@nb.njit(cache=True)
def _fk_enumerate(n, edges, bedge_sites, bsign, gsign, ghost, p, pg, n_bits_total, tau_offset,
                  codes, logw, spin_law_acc):
    n_e = edges.shape[0]
    n_b = bedge_sites.size
    n_g = n if ghost else 0
    m = n_e + n_b + n_g
    B = n
    G = n + 1
    parent = np.empty(n + 2, dtype=np.int64)
    forced = np.zeros(n + 2, dtype=np.int64)
    roots = np.empty(n, dtype=np.int64)
    lp = math.log(p) if p > 0 else -np.inf
    lq = math.log1p(-p) if p < 1 else -np.inf
    lpg = math.log(pg) if pg > 0 else -np.inf
    lqg = math.log1p(-pg) if pg < 1 else -np.inf
    for w in range(1 << m):
        for x in range(n + 2):
            parent[x] = x
        lw = 0.0
        code = 0
        for e in range(n_e):
            if (w >> e) & 1:
                lw += lp
                union(parent, edges[e, 0], edges[e, 1])
                code |= 1 << e
            else:
                lw += lq
        for k in range(n_b):
            if (w >> (n_e + k)) & 1:
                lw += lp
                union(parent, bedge_sites[k], B)
                code |= 1 << (n_e + k)
            else:
                lw += lq
        for x in range(n_g):
            if (w >> (n_e + n_b + x)) & 1:
                lw += lpg
                union(parent, x, G)
                code |= 1 << (tau_offset + x)
            else:
                lw += lqg
        for x in range(n + 2):
            forced[x] = 0
        ok = True
        rb = find(parent, B)
        if bsign != 0:
            forced[rb] = bsign
        if ghost:
            rg = find(parent, G)
            if forced[rg] != 0 and forced[rg] != gsign:
                ok = False
            forced[rg] = gsign
        codes[w] = code
        if not ok or lw == -np.inf:
            logw[w] = -np.inf
            continue
        nfree = 0
        for x in range(n):
            r = find(parent, x)
            roots[x] = r
            if forced[r] == 0 and r == x:
                nfree += 1
        logw[w] = lw + nfree * math.log(2.0)
        # accumulate the spin law: each free cluster colours uniformly
        free_list = np.empty(nfree, dtype=np.int64)
        k = 0
        for x in range(n):
            if forced[roots[x]] == 0 and roots[x] == x:
                free_list[k] = x
                k += 1
        for c in range(1 << nfree):
            state = 0
            for x in range(n):
                r = roots[x]
                if forced[r] != 0:
                    v = forced[r]
                else:
                    j = 0
                    while free_list[j] != r:
                        j += 1
                    v = 1 if (c >> j) & 1 else -1
                if v > 0:
                    state |= 1 << x
            spin_law_acc[w, state] += 1.0 / (1 << nfree)


def enumerate_fk(region: LatticeRegion, bc, params: ModelParams, max_edges: int = MAX_FK_EDGES) -> ExactFK:
    """Exact q=2 random-cluster measure with boundary wiring and a ghost vertex.

    Edges: lattice edges with p = 1 - exp(-2 beta), one half-edge per missing
    neighbour to the wired boundary (plus/minus only), and a ghost edge per
    site with p_g = 1 - exp(-2|h_site|) when h != 0. Each configuration gets
    the product of edge weights times the number of consistent colourings.
    """
    bc = BoundaryCondition.parse(bc)
    h = params.h_site
    ghost = h != 0.0
    n = region.n_sites
    bsites = region.boundary_edges[:, 0].copy() if bc.wired else np.zeros(0, dtype=np.int64)
    m = region.n_edges + bsites.size + (n if ghost else 0)
    if m > max_edges:
        raise OracleSizeError(f"FK enumeration limited to {max_edges} edges, graph has {m}")
    _check_sites(region, MAX_STATE_SITES)
    codes = np.zeros(1 << m, dtype=np.int64)
    logw = np.zeros(1 << m)
    acc = np.zeros((1 << m, 1 << n))
    tau_offset = region.n_edges + bsites.size
    _fk_enumerate(n, region.edges, bsites, bc.sign, int(np.sign(h)), ghost,
                  bond_probability(params.beta), bond_probability(h), 0, tau_offset, codes, logw, acc)
    keep = np.isfinite(logw)
    prob = np.exp(logw[keep] - logsumexp(logw[keep]))
    spin_law = prob @ acc[keep]
    return ExactFK(codes[keep], prob, region, bc, params, spin_law)


def fk_spin_marginal(fk: ExactFK) -> np.ndarray:
    """Spin law obtained from the FK measure by colouring free clusters uniformly."""
    return fk.spin_law


# ---------------------------------------------------------------------------
# committed fixture
# ---------------------------------------------------------------------------


def write_fixture(path, dist: ExactDistribution):
    r = dist.region
    with open(path, "w") as f:
        f.write(f"# region {r.width}x{r.height} bc={dist.bc.value} beta={dist.params.beta!r} "
                f"h={dist.params.h!r} a={dist.params.a!r}\n")
        f.write("S\tprobability\n")
        for s, p in zip(dist.S, dist.prob):
            f.write(f"{int(s)}\t{p:.15e}\n")


def read_fixture(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """(header fields, S, probabilities) from a fixture file."""
    meta = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
                elif "x" in tok:
                    meta["region"] = tok
        elif line and not line.startswith("S"):
            s, p = line.split("\t")
            rows.append((int(s), float(p)))
    S = np.array([r[0] for r in rows], dtype=np.int64)
    P = np.array([r[1] for r in rows])
    return meta, S, P


def fixture_path() -> Path:
    return Path(str(resources.files("maglim") / "data" / FIXTURE))


def load_fixture(path=None) -> ExactDistribution:
    meta, S, P = read_fixture(path or fixture_path())
    w, hgt = map(int, meta["region"].split("x"))
    params = ModelParams(float(meta["beta"]), float(meta["h"]), float(meta["a"]))
    region = LatticeRegion(w, hgt, params.a)
    return ExactDistribution(S, P, float("nan"), region, BoundaryCondition.parse(meta["bc"]), params)
