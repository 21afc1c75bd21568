"""Estimators built on the samplers: block magnetization and field pairings,
log-MGF by thermodynamic integration, free-energy curves, characteristic
functions (plain average and FK cosine product), crossing probabilities
and the concavity of the magnetization in the field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clusters import Annulus, ClusterDecomposition, decompose, lr_crossing, open_circuit
from .lattice import BoundaryCondition, LatticeRegion, ModelParams, RegionMask, renormalization_factor
from .oracle import enumerate_ising
from .samplers import ChainSpec, SpinConfig, parallel_map, run_chain, sample_series
from .stats import Estimate, proportion, series_stats

_BC_KEY = {BoundaryCondition.PLUS: 1, BoundaryCondition.MINUS: 2, BoundaryCondition.FREE: 3}


def block_magnetization(spin: SpinConfig, mask: RegionMask, a: float | None = None) -> float:
    a = spin.region.a if a is None else a
    return renormalization_factor(a) * float(spin.spins[mask.bits].sum(dtype=np.int64))


def pair_field(spin: SpinConfig, f: np.ndarray, a: float | None = None) -> float:
    """<Phi^a, f> = a^(15/8) sum_x sigma_x f(x) for f sampled at the sites."""
    a = spin.region.a if a is None else a
    f = np.asarray(f, dtype=float).ravel()
    if f.size != spin.region.n_sites:
        raise ValueError("test function does not match the region")
    return renormalization_factor(a) * float(np.dot(spin.spins.astype(float), f))


# ---------------------------------------------------------------------------
# mean magnetization under a field and thermodynamic integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldMean:
    h: float
    mean: float
    stderr: float
    tau_int: float
    converged: bool


def mean_magnetization(h: float, bc, region: LatticeRegion, spec: ChainSpec, key=()) -> FieldMean:
    """E_h[m] for the unit-normalised field h (site field h*a^(15/8))."""
    bc = BoundaryCondition.parse(bc)
    params = ModelParams.critical(h, region.a)
    rec = sample_series(params, bc, region, spec.algorithm, spec.n_equil, spec.n_samples, spec.thin,
                        seed=spec.seed, chain_id=(_BC_KEY[bc], region.width, region.height, *key))
    st = series_stats(rec.sums)
    scale = renormalization_factor(region.a)
    return FieldMean(h, scale * st.mean, scale * st.stderr, st.tau_int, st.converged)


@dataclass
class TIResult:
    t: np.ndarray
    value: np.ndarray
    error: np.ndarray
    stat_error: np.ndarray
    quad_error: np.ndarray
    flagged: bool
    nodes: np.ndarray = field(repr=False, default=None)
    node_means: np.ndarray = field(repr=False, default=None)


def _panel_nodes(edges: np.ndarray, per_unit: int):
    """Composite Gauss-Legendre nodes/weights on the panels between ``edges``."""
    xs, ws, owner = [], [], []
    for k in range(len(edges) - 1):
        lo, hi = edges[k], edges[k + 1]
        if hi == lo:
            continue
        n = per_unit * max(1, math.ceil(hi - lo - 1e-12))
        x, w = np.polynomial.legendre.leggauss(n)
        xs.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
        owner.append(np.full(n, k))
    if not xs:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
    return np.concatenate(xs), np.concatenate(ws), np.concatenate(owner)


def _ti_level(edges, bc, region, spec, per_unit, level):
    x, w, owner = _panel_nodes(edges, per_unit * 2**level)
    res = parallel_map(lambda kv: mean_magnetization(kv[1], bc, region, spec, key=(level, kv[0])),
                       list(enumerate(x)), spec.threads)
    means = np.array([r.mean for r in res])
    ses = np.array([r.stderr for r in res])
    conv = all(r.converged for r in res)
    npan = len(edges) - 1
    inc = np.bincount(owner, weights=w * means, minlength=npan)
    var = np.bincount(owner, weights=(w * ses) ** 2, minlength=npan)
    return np.concatenate([[0.0], np.cumsum(inc)]), np.concatenate([[0.0], np.cumsum(var)]), conv, x, means


def log_mgf_ti_curve(t_grid, bc, region: LatticeRegion, spec: ChainSpec, nodes_per_unit: int = 16,
                     max_level: int = 2, refine: bool = True) -> TIResult:
    """log E[exp(t m)] for every t in ``t_grid`` (t >= 0) by integrating E_s[m]
    over s with composite Gauss-Legendre panels between grid points.

    The error is the propagated statistical error plus the change under
    doubling the node count; doubling repeats (up to ``max_level``) while
    that change exceeds the statistical error.
    """
    bc = BoundaryCondition.parse(bc)
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("use the flipped boundary condition for negative t")
    edges = np.unique(np.concatenate([[0.0], t]))
    val, var, conv, x, means = _ti_level(edges, bc, region, spec, nodes_per_unit, 0)
    quad = np.zeros_like(val)
    level = 0
    while refine and level < max_level:
        v2, var2, c2, x2, m2 = _ti_level(edges, bc, region, spec, nodes_per_unit, level + 1)
        quad = np.abs(v2 - val)
        val, var, conv, x, means = v2, var2, conv and c2, x2, m2
        level += 1
        if np.all(quad <= np.sqrt(var)):
            break
    idx = np.searchsorted(edges, t)
    stat = np.sqrt(var[idx])
    return TIResult(t, val[idx], stat + quad[idx], stat, quad[idx], not conv, x, means)


def log_mgf_ti(t: float, bc, region: LatticeRegion, spec: ChainSpec, **kw) -> tuple[float, float, bool]:
    """(value, error, flagged); negative t uses the sign-flipped boundary condition."""
    bc = BoundaryCondition.parse(bc)
    if t == 0:
        return 0.0, 0.0, False
    if t < 0:
        t, bc = -t, bc.flipped()
    r = log_mgf_ti_curve([t], bc, region, spec, **kw)
    return float(r.value[0]), float(r.error[0]), r.flagged


def mgf_naive(m_samples, t: float) -> tuple[float, bool]:
    """Plain average of exp(t m); flagged unreliable when the single largest
    term carries more than half of the sum."""
    m = np.asarray(m_samples, dtype=float)
    z = t * m
    zmax = z.max()
    w = np.exp(z - zmax)
    return float(math.exp(zmax) * w.mean()), bool(w.max() / w.sum() > 0.5)


@dataclass
class FreeEnergyCurve:
    bc: BoundaryCondition
    L: float
    a: float
    t: np.ndarray
    f: np.ndarray
    err: np.ndarray
    flagged: bool
    s_nodes: np.ndarray = field(repr=False, default=None)


def free_energy_curve(bc, sides, t_grid, a: float = 1.0, spec: ChainSpec | None = None,
                      **kw) -> list[FreeEnergyCurve]:
    """f_L(t) = L^-2 log E[exp(t m_L)] for each physical side L (fixed mesh a)."""
    bc = BoundaryCondition.parse(bc)
    spec = spec or ChainSpec()
    out = []
    for L in sides:
        n = round(L / a)
        if abs(n * a - L) > 1e-9 or n & (n - 1):
            raise ValueError(f"side {L!r} is not a dyadic multiple of the mesh {a!r}")
        region = LatticeRegion(n, n, a)
        t = np.asarray(t_grid, dtype=float)
        r = log_mgf_ti_curve(t, bc, region, spec, **kw)
        out.append(FreeEnergyCurve(bc, float(L), a, t, r.value / L**2, r.error / L**2, r.flagged, r.nodes))
    return out


def dyadic_monotonicity(curves: list[FreeEnergyCurve], n_sigma: float = 3.0) -> dict:
    """Check f_{2L} <= f_L (plus) or f_{2L} >= f_L (minus) within errors."""
    curves = sorted(curves, key=lambda c: c.L)
    bc = curves[0].bc
    sign = {BoundaryCondition.PLUS: 1.0, BoundaryCondition.MINUS: -1.0}.get(bc, 0.0)
    rows = []
    ok = True
    for c1, c2 in zip(curves, curves[1:]):
        diff = sign * (c2.f - c1.f)
        tol = n_sigma * np.hypot(c1.err, c2.err)
        good = diff <= tol + 1e-15
        ok &= bool(good.all())
        rows.append({"L": c1.L, "L2": c2.L, "diff": diff, "tol": tol, "ok": good})
    return {"bc": bc, "ok": ok, "rows": rows}


# ---------------------------------------------------------------------------
# characteristic functions
# ---------------------------------------------------------------------------


@dataclass
class CharfnEstimate:
    t: np.ndarray
    value: np.ndarray
    err_re: np.ndarray
    err_im: np.ndarray
    n: int
    terms: np.ndarray | None = field(repr=False, default=None)

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.value)

    @property
    def err_abs(self) -> np.ndarray:
        """Error of |E| by linear propagation of the component errors."""
        mod = np.abs(self.value)
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.sqrt((self.value.real * self.err_re) ** 2 + (self.value.imag * self.err_im) ** 2) / mod
        return np.where(mod > 0, e, np.hypot(self.err_re, self.err_im))


def _series_error(x: np.ndarray) -> float:
    if np.ptp(x) == 0:
        return 0.0
    return series_stats(x).stderr


def _estimate(t, terms, keep_terms):
    n = terms.shape[0]
    val = terms.mean(axis=0)
    er = np.array([_series_error(terms[:, k].real) for k in range(terms.shape[1])])
    ei = np.array([_series_error(terms[:, k].imag) for k in range(terms.shape[1])])
    return CharfnEstimate(t, val, er, ei, n, terms if keep_terms else None)


def charfn_naive(m_samples, t, keep_terms: bool = False) -> CharfnEstimate:
    """Empirical mean of exp(i t m) with autocorrelation-aware component errors."""
    m = np.asarray(m_samples, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    terms = np.exp(1j * np.outer(m, t))
    terms[:, t == 0] = 1.0
    return _estimate(t, terms, keep_terms)


@dataclass(frozen=True)
class ClusterSummary:
    """Cluster areas of one FK snapshot reduced to a size histogram."""

    sizes: np.ndarray
    counts: np.ndarray
    boundary_size: int
    scale: float
    sign: int

    @classmethod
    def from_decomposition(cls, d: ClusterDecomposition, bc) -> "ClusterSummary":
        bc = BoundaryCondition.parse(bc)
        inner = d.sizes[~d.boundary]
        u, c = np.unique(inner, return_counts=True)
        return cls(u, c, int(d.sizes[d.boundary].sum()), d.scale, bc.sign)


def charfn_fk_terms(summaries, t) -> np.ndarray:
    """Per-snapshot e^{i s t A+} prod_i cos(t A_i), computed in log space."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty((len(summaries), t.size), dtype=complex)
    for r, s in enumerate(summaries):
        c = np.cos(np.outer(t, s.scale * s.sizes))
        with np.errstate(divide="ignore"):
            logabs = np.log(np.abs(c)) @ s.counts
        neg = ((c < 0) @ (s.counts % 2)) % 2
        mag = np.exp(logabs) * np.where(neg == 1, -1.0, 1.0)
        phase = np.exp(1j * s.sign * t * s.scale * s.boundary_size) if s.sign else 1.0
        out[r] = mag * phase
    out[:, t == 0] = 1.0
    return out


def charfn_fk(summaries, t, keep_terms: bool = False) -> CharfnEstimate:
    """Cosine-product estimator of E[exp(i t m)] from FK snapshots: each free
    cluster contributes cos(t A_i) exactly, the boundary cluster its phase."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    terms = charfn_fk_terms(summaries, t)
    if all(s.sign == 0 for s in summaries):
        terms = terms.real.astype(complex)
    return _estimate(t, terms, keep_terms)


@dataclass
class FkSamples:
    m: np.ndarray
    summaries: list
    decomps: list | None = None


def fk_samples(params: ModelParams, bc, region: LatticeRegion, spec: ChainSpec, chain_id=0,
               keep_decomps: bool = False) -> FkSamples:
    """Paired samples from one Swendsen-Wang chain: the spin configuration
    after each update and the cluster histogram of the bonds it was drawn from."""
    bc = BoundaryCondition.parse(bc)
    scale = renormalization_factor(region.a)
    ms, sums, decs = [], [], []
    for snap in run_chain(params, bc, region, "sw", spec.n_equil, spec.n_meas, spec.thin, spec.seed, chain_id):
        d = decompose(snap.fk)
        ms.append(scale * snap.spin.total)
        sums.append(ClusterSummary.from_decomposition(d, bc))
        if keep_decomps:
            decs.append(d)
    return FkSamples(np.array(ms), sums, decs if keep_decomps else None)


# ---------------------------------------------------------------------------
# crossings and field concavity
# ---------------------------------------------------------------------------


def crossing_probability(bc, region: LatticeRegion, geometry, spec: ChainSpec,
                         params: ModelParams | None = None, chain_id=0) -> Estimate:
    """Frequency of an open circuit in an annulus (``Annulus``) or of a
    left-right open crossing of a rectangle (4-tuple) over SW snapshots."""
    params = params or ModelParams.critical(0.0, region.a)
    if isinstance(geometry, Annulus):
        event = lambda fk: open_circuit(fk, geometry)  # noqa: E731
    else:
        event = lambda fk: lr_crossing(fk, geometry)  # noqa: E731
    flags = [event(s.fk) for s in run_chain(params, bc, region, "sw", spec.n_equil, spec.n_meas,
                                            spec.thin, spec.seed, chain_id)]
    return proportion(np.array(flags, dtype=float))


def center_sites(region: LatticeRegion) -> np.ndarray:
    """Indices of the one, two or four sites closest to the centre."""
    W, H = region.width, region.height
    xs = [W // 2] if W % 2 else [W // 2 - 1, W // 2]
    ys = [H // 2] if H % 2 else [H // 2 - 1, H // 2]
    return np.array([region.index(i, j) for j in ys for i in xs])


def center_spin(bc, region: LatticeRegion, spec: ChainSpec, chain_id=0) -> Estimate:
    """<sigma_center> at h = 0 under Plus or Minus bc via FK connectivity:
    the spin average equals +-P(centre connected to the wired boundary)."""
    bc = BoundaryCondition.parse(bc)
    if bc.sign == 0:
        raise ValueError("centre spin vanishes under free boundary conditions at h = 0")
    params = ModelParams.critical(0.0, region.a)
    sites = center_sites(region)
    vals = []
    for s in run_chain(params, bc, region, "sw", spec.n_equil, spec.n_meas, spec.thin, spec.seed, chain_id):
        d = decompose(s.fk)
        vals.append(d.boundary[d.labels[sites]].mean())
    st = series_stats(bc.sign * np.array(vals))
    return Estimate(st.mean, st.stderr, st.count, st.tau_int)


def second_differences(h, y, err):
    """Divided second differences on a non-uniform grid and their errors
    (independent errors per point)."""
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    err = np.asarray(err, dtype=float)
    d2, e2 = [], []
    for k in range(1, len(h) - 1):
        a = 2.0 / ((h[k] - h[k - 1]) * (h[k + 1] - h[k - 1]))
        b = -2.0 / ((h[k] - h[k - 1]) * (h[k + 1] - h[k]))
        c = 2.0 / ((h[k + 1] - h[k]) * (h[k + 1] - h[k - 1]))
        d2.append(a * y[k - 1] + b * y[k] + c * y[k + 1])
        e2.append(math.sqrt((a * err[k - 1]) ** 2 + (b * err[k]) ** 2 + (c * err[k + 1]) ** 2))
    return np.array(d2), np.array(e2)


@dataclass
class GhsReport:
    h: np.ndarray
    mean: np.ndarray
    err: np.ndarray
    d2: np.ndarray
    d2_err: np.ndarray
    n_sigma: float

    @property
    def ok(self) -> bool:
        return bool(np.all(self.d2 <= self.n_sigma * self.d2_err + 1e-12))


def ghs_concavity_check(bc, h_grid, region: LatticeRegion, spec: ChainSpec, n_sigma: float = 3.0) -> GhsReport:
    h = np.asarray(h_grid, dtype=float)
    if np.any(h < 0) or np.any(np.diff(h) <= 0):
        raise ValueError("field grid must be non-negative and increasing")
    res = parallel_map(lambda kv: mean_magnetization(kv[1], bc, region, spec, key=(99, kv[0])),
                       list(enumerate(h)), spec.threads)
    mean = np.array([r.mean for r in res])
    err = np.array([r.stderr for r in res])
    d2, e2 = second_differences(h, mean, err)
    return GhsReport(h, mean, err, d2, e2, n_sigma)


def ghs_exact(bc, h_grid, region: LatticeRegion) -> GhsReport:
    h = np.asarray(h_grid, dtype=float)
    mean = np.array([enumerate_ising(region, bc, ModelParams.critical(x, region.a)).mean_m() for x in h])
    err = np.zeros_like(mean)
    d2, e2 = second_differences(h, mean, err)
    return GhsReport(h, mean, err, d2, e2, 0.0)
