"""Near-critical fields on nested boxes.

* a fixed family of smooth test functions on dyadic scale blocks and a
  weighted multi-scale energy distance between laws of pairing vectors;
* annulus matching events (open circuit joined to the ghost vertex);
* a monotone grand coupling between a plus-boundary box and a four times
  larger plus-boundary "proxy plane", explored annulus by annulus;
* an exact check that the field measure is the zero-field measure
  reweighted by exp(h m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .clusters import Annulus, decompose, winding_sites
from .lattice import BoundaryCondition, LatticeRegion, ModelParams, centered_square, renormalization_factor
from .oracle import OracleSizeError, state_log_probs
from .samplers import ChainSpec, FkConfig, bond_probability, chain_rng, parallel_map, run_chain
from .stats import Estimate, proportion

FAMILY_VERSION = "v1"
N_SCALES = 4
PROFILES = ("bump", "u_bump", "uv_bump")


def centered_box(side: float, a: float) -> LatticeRegion:
    """Square region of the given physical side centred on the origin."""
    n = round(side / a)
    if n < 1 or abs(n * a - side) > 1e-9 * max(1.0, side):
        raise ValueError(f"side {side!r} is not a multiple of the mesh {a!r}")
    o = -(n - 1) * a / 2.0
    return LatticeRegion(n, n, a, (o, o))


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


def _bump1d(u):
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class TestFamily:
    """Scale blocks Lambda_k of side window * 2^(k-4), k = 1..4, centred at
    the origin. Each block carries three profiles (bump, u*bump, u*v*bump)
    on each of its four quadrants: 48 functions, ordered by block, then
    quadrant, then profile."""

    window: float
    version: str = FAMILY_VERSION

    def __post_init__(self):
        if self.version != FAMILY_VERSION:
            raise ValueError(f"unknown test family version {self.version!r}")

    @property
    def size(self) -> int:
        return N_SCALES * 4 * len(PROFILES)

    def block_sides(self) -> np.ndarray:
        return self.window * 2.0 ** (np.arange(1, N_SCALES + 1) - N_SCALES)

    def block_of(self) -> np.ndarray:
        return np.repeat(np.arange(N_SCALES), 4 * len(PROFILES))

    def evaluate(self, region: LatticeRegion) -> np.ndarray:
        """(48, n_sites) samples of the family at the region's site positions."""
        x0, y0 = region.origin
        x1, y1 = x0 + (region.width - 1) * region.a, y0 + (region.height - 1) * region.a
        half = self.window / 2.0
        if x0 > -half + region.a / 2 + 1e-9 or x1 < half - region.a / 2 - 1e-9 or \
                y0 > -half + region.a / 2 + 1e-9 or y1 < half - region.a / 2 - 1e-9:
            raise ValueError(f"test functions on a window of side {self.window!r} exceed the region")
        pos = region.positions
        rows = []
        for s in self.block_sides():
            r = s / 4.0
            for cx, cy in ((-r, -r), (r, -r), (-r, r), (r, r)):
                u = (pos[:, 0] - cx) / r
                v = (pos[:, 1] - cy) / r
                b = _bump1d(u) * _bump1d(v)
                rows.extend([b, u * b, u * v * b])
        return np.array(rows)


def pairing_vectors(spins: np.ndarray, F: np.ndarray, a: float) -> np.ndarray:
    """(n_samples, n_functions) pairings a^(15/8) sum_x sigma_x f_j(x)."""
    return renormalization_factor(a) * (np.asarray(spins, dtype=float) @ F.T)


def energy_distance(X: np.ndarray, Y: np.ndarray) -> float:
    """sqrt(2E|X-Y| - E|X-X'| - E|Y-Y'|) with V-statistics (0 for identical samples)."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    if X.shape == Y.shape and np.array_equal(X, Y):
        return 0.0
    xy = cdist(X, Y).mean()
    xx = cdist(X, X).mean()
    yy = cdist(Y, Y).mean()
    return math.sqrt(max(2.0 * xy - xx - yy, 0.0))


@dataclass
class DistanceReport:
    per_scale: np.ndarray
    total: float
    total_err: float
    n: tuple[int, int]


def weighted_distance(PX: np.ndarray, PY: np.ndarray, family: TestFamily, n_boot: int = 0,
                      seed: int = 0) -> DistanceReport:
    """Sum_k 2^-k min(D_k, 1) with D_k the energy distance on scale block k."""
    blocks = family.block_of()

    def total(X, Y):
        d = np.array([energy_distance(X[:, blocks == k], Y[:, blocks == k]) for k in range(N_SCALES)])
        return d, float(np.sum(2.0 ** -(np.arange(N_SCALES) + 1) * np.minimum(d, 1.0)))

    d, tot = total(PX, PY)
    err = 0.0
    if n_boot:
        rng = np.random.default_rng(seed)
        reps = []
        for _ in range(n_boot):
            ix = rng.integers(0, len(PX), len(PX))
            iy = rng.integers(0, len(PY), len(PY))
            reps.append(total(PX[ix], PY[iy])[1])
        err = float(np.std(reps, ddof=1))
    return DistanceReport(d, tot, err, (len(PX), len(PY)))


def sample_pairings(h: float, a: float, side: float, family: TestFamily, spec: ChainSpec,
                    bc="plus", chain_id=0) -> np.ndarray:
    region = centered_box(side, a)
    F = family.evaluate(region)
    params = ModelParams.critical(h, a)
    spins = [s.spin.spins.copy() for s in run_chain(params, bc, region, spec.algorithm, spec.n_equil,
                                                    spec.n_meas, spec.thin, spec.seed, chain_id)]
    if not spins:
        return np.zeros((0, family.size))
    return pairing_vectors(np.array(spins), F, a)


def nested_field_distance(h: float, a: float, L_small: float, L_big: float, family: TestFamily | None,
                          spec: ChainSpec, window: float | None = None, h_big: float | None = None,
                          bc="plus", n_boot: int = 0, same_seed: bool = False) -> DistanceReport:
    """Weighted distance between the laws of the pairing vectors of the fields
    in the boxes of sides L_small and L_big (independent chains), for test
    functions supported in the window (default: the small box)."""
    window = L_small if window is None else window
    family = family or TestFamily(window)
    if family.window > L_small + 1e-12 or L_small > L_big + 1e-12:
        raise ValueError("test functions must fit in the small box and the small box in the big one")
    h_big = h if h_big is None else h_big
    id_small = (1, round(L_small / a))
    id_big = id_small if same_seed else (2, round(L_big / a))
    PX = sample_pairings(h, a, L_small, family, spec, bc, id_small)
    PY = sample_pairings(h_big, a, L_big, family, spec, bc, id_big)
    return weighted_distance(PX, PY, family, n_boot, spec.seed)


# ---------------------------------------------------------------------------
# annulus matching
# ---------------------------------------------------------------------------


@dataclass
class MatchingReport:
    joint: Estimate
    circuit: Estimate
    ghost: Estimate


def annulus_matching_probability(h: float, a: float, region: LatticeRegion, annulus: Annulus,
                                 spec: ChainSpec, bc="free", chain_id=0) -> MatchingReport:
    """Frequencies of {open circuit}, {circuit cluster joined to the ghost} and
    their intersection over Swendsen-Wang snapshots."""
    params = ModelParams.critical(h, a)
    circ, ghost = [], []
    for snap in run_chain(params, bc, region, "sw", spec.n_equil, spec.n_meas, spec.thin, spec.seed, chain_id):
        w = winding_sites(snap.fk, annulus)
        c = bool(w.any())
        g = False
        if c and snap.fk.tau.any():
            d = decompose(snap.fk)
            g = bool(d.ghost[d.labels[w]].any())
        circ.append(c)
        ghost.append(g)
    circ = np.array(circ, dtype=float)
    ghost = np.array(ghost, dtype=float)
    return MatchingReport(proportion(circ * ghost), proportion(circ), proportion(ghost))


# ---------------------------------------------------------------------------
# grand coupling
# ---------------------------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def _coupled_heatbath(box, plane, Wb, Wp, off, beta, h, rng, mask, masked):
    """Checkerboard heat-bath sweep of both systems with one uniform per plane
    site; a box site uses the uniform of the plane site it overlays. Both
    systems have plus boundary. With ``masked`` only sites where the box-sized
    ``mask`` is set are updated (in both systems)."""
    for colour in range(2):
        for jp in range(Wp):
            for ip in range(Wp):
                if (ip + jp) % 2 != colour:
                    continue
                ib = ip - off
                jb = jp - off
                inbox = 0 <= ib < Wb and 0 <= jb < Wb
                if masked and not (inbox and mask[jb * Wb + ib]):
                    continue
                u = rng.random()
                # plane site
                s = jp * Wp + ip
                loc = 0.0
                loc += plane[s + 1] if ip + 1 < Wp else 1.0
                loc += plane[s - 1] if ip > 0 else 1.0
                loc += plane[s + Wp] if jp + 1 < Wp else 1.0
                loc += plane[s - Wp] if jp > 0 else 1.0
                pu = 1.0 / (1.0 + math.exp(-2.0 * (beta * loc + h)))
                plane[s] = 1 if u < pu else -1
                if inbox:
                    t = jb * Wb + ib
                    loc = 0.0
                    loc += box[t + 1] if ib + 1 < Wb else 1.0
                    loc += box[t - 1] if ib > 0 else 1.0
                    loc += box[t + Wb] if jb + 1 < Wb else 1.0
                    loc += box[t - Wb] if jb > 0 else 1.0
                    pu = 1.0 / (1.0 + math.exp(-2.0 * (beta * loc + h)))
                    box[t] = 1 if u < pu else -1


@nb.njit(nogil=True, cache=True)
def _coupled_bonds(box, plane, Wb, Wp, off, p, pg, rng, om_box, om_plane, tau_box, tau_plane):
    """Edwards-Sokal bond step with shared uniforms on the overlapping edges
    and sites. Edge order is the region order: horizontal, then vertical."""
    nhp = Wp * (Wp - 1)
    nhb = Wb * (Wb - 1)
    for e in range(om_plane.size):
        if e < nhp:
            jp = e // (Wp - 1)
            ip = e % (Wp - 1)
            x = jp * Wp + ip
            y = x + 1
            ib = ip - off
            jb = jp - off
            eb = jb * (Wb - 1) + ib if (0 <= jb < Wb and 0 <= ib < Wb - 1) else -1
        else:
            x = e - nhp
            y = x + Wp
            jp = x // Wp
            ip = x % Wp
            ib = ip - off
            jb = jp - off
            eb = nhb + jb * Wb + ib if (0 <= jb < Wb - 1 and 0 <= ib < Wb) else -1
        u = rng.random()
        om_plane[e] = plane[x] == plane[y] and u < p
        if eb >= 0:
            if eb < nhb:
                bx = jb * Wb + ib
                by = bx + 1
            else:
                bx = eb - nhb
                by = bx + Wb
            om_box[eb] = box[bx] == box[by] and u < p
    for s in range(plane.size):
        u = rng.random()
        tau_plane[s] = plane[s] > 0 and u < pg
        ip = s % Wp - off
        jp = s // Wp - off
        if 0 <= ip < Wb and 0 <= jp < Wb:
            tau_box[jp * Wb + ip] = box[jp * Wb + ip] > 0 and u < pg


@dataclass
class AnnulusRecord:
    index: int
    circuit: bool
    matched: bool
    ghost: bool


@dataclass
class CouplingTrace:
    records: list
    success: int | None  # annulus index (1 = outermost) or None on failure
    n_annuli: int
    ordered: bool = True
    interior_identical: bool | None = None
    pairings: tuple | None = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.success is None


def coupling_annuli(L1: float, L2: float, max_annuli: int | None = None) -> list[tuple[float, float]]:
    """Ratio-4 annuli (outer side, inner side) from L2 inward, stopping at L1."""
    if L1 > L2:
        raise ValueError("need L1 <= L2")
    if L1 == L2:
        return []
    n = int(math.floor(math.log(L2 / L1, 4) + 1e-9))
    if n < 1:
        raise ValueError(f"no ratio-4 annulus fits between {L1!r} and {L2!r}")
    if max_annuli is not None:
        n = min(n, max_annuli)
    return [(L2 / 4**k, L2 / 4 ** (k + 1)) for k in range(n)]


def _interior_mask(box: LatticeRegion, cluster: np.ndarray, outer_rect) -> np.ndarray:
    """Sites enclosed by a winding cluster: complement of the cluster minus
    the 4-connected components that reach outside the annulus' outer square."""
    g = ~cluster.reshape(box.height, box.width)
    lab, _ = ndimage.label(g)
    from .lattice import rect_mask
    outside = ~rect_mask(box, outer_rect).bits.reshape(g.shape)
    frame = np.zeros_like(g)
    frame[0, :] = frame[-1, :] = frame[:, 0] = frame[:, -1] = True
    ext = np.unique(lab[(outside | frame) & g])
    inner = g & ~np.isin(lab, ext)
    return inner.ravel()


def grand_coupling_run(h: float, a: float, L1: float, L2: float, max_annuli: int | None = None,
                       n_equil: int = 50, n_post: int = 5, seed: int = 0, run_id: int = 0,
                       family: TestFamily | None = None, check_order: bool = False) -> CouplingTrace:
    """One coupled run of a plus-boundary box of side L2 and a plus-boundary
    proxy plane of side 4*L2 (same mesh and field).

    Spins evolve by checkerboard heat-bath with shared uniforms, starting from
    all plus (box) and all minus (plane); this keeps plane <= box on the box
    sites. A shared-uniform bond step then gives FK configurations whose plus
    edges and ghost edges are ordered the same way. Annuli are explored from
    the outside in; the first annulus with an open circuit present in both
    bond configurations and joined to the ghost in the plane is a success, the
    region it encloses is copied from plane to box and resampled identically.
    """
    annuli = coupling_annuli(L1, L2, max_annuli)
    family = family or TestFamily(L1)
    if not annuli:
        # nothing to couple when the sides agree; no annulus explored otherwise
        return CouplingTrace([], 0, 0, True, True) if L1 == L2 else CouplingTrace([], None, 0)
    box = centered_box(L2, a)
    plane = centered_box(4 * L2, a)
    Wb, Wp = box.width, plane.width
    if (Wp - Wb) % 2:
        raise ValueError("box and plane must share a centre site grid")
    off = (Wp - Wb) // 2
    beta = ModelParams.critical().beta
    hs = ModelParams.critical(h, a).h_site
    rng = chain_rng(seed, 7, run_id)
    sb = np.ones(box.n_sites, dtype=np.int8)
    sp = -np.ones(plane.n_sites, dtype=np.int8)
    nomask = np.zeros(0, dtype=np.bool_)
    ordered = True
    for _ in range(n_equil):
        _coupled_heatbath(sb, sp, Wb, Wp, off, beta, hs, rng, nomask, False)
        if check_order:
            ordered &= bool(np.all(sp.reshape(Wp, Wp)[off:off + Wb, off:off + Wb].ravel() <= sb))
    om_b = np.zeros(box.n_edges, dtype=np.bool_)
    om_p = np.zeros(plane.n_edges, dtype=np.bool_)
    tau_b = np.zeros(box.n_sites, dtype=np.bool_)
    tau_p = np.zeros(plane.n_sites, dtype=np.bool_)
    _coupled_bonds(sb, sp, Wb, Wp, off, bond_probability(beta), bond_probability(hs), rng,
                   om_b, om_p, tau_b, tau_p)
    sub = sp.reshape(Wp, Wp)[off:off + Wb, off:off + Wb].ravel()
    fk_plane = FkConfig(om_p, np.zeros(len(plane.boundary_edges), dtype=bool), tau_p, plane, BoundaryCondition.PLUS)
    # plane bonds seen through the box window
    pb = _restrict_edges(om_p, Wp, Wb, off)
    if check_order:
        plus_p = pb & (sub[box.edges[:, 0]] > 0)
        ordered &= bool(np.all(sub <= sb)) and bool(np.all(~plus_p | om_b))
        ordered &= bool(np.all(~tau_p.reshape(Wp, Wp)[off:off + Wb, off:off + Wb].ravel() | tau_b))
    both = FkConfig(pb & om_b, np.zeros(len(box.boundary_edges), dtype=bool), np.zeros(box.n_sites, dtype=bool),
                    box, BoundaryCondition.PLUS)
    plane_in_box = FkConfig(pb, np.zeros(len(box.boundary_edges), dtype=bool), np.zeros(box.n_sites, dtype=bool),
                            box, BoundaryCondition.PLUS)
    dec_p = None
    records = []
    success = None
    interior = None
    for k, (outer, inner) in enumerate(annuli, start=1):
        ann = Annulus(centered_square(box, outer), centered_square(box, inner))
        circuit = bool(winding_sites(plane_in_box, ann).any())
        wind = winding_sites(both, ann)
        matched = bool(wind.any())
        ghost = False
        if matched:
            if dec_p is None:
                dec_p = decompose(fk_plane)
            ii, jj = box.coords(np.flatnonzero(wind))
            ghost = bool(dec_p.ghost[dec_p.labels[(jj + off) * Wp + ii + off]].any())
        records.append(AnnulusRecord(k, circuit, matched, ghost))
        if matched and ghost:
            success = k
            cluster = _annulus_cluster(both, ann, wind)
            interior = _interior_mask(box, cluster, ann.outer)
            break
    trace = CouplingTrace(records, success, len(annuli), ordered)
    if success is not None:
        sp2 = sp.reshape(Wp, Wp)
        win = sp2[off:off + Wb, off:off + Wb].ravel()
        sb[interior] = win[interior]
        for _ in range(n_post):
            _coupled_heatbath(sb, sp, Wb, Wp, off, beta, hs, rng, interior, True)
        win = sp.reshape(Wp, Wp)[off:off + Wb, off:off + Wb].ravel()
        F = family.evaluate(box)
        support = np.any(F != 0, axis=0)
        pb_vec = pairing_vectors(sb[None, :], F, a)[0]
        pp_vec = pairing_vectors(win[None, :], F, a)[0]
        trace.interior_identical = bool(np.array_equal(sb[interior], win[interior])) and \
            bool(np.all(interior[support])) and bool(np.array_equal(pb_vec, pp_vec))
        trace.pairings = (pb_vec, pp_vec)
    return trace


def _restrict_edges(om_plane, Wp, Wb, off):
    hp = om_plane[: Wp * (Wp - 1)].reshape(Wp, Wp - 1)
    vp = om_plane[Wp * (Wp - 1):].reshape(Wp - 1, Wp)
    hb = hp[off:off + Wb, off:off + Wb - 1]
    vb = vp[off:off + Wb - 1, off:off + Wb]
    return np.concatenate([hb.ravel(), vb.ravel()])


def _annulus_cluster(fk: FkConfig, ann: Annulus, wind: np.ndarray) -> np.ndarray:
    """Sites of the winding clusters of the annulus subgraph."""
    from .clusters import _geometry, _cluster_roots
    region = fk.region
    cls, _, _ = _geometry(region, ann)
    e = region.edges
    ok = fk.omega & (cls[e[:, 0]] == 0) & (cls[e[:, 1]] == 0)
    sub = np.ascontiguousarray(e[ok])
    roots, _ = _cluster_roots(region.n_sites, sub, np.ones(len(sub), dtype=bool),
                              np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool))
    return np.isin(roots, np.unique(roots[wind]))


def grand_coupling(h: float, a: float, L1: float, L2: float, n_runs: int, max_annuli: int | None = None,
                   n_equil: int = 50, n_post: int = 5, seed: int = 0, threads: int | None = None,
                   check_order: bool = False) -> list[CouplingTrace]:
    fam = TestFamily(L1)
    return parallel_map(lambda r: grand_coupling_run(h, a, L1, L2, max_annuli, n_equil, n_post, seed, r,
                                                     fam, check_order), range(n_runs), threads)


@dataclass
class DecayReport:
    n_annuli: np.ndarray
    p_fail: np.ndarray
    log_p: np.ndarray
    log_p_err: np.ndarray
    slope: float
    slope_err: float

    @property
    def significance(self) -> float:
        return -self.slope / self.slope_err if self.slope_err > 0 else math.inf


def prefix_failures(traces) -> dict:
    """Failure flags after exploring only the first n annuli, n = 0..max.

    Annuli are explored outermost first and a run stops at its first
    success, so each full run also answers every shorter exploration."""
    n_max = max(t.n_annuli for t in traces)
    return {n: [t.success is None or t.success > n for t in traces] for n in range(n_max + 1)}


def failure_decay(fails_by_n: dict) -> DecayReport:
    """Weighted fit of log P(fail) against the number of annuli; values are
    lists of failure flags or of CouplingTrace."""
    ns, ps, ls, es = [], [], [], []
    for n, runs in sorted(fails_by_n.items()):
        flags = [r.failed if isinstance(r, CouplingTrace) else bool(r) for r in runs]
        k = sum(flags)
        N = len(flags)
        p = k / N
        ns.append(n)
        ps.append(p)
        # Haldane-Anscombe half-count: finite (upper-side) log p for zero failures
        ls.append(math.log((k + 0.5) / (N + 1)))
        es.append(math.sqrt(max(1.0 / (k + 0.5) - 1.0 / (N + 1), 0.0)))
    ns, ls, es = np.array(ns, float), np.array(ls), np.array(es)
    if ns.size < 2:
        return DecayReport(ns, np.array(ps), ls, es, math.nan, math.nan)
    w = 1 / es**2
    X = np.column_stack([ns, np.ones_like(ns)])
    A = X.T @ (X * w[:, None])
    coef = np.linalg.solve(A, X.T @ (w * ls))
    cov = np.linalg.inv(A)
    return DecayReport(ns, np.array(ps), ls, es, float(coef[0]), float(math.sqrt(cov[0, 0])))


def write_trace_csv(path, traces) -> None:
    import csv
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "annulus", "circuit", "matched", "ghost", "success"])
        for r, t in enumerate(traces):
            for rec in t.records:
                w.writerow([r, rec.index, int(rec.circuit), int(rec.matched), int(rec.ghost),
                            int(t.success == rec.index)])


# ---------------------------------------------------------------------------
# exact change of measure
# ---------------------------------------------------------------------------


@dataclass
class ReweightReport:
    h: float
    max_abs_diff: float
    max_rel_diff: float
    n_states: int

    def ok(self, tol: float = 1e-12) -> bool:
        return self.max_abs_diff <= tol


def rn_reweight_check(h: float, region: LatticeRegion, a: float | None = None, bc="free") -> ReweightReport:
    """Per-state comparison of the field-h law with the zero-field law
    reweighted by exp(h m) / E[exp(h m)], both enumerated exactly."""
    if region.n_sites > 9:
        raise OracleSizeError("reweighting check is limited to regions of at most 3x3 sites")
    a = region.a if a is None else a
    direct, _ = state_log_probs(region, bc, ModelParams.critical(h, a))
    base, S = state_log_probs(region, bc, ModelParams.critical(0.0, a))
    lw = base + h * renormalization_factor(a) * S
    lw -= logsumexp(lw)
    p1, p2 = np.exp(direct), np.exp(lw)
    return ReweightReport(h, float(np.abs(p1 - p2).max()),
                          float((np.abs(p1 - p2) / np.maximum(p1, 1e-300)).max()), p1.size)
