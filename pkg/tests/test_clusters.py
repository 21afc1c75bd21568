import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from maglim.clusters import (
    Annulus,
    annulus_report,
    decompose,
    dual_circuit,
    dual_crossing,
    ghost_connected_mass,
    lr_crossing,
    mesoscopic_scan,
    open_circuit,
    primal_crossing,
    winding_sites,
)
from maglim.lattice import BoundaryCondition, LatticeRegion, ModelParams, renormalization_factor
from maglim.samplers import FkConfig, run_chain
from maglim.validation import edwards_sokal_check


def _config(region, omega, bc="free", boundary=None, tau=None):
    bc = BoundaryCondition.parse(bc)
    nb = len(region.boundary_edges) if bc.wired else 0
    boundary = np.zeros(nb, dtype=bool) if boundary is None else np.asarray(boundary, dtype=bool)
    tau = np.zeros(region.n_sites, dtype=bool) if tau is None else np.asarray(tau, dtype=bool)
    return FkConfig(np.asarray(omega, dtype=bool), boundary, tau, region, bc)


def _scipy_partition(region, omega):
    e = region.edges[np.asarray(omega, dtype=bool)]
    n = region.n_sites
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return connected_components(g, directed=False)[1]


def _same_partition(a, b):
    return len(set(zip(a.tolist(), b.tolist()))) == len(np.unique(a)) == len(np.unique(b))


def test_all_closed_singletons():
    r = LatticeRegion(5, 4, 0.25)
    d = decompose(FkConfig.uniform(r, "free", False))
    assert d.n_clusters == 20
    assert np.allclose(d.areas, renormalization_factor(0.25))


def test_all_open_single_cluster():
    r = LatticeRegion(5, 4, 0.25)
    d = decompose(FkConfig.uniform(r, "free", True))
    assert d.n_clusters == 1
    assert d.areas[0] == pytest.approx(20 * renormalization_factor(0.25))


def test_every_two_by_two_bond_state():
    r = LatticeRegion(2, 2)
    for bits in itertools.product((False, True), repeat=4):
        d = decompose(_config(r, bits))
        assert _same_partition(d.labels, _scipy_partition(r, bits))
        assert d.sizes.sum() == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_decompose_invariants(W, H, data):
    r = LatticeRegion(W, H, 0.5)
    omega = np.array(data.draw(st.lists(st.booleans(), min_size=r.n_edges, max_size=r.n_edges)), dtype=bool)
    bc = data.draw(st.sampled_from(["free", "plus"]))
    nb = len(r.boundary_edges) if bc == "plus" else 0
    bnd = np.array(data.draw(st.lists(st.booleans(), min_size=nb, max_size=nb)), dtype=bool)
    d = decompose(_config(r, omega, bc, bnd))
    assert d.sizes.sum() == r.n_sites
    assert d.areas.sum() == pytest.approx(renormalization_factor(0.5) * r.n_sites)
    assert d.boundary.sum() == (1 if bnd.any() else 0)
    # clusters are open-edge components, merged further only through the wired boundary
    ref = _scipy_partition(r, omega)
    if not bnd.any():
        assert _same_partition(d.labels, ref)
    # canonical labels: cluster c first appears before cluster c+1
    first = np.array([np.flatnonzero(d.labels == c)[0] for c in range(d.n_clusters)])
    assert np.all(np.diff(first) > 0)
    again = decompose(_config(r, omega, bc, bnd))
    assert np.array_equal(again.labels, d.labels)


def test_ghost_mass():
    r = LatticeRegion(1, 1, 0.5)
    assert ghost_connected_mass(decompose(_config(r, [], tau=[True]))) == renormalization_factor(0.5)
    r = LatticeRegion(6, 6)
    for s in run_chain(ModelParams.critical(0.0), "free", r, "sw", 5, 10, 1, seed=1):
        assert ghost_connected_mass(decompose(s.fk)) == 0.0


def test_ghost_mass_matches_exact_measure():
    checks = edwards_sokal_check(LatticeRegion(2, 2), "free", ModelParams.critical(0.5), n_samples=100_000, seed=5)
    g = [c for c in checks if c.quantity == "ghost_mass"][0]
    assert abs(g.z) < 3


def _edge_index(region):
    return {tuple(sorted(map(int, e))): k for k, e in enumerate(region.edges)}


def test_hand_built_ring():
    r = LatticeRegion(4, 4)
    ann = Annulus((0, 0, 4, 4), (1, 1, 3, 3))
    idx = _edge_index(r)
    ring = [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1), (3, 2), (3, 3), (2, 3), (1, 3), (0, 3), (0, 2), (0, 1)]
    sites = [r.index(i, j) for i, j in ring]
    omega = np.zeros(r.n_edges, dtype=bool)
    for x, y in zip(sites, sites[1:] + sites[:1]):
        omega[idx[tuple(sorted((x, y)))]] = True
    fk = _config(r, omega)
    assert open_circuit(fk, ann)
    assert not dual_crossing(fk, ann)
    for k in np.flatnonzero(omega):
        cut = omega.copy()
        cut[k] = False
        assert not open_circuit(_config(r, cut), ann)


def test_trivial_annulus_configurations():
    r = LatticeRegion(8, 8)
    ann = Annulus((0, 0, 8, 8), (3, 3, 5, 5))
    op = FkConfig.uniform(r, "free", True)
    cl = FkConfig.uniform(r, "free", False)
    assert open_circuit(op, ann) and not dual_circuit(op, ann)
    assert not open_circuit(cl, ann) and dual_circuit(cl, ann)
    assert primal_crossing(op, ann) and not dual_crossing(op, ann)
    assert dual_crossing(cl, ann) and not primal_crossing(cl, ann)


def test_annulus_needs_nesting():
    with pytest.raises(ValueError):
        Annulus((0, 0, 1, 1), (0.5, 0.5, 1.5, 1.5))


annuli = st.tuples(*[st.integers(0, 2)] * 2, *[st.integers(1, 3)] * 6, *[st.integers(0, 2)] * 2)


@settings(max_examples=300, deadline=None)
@given(annuli, st.floats(0.2, 0.8), st.integers(0, 2**31))
def test_circuit_duality(geo, p, seed):
    # margin, ring widths, hole size, ring widths, margin along each axis
    x0, y0, gl, gb, hw, hh, gr, gt, mx, my = geo
    ix0, iy0 = x0 + gl, y0 + gb
    ix1, iy1 = ix0 + hw, iy0 + hh
    x1, y1 = ix1 + gr, iy1 + gt
    W, H = x1 + mx, y1 + my
    r = LatticeRegion(W, H)
    ann = Annulus((x0, y0, x1, y1), (ix0, iy0, ix1, iy1))
    omega = np.random.default_rng(seed).random(r.n_edges) < p
    fk = _config(r, omega)
    oc, dc = open_circuit(fk, ann), dual_circuit(fk, ann)
    pc, dx = primal_crossing(fk, ann), dual_crossing(fk, ann)
    assert oc != dx
    assert dc != pc
    assert not (oc and dc)
    if oc:
        # a winding cluster reaches every side of the hole
        ws = winding_sites(fk, ann)
        i, j = r.coords(np.flatnonzero(ws))
        assert i.min() < ix0 and i.max() >= ix1 and j.min() < iy0 and j.max() >= iy1
    rep = annulus_report(fk, ann)
    assert rep.open_circuit == oc and rep.dual_circuit == dc and not rep.ghost_connected


def test_left_right_crossing():
    r = LatticeRegion(6, 6)
    assert lr_crossing(FkConfig.uniform(r, "free", True), (0, 0, 6, 6))
    assert not lr_crossing(FkConfig.uniform(r, "free", False), (0, 0, 6, 6))


def test_mesoscopic_trivial_cases():
    r = LatticeRegion(16, 16, 1 / 16)
    closed = FkConfig.uniform(r, "free", False)
    # 4x4 squares of 1/4 side; one-site clusters fall in a window around their area
    M = 1.01 * (0.25 ** (15 / 8)) / renormalization_factor(1 / 16)
    assert mesoscopic_scan(closed, None, None, 0.25, M) == 16
    assert mesoscopic_scan(FkConfig.uniform(r, "free", True), None, None, 0.25, 20) == 0
    with pytest.raises(ValueError):
        mesoscopic_scan(closed, None, None, 0.3, 20)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 0.7), st.integers(0, 2**31))
def test_mesoscopic_monotone_in_window(p, seed):
    r = LatticeRegion(32, 32, 1 / 32)
    fk = _config(r, np.random.default_rng(seed).random(r.n_edges) < p)
    counts = [mesoscopic_scan(fk, None, None, 1 / 8, M) for M in (1.5, 3, 10, 20, 100, 1e4)]
    assert all(x <= y for x, y in zip(counts, counts[1:]))
    strict, loose = mesoscopic_scan(fk, None, None, 1 / 8, 20, variant=True)
    assert strict <= loose
