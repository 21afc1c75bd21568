import numpy as np
import pytest

from maglim.clusters import Annulus, open_circuit
from maglim.coupling import (
    CouplingTrace,
    TestFamily as Family,
    annulus_matching_probability,
    centered_box,
    coupling_annuli,
    energy_distance,
    failure_decay,
    grand_coupling,
    grand_coupling_run,
    nested_field_distance,
    pairing_vectors,
    prefix_failures,
    rn_reweight_check,
    weighted_distance,
)
from maglim.lattice import BETA_C, BoundaryCondition, LatticeRegion, centered_square
from maglim.oracle import OracleSizeError
from maglim.samplers import ChainSpec, FkConfig, bond_probability


def test_family_has_48_functions_on_four_scales():
    fam = Family(8.0)
    assert fam.size == 48
    F = fam.evaluate(centered_box(8.0, 0.25))
    assert F.shape == (48, 32 * 32)
    assert np.bincount(fam.block_of()).tolist() == [12] * 4
    assert np.allclose(fam.block_sides(), [1, 2, 4, 8])
    # each function vanishes outside the window and is not identically zero
    assert np.all(np.abs(F).max(axis=1) > 0)
    with pytest.raises(ValueError):
        Family(8.0).evaluate(centered_box(4.0, 0.25))
    with pytest.raises(ValueError):
        Family(8.0, version="v0")


def test_centered_box():
    b = centered_box(4.0, 0.5)
    assert b.width == 8
    assert b.positions.mean(axis=0) == pytest.approx([0.0, 0.0], abs=1e-12)
    with pytest.raises(ValueError):
        centered_box(1.0, 0.3)


def test_pairing_vectors_linear():
    rng = np.random.default_rng(0)
    s = rng.choice([-1, 1], (5, 16))
    F = rng.standard_normal((3, 16))
    P = pairing_vectors(s, F, 0.5)
    assert np.allclose(P, 0.5 ** 1.875 * s @ F.T)


def test_energy_distance():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((300, 3))
    assert energy_distance(X, X) == 0.0
    near = energy_distance(X, rng.standard_normal((300, 3)))
    far = energy_distance(X, rng.standard_normal((300, 3)) + 2)
    assert near < 0.3 < far


def test_weighted_distance_bounded_and_zero_on_identical():
    fam = Family(1.0)
    rng = np.random.default_rng(2)
    X = rng.standard_normal((100, 48))
    assert weighted_distance(X, X, fam).total == 0.0
    rep = weighted_distance(X, X + 1000, fam, n_boot=5)
    assert rep.total == pytest.approx(sum(2.0 ** -k for k in range(1, 5)))


def test_nested_distance_same_seed_same_geometry_is_zero():
    spec = ChainSpec("sw", 20, 50, 1, seed=3)
    rep = nested_field_distance(0.0, 1.0, 8.0, 8.0, None, spec, same_seed=True)
    assert rep.total == 0.0
    with pytest.raises(ValueError):
        nested_field_distance(0.0, 1.0, 16.0, 8.0, None, spec)


def test_nested_distance_field_negative_control():
    spec = ChainSpec("sw", 100, 400, 1, seed=4)
    same = nested_field_distance(0.0, 1.0, 8.0, 8.0, None, spec, n_boot=20)
    diff = nested_field_distance(0.0, 1.0, 8.0, 8.0, None, spec, h_big=1.0, n_boot=20)
    assert diff.total > same.total + 3 * np.hypot(diff.total_err, same.total_err)


def test_matching_zero_field_never_touches_ghost():
    r = LatticeRegion(16, 16, 1 / 16)
    ann = Annulus(centered_square(r, 1.0), centered_square(r, 0.5))
    rep = annulus_matching_probability(0.0, 1 / 16, r, ann, ChainSpec("sw", 50, 300, 1, seed=5))
    assert rep.ghost.value == 0.0 and rep.joint.value == 0.0


def test_matching_ghost_clause_saturates_in_strong_field():
    # at site field 5 all spins are plus and every site is ghost-joined, so the
    # joint event is the circuit event of plain bond percolation at p = 1 - e^(-2 beta)
    L = 32
    r = LatticeRegion(L, L, 1 / L)
    ann = Annulus(centered_square(r, 1.0), centered_square(r, 0.5))
    h = 5.0 / (1 / L) ** 1.875
    rep = annulus_matching_probability(h, 1 / L, r, ann, ChainSpec("sw", 20, 2000, 1, seed=6))
    assert rep.joint.value == rep.circuit.value > 0
    rng = np.random.default_rng(7)
    p = bond_probability(BETA_C)
    perc = np.mean([open_circuit(FkConfig(rng.random(r.n_edges) < p, np.zeros(0, bool), np.zeros(r.n_sites, bool),
                                          r, BoundaryCondition.FREE), ann) for _ in range(4000)])
    err = np.hypot(rep.circuit.stderr, np.sqrt(perc * (1 - perc) / 4000))
    assert abs(rep.circuit.value - perc) < 3 * err


def test_matching_non_decreasing_with_annulus_size():
    vals = []
    for L in (16, 32, 64):
        r = LatticeRegion(L, L, 1.0)
        ann = Annulus(centered_square(r, L), centered_square(r, L / 2))
        vals.append(annulus_matching_probability(1.0, 1.0, r, ann, ChainSpec("sw", 100, 1000, 1, seed=8)).joint)
    for x, y in zip(vals, vals[1:]):
        assert y.value >= x.value - 3 * np.hypot(x.stderr, y.stderr)


def test_coupling_annuli():
    assert coupling_annuli(8, 8) == []
    assert coupling_annuli(8, 32) == [(32, 8)]
    assert coupling_annuli(8, 128) == [(128, 32), (32, 8)]
    assert coupling_annuli(8, 128, max_annuli=1) == [(128, 32)]
    with pytest.raises(ValueError):
        coupling_annuli(8, 16)
    with pytest.raises(ValueError):
        coupling_annuli(16, 8)


def test_equal_sides_couple_immediately():
    t = grand_coupling_run(1.0, 1.0, 8, 8)
    assert t.success == 0 and not t.failed and t.interior_identical
    assert grand_coupling_run(1.0, 1.0, 8, 32, max_annuli=0).failed


def test_grand_coupling_preserves_order_and_copies_interior():
    traces = grand_coupling(1.0, 1.0, 8, 32, 12, n_equil=30, seed=7, check_order=True)
    assert all(t.ordered for t in traces)
    ok = [t for t in traces if not t.failed]
    assert ok
    assert all(t.interior_identical for t in ok)
    again = grand_coupling(1.0, 1.0, 8, 32, 12, n_equil=30, seed=7)
    assert [t.success for t in again] == [t.success for t in traces]


def test_prefix_failures_and_decay():
    tr = [CouplingTrace([], s, 3) for s in (1, 1, 2, 3, None, 2, 1, None)]
    pf = prefix_failures(tr)
    assert sorted(pf) == [0, 1, 2, 3]
    assert sum(pf[0]) == 8 and sum(pf[1]) == 5 and sum(pf[2]) == 3 and sum(pf[3]) == 2
    d = failure_decay(pf)
    assert d.slope < 0 and d.significance > 0
    assert np.all(np.diff(d.p_fail) <= 0)
    # zero failures still give a finite point
    d = failure_decay({0: [True] * 10, 1: [False] * 10})
    assert np.isfinite(d.log_p).all() and d.slope < 0


def test_reweighting_exact():
    for h, r, bc in ((0.0, LatticeRegion(2, 2), "free"), (0.7, LatticeRegion(2, 2), "free"),
                     (0.3, LatticeRegion(3, 3), "plus"), (-1.2, LatticeRegion(3, 2, 0.5), "minus")):
        rep = rn_reweight_check(h, r, bc=bc)
        assert rep.ok(1e-12), rep
    assert rn_reweight_check(0.0, LatticeRegion(3, 3), bc="plus").max_abs_diff < 1e-15
    with pytest.raises(OracleSizeError):
        rn_reweight_check(0.3, LatticeRegion(4, 4))
