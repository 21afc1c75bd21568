import numpy as np
import pytest

from maglim.lattice import LatticeRegion, ModelParams
from maglim.oracle import enumerate_ising, load_fixture, state_log_probs
from maglim.samplers import (
    ChainSpec,
    FkConfig,
    chain_rng,
    decode_states,
    run_chain,
    sample_series,
)
from maglim.stats import series_stats
from maglim.validation import edwards_sokal_check, oracle_check

ALGS = ("metropolis", "heatbath", "wolff", "sw")


@pytest.mark.parametrize("alg", ALGS)
def test_infinite_temperature_gives_fair_coins(alg):
    r = LatticeRegion(4, 4)
    rec = sample_series(ModelParams(0.0, 0.0), "free", r, alg, 10, 20_000, 1, seed=3, with_codes=True)
    spins = decode_states(rec.codes, r.n_sites)
    assert abs(spins.mean()) < 4 * 1 / np.sqrt(spins.size)
    # neighbours uncorrelated
    assert abs((spins[:, 0] * spins[:, 1]).mean()) < 4 / np.sqrt(len(spins))


@pytest.mark.parametrize("alg", ALGS)
def test_huge_field_absorbs_at_all_plus(alg):
    r = LatticeRegion(5, 5)
    snaps = list(run_chain(ModelParams.critical(h=50.0), "free", r, alg, 50, 10, 1, seed=1, start="minus"))
    assert all(np.all(s.spin.spins == 1) for s in snaps)


@pytest.mark.parametrize("alg", ALGS)
def test_neighbour_correlation_matches_enumeration(alg):
    r = LatticeRegion(2, 2)
    prm = ModelParams.critical()
    rec = sample_series(prm, "free", r, alg, 100, 400_000, 1, seed=5, with_codes=True)
    spins = decode_states(rec.codes, 4)
    x = (spins[:, 0] * spins[:, 1]).astype(float)
    st = series_stats(x)
    lp, _ = state_log_probs(r, "free", prm)
    codes = np.arange(16)
    s = decode_states(codes, 4)
    exact = float(np.dot(np.exp(lp), s[:, 0] * s[:, 1]))
    assert abs(st.mean - exact) < 3 * st.stderr


def test_sw_with_field_matches_enumeration():
    r = LatticeRegion(2, 2)
    res = oracle_check(r, "free", ModelParams.critical(0.3), "sw", n_samples=200_000, seed=2)
    assert res.passed, res


def test_wolff_three_by_three_plus_matches_fixture():
    fix = load_fixture()
    res = oracle_check(fix.region, fix.bc, fix.params, "wolff", n_samples=1_000_000, seed=4)
    assert res.tv < 0.01 and res.chi2_p > 1e-3, res


def test_wolff_mean_cluster_size_grows_with_size():
    means = []
    for L in (16, 32, 64):
        rec = sample_series(ModelParams.critical(), "free", LatticeRegion(L, L), "wolff", 500, 3000, 1, seed=6)
        means.append(rec.cluster_sizes.mean())
    assert means[0] < means[1] < means[2]


def test_zero_measurements_give_empty_stream():
    assert list(run_chain(ModelParams.critical(), "plus", LatticeRegion(4, 4), "sw", 10, 0)) == []
    rec = sample_series(ModelParams.critical(), "plus", LatticeRegion(4, 4), "sw", 10, 0)
    assert rec.sums.size == 0


@pytest.mark.parametrize("alg", ALGS)
def test_same_seed_bit_identical(alg):
    r = LatticeRegion(6, 5)
    kw = dict(n_equil=20, n_meas=30, thin=2, seed=11, chain_id=3)
    a = [s.spin.spins for s in run_chain(ModelParams.critical(0.2), "plus", r, alg, **kw)]
    b = [s.spin.spins for s in run_chain(ModelParams.critical(0.2), "plus", r, alg, **kw)]
    assert len(a) == 15
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    r1 = sample_series(ModelParams.critical(0.2), "plus", r, alg, 20, 100, 1, seed=11)
    r2 = sample_series(ModelParams.critical(0.2), "plus", r, alg, 20, 100, 1, seed=11)
    assert np.array_equal(r1.sums, r2.sums)


def test_chain_streams_independent_of_each_other():
    x = chain_rng(0, 1).random(4)
    y = chain_rng(0, 2).random(4)
    z = chain_rng(1, 1).random(4)
    assert not np.allclose(x, y) and not np.allclose(x, z)
    assert np.array_equal(x, chain_rng(0, 1).random(4))


def test_two_seeds_agree_on_block_magnetization():
    r = LatticeRegion(32, 32, 1 / 32)
    prm = ModelParams.critical(0.0, 1 / 32)
    out = []
    for seed in (1, 2):
        rec = sample_series(prm, "plus", r, "sw", 200, 4000, 1, seed=seed)
        out.append(series_stats(rec.sums.astype(float)))
    d = abs(out[0].mean - out[1].mean)
    assert d < 3 * np.hypot(out[0].stderr, out[1].stderr)


def test_fk_configs_have_no_ghost_bonds_at_zero_field():
    for bc in ("plus", "free", "minus"):
        for s in run_chain(ModelParams.critical(0.0), bc, LatticeRegion(6, 6), "sw", 5, 40, 1, seed=2):
            assert not s.fk.tau.any()
            assert s.fk.wired == (bc != "free")
            assert s.fk.boundary.size == (24 if bc != "free" else 0)


def test_fk_clusters_respect_spins():
    # open bonds join equal spins; ghost bonds attach only to spins of the field sign
    r = LatticeRegion(8, 8)
    for s in run_chain(ModelParams.critical(-0.8), "plus", r, "sw", 5, 30, 1, seed=9):
        sp = s.spin.spins
        e = r.edges[s.fk.omega]
        assert np.all(sp[e[:, 0]] == sp[e[:, 1]])
        assert np.all(sp[s.fk.tau] == -1)
        b = r.boundary_edges[s.fk.boundary, 0]
        assert np.all(sp[b] == 1)


def test_strong_coupling_single_cluster_all_plus():
    r = LatticeRegion(6, 6)
    snaps = list(run_chain(ModelParams(beta=40.0), "plus", r, "sw", 3, 3, 1, seed=1, start="minus"))
    for s in snaps:
        assert np.all(s.spin.spins == 1)
        assert s.fk.omega.all()


def test_fkg_ordering_of_mean_magnetization():
    r = LatticeRegion(8, 8, 1 / 8)
    prm = ModelParams.critical(0.0, 1 / 8)
    st = {}
    for k, bc in enumerate(("plus", "free", "minus")):
        rec = sample_series(prm, bc, r, "sw", 200, 20_000, 1, seed=7, chain_id=k)
        st[bc] = series_stats(rec.sums.astype(float))
    e = lambda x, y: 3 * np.hypot(st[x].stderr, st[y].stderr)  # noqa: E731
    assert st["plus"].mean >= st["free"].mean - e("plus", "free")
    assert st["free"].mean >= st["minus"].mean - e("free", "minus")
    assert abs(st["free"].mean) < e("free", "free")


def test_free_zero_field_mean_zero():
    r = LatticeRegion(10, 10)
    rec = sample_series(ModelParams.critical(), "free", r, "sw", 100, 20_000, 1, seed=8)
    st = series_stats(rec.sums.astype(float))
    assert abs(st.mean) < 3 * st.stderr


def test_edwards_sokal_marginals_on_two_by_two():
    checks = edwards_sokal_check(LatticeRegion(2, 2), "free", ModelParams.critical(0.5), n_samples=100_000, seed=3)
    names = [c.quantity for c in checks]
    assert "ghost_mass" in names or any("ghost" in n for n in names)
    bad = [c for c in checks if abs(c.z) > 4.0]
    assert not bad, bad


def test_fk_config_uniform_constructor():
    r = LatticeRegion(3, 3)
    c = FkConfig.uniform(r, "plus", True)
    assert c.omega.all() and c.boundary.size == 12 and c.boundary.all()
    assert FkConfig.uniform(r, "free", False).boundary.size == 0


def test_chain_spec_validation():
    assert ChainSpec("sw", 0, 100, 3).n_samples == 33
    with pytest.raises(ValueError):
        ChainSpec("glauber")
    with pytest.raises(ValueError):
        ChainSpec(thin=0)


def test_enumeration_matches_metropolis_on_fixture_region_plus_field():
    r = LatticeRegion(3, 3, 1 / 3)
    res = oracle_check(r, "minus", ModelParams.critical(1.0, 1 / 3), "metropolis", n_samples=300_000, seed=12)
    assert res.passed, res
    assert enumerate_ising(r, "minus", ModelParams.critical(1.0, 1 / 3)).prob.sum() == pytest.approx(1.0)
