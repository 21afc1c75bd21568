"""Sampler-versus-enumeration checks shared by the test suite and the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .clusters import decompose, ghost_connected_mass
from .lattice import BoundaryCondition, LatticeRegion, ModelParams
from .oracle import enumerate_fk, enumerate_ising
from .samplers import FkConfig, sample_series
from .stats import series_stats

TV_TOL = 0.01
CHI2_P_MIN = 1e-3


@dataclass
class OracleCheck:
    algorithm: str
    region: tuple[int, int]
    bc: str
    h: float
    n: int
    thin: int
    tv: float
    chi2_p: float
    inflation: float

    @property
    def passed(self) -> bool:
        return self.tv < TV_TOL and self.chi2_p > CHI2_P_MIN


def _thinning(params, bc, region, algorithm, seed) -> int:
    """Odd thinning of about one integrated autocorrelation time of S; the
    residual correlation is absorbed by the chi-square inflation factor.

    Odd because Metropolis on a free site flips deterministically at zero
    cost, a period-two orbit that even thinning would freeze."""
    pilot = sample_series(params, bc, region, algorithm, 200, 20_000, 1, seed=seed, chain_id=(99,))
    tau = series_stats(pilot.sums).tau_int
    t = max(1, int(math.ceil(tau)))
    return t if t % 2 else t + 1


def oracle_check(region: LatticeRegion, bc, params: ModelParams, algorithm: str,
                 n_samples: int = 1_000_000, seed: int = 0, chain_id=0) -> OracleCheck:
    """Total-variation distance and chi-square test of the sampled law of S
    against exhaustive enumeration.

    Samples are thinned to about one autocorrelation time; the chi-square statistic is
    further divided by the residual variance inflation 2*tau_int (>= 1) of
    the thinned series.
    """
    bc = BoundaryCondition.parse(bc)
    exact = enumerate_ising(region, bc, params)
    thin = _thinning(params, bc, region, algorithm, seed)
    rec = sample_series(params, bc, region, algorithm, 100 * thin, n_samples, thin, seed=seed, chain_id=chain_id)
    n = region.n_sites
    counts = np.bincount((rec.sums + n) // 2, minlength=n + 1)
    p_exact = np.zeros(n + 1)
    p_exact[(exact.S + n) // 2] = exact.prob
    freq = counts / n_samples
    tv = 0.5 * float(np.abs(freq - p_exact).sum())
    infl = max(1.0, 2.0 * series_stats(rec.sums).tau_int) if np.ptp(rec.sums) else 1.0
    expected = p_exact * n_samples
    # pool bins with small expectation into their neighbour
    obs, exp_ = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5.0:
            obs.append(acc_o)
            exp_.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_:
            obs[-1] += acc_o
            exp_[-1] += acc_e
        else:
            obs.append(acc_o)
            exp_.append(acc_e)
    obs = np.array(obs)
    exp_ = np.array(exp_)
    if obs.size < 2:
        p = 1.0 if np.all(obs == exp_) or exp_.sum() == 0 else 0.0
    else:
        chi2 = float(((obs - exp_) ** 2 / exp_).sum()) / infl
        p = float(sstats.chi2.sf(chi2, obs.size - 1))
    return OracleCheck(algorithm, (region.width, region.height), bc.value, params.h, n_samples, thin, tv, p, infl)


@dataclass
class EsCheck:
    quantity: str
    sampled: float
    stderr: float
    exact: float

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.sampled == self.exact else math.inf
        return (self.sampled - self.exact) / self.stderr

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def _code_config(code: int, region, bc, n_b) -> FkConfig:
    m = region.n_edges + n_b + region.n_sites
    bits = ((code >> np.arange(m)) & 1).astype(bool)
    return FkConfig(bits[: region.n_edges], bits[region.n_edges: region.n_edges + n_b],
                    bits[region.n_edges + n_b:], region, bc)


def edwards_sokal_check(region: LatticeRegion, bc, params: ModelParams, n_samples: int = 200_000,
                        seed: int = 0) -> list[EsCheck]:
    """Per-bond open probabilities, mean cluster number and mean ghost mass of
    the Swendsen-Wang bond configurations against the exact FK measure."""
    bc = BoundaryCondition.parse(bc)
    exact = enumerate_fk(region, bc, params)
    n_b = exact.n_boundary
    rec = sample_series(params, bc, region, "sw", 200, n_samples, 1, seed=seed, with_fk=True)
    codes = rec.fk_codes
    m = exact.n_bits
    out = []
    bits = ((codes[:, None] >> np.arange(m)[None, :]) & 1).astype(float)
    marg = exact.edge_marginals()
    names = [f"edge{e}" for e in range(region.n_edges)] + [f"wire{k}" for k in range(n_b)] + \
        [f"ghost{x}" for x in range(region.n_sites)]
    for k in range(m):
        st = series_stats(bits[:, k])
        out.append(EsCheck(names[k], st.mean, st.stderr, float(marg[k])))
    # cluster count and ghost mass through the decomposition of each distinct code
    uniq, inv = np.unique(np.concatenate([codes, exact.codes]), return_inverse=True)
    ncl = np.empty(uniq.size)
    gm = np.empty(uniq.size)
    for i, c in enumerate(uniq):
        d = decompose(_code_config(int(c), region, bc, n_b))
        ncl[i] = d.n_clusters
        gm[i] = ghost_connected_mass(d)
    samp, ex = inv[: codes.size], inv[codes.size:]
    for name, table in (("clusters", ncl), ("ghost_mass", gm)):
        series = table[samp]
        st = series_stats(series)
        out.append(EsCheck(name, st.mean, st.stderr if np.ptp(series) else 0.0, exact.expect(table[ex])))
    return out
