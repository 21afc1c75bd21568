"""One runner per experiment kind. Each returns result tables and a status."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clusters import Annulus, mesoscopic_scan
from .config import ExperimentConfig
from .coupling import failure_decay, grand_coupling, prefix_failures
from .io import write_snapshots
from .lattice import BoundaryCondition, LatticeRegion, ModelParams, centered_square, renormalization_factor
from .observables import (charfn_fk, charfn_naive, crossing_probability, dyadic_monotonicity, fk_samples,
                          free_energy_curve, log_mgf_ti_curve, mgf_naive)
from .oracle import MAX_SITES
from .samplers import ChainSpec, parallel_map, run_chain, sample_series
from .scaling import kasahara_pipeline_selftest, mgf_exponent_fit, scaling_covariance_test, stretch_exponent_fit
from .stats import series_stats
from .validation import oracle_check

ORACLE_ALGORITHMS = ("metropolis", "heatbath", "wolff", "sw")


class GeometryError(ValueError):
    pass


@dataclass
class Table:
    name: str
    columns: list
    rows: list


@dataclass
class Outcome:
    tables: list = field(default_factory=list)
    passed: bool = True
    extra_files: list = field(default_factory=list)


def _spec(cfg: ExperimentConfig, threads) -> ChainSpec:
    return ChainSpec(cfg.algorithm, cfg.n_equil, cfg.n_meas, cfg.thin, cfg.seed, threads)


def _region(L: float, a: float) -> LatticeRegion:
    n = round(L / a)
    return LatticeRegion(n, n, a)


def _bc_id(bc) -> int:
    return {"plus": 1, "minus": 2, "free": 3}[BoundaryCondition.parse(bc).value]


def _h(cfg) -> float:
    return cfg.h[0] if cfg.h else 0.0


def run_oracle_validate(cfg, out: Path, threads) -> Outcome:
    rows = []
    ok = True
    algs = ORACLE_ALGORITHMS if cfg.algorithm == "all" else (cfg.algorithm,)
    k = 0
    for L in cfg.L:
        region = _region(L, cfg.a)
        if region.n_sites > MAX_SITES:
            raise GeometryError(f"oracle-validate needs at most {MAX_SITES} sites, got {region.n_sites}")
        for bc in cfg.bc:
            for h in cfg.h or (0.0,):
                params = ModelParams.critical(h, cfg.a)
                for alg in algs:
                    r = oracle_check(region, bc, params, alg, cfg.n_meas, cfg.seed, chain_id=k)
                    k += 1
                    ok &= r.passed
                    rows.append([alg, region.width, region.height, bc, h, r.n, r.thin, r.tv, r.chi2_p,
                                 "PASS" if r.passed else "FAIL"])
    cols = ["algorithm", "width", "height", "bc", "h", "n", "thin", "tv", "chi2_p", "status"]
    return Outcome([Table("oracle.csv", cols, rows)], ok)


def run_sample(cfg, out: Path, threads) -> Outcome:
    series, summary, extra = [], [], []
    scale = renormalization_factor(cfg.a)
    for L in cfg.L:
        region = _region(L, cfg.a)
        for bc in cfg.bc:
            for h in cfg.h or (0.0,):
                params = ModelParams.critical(h, cfg.a)

                def one(c, region=region, bc=bc, params=params, h=h, L=L):
                    key = (_bc_id(bc), region.width, c)
                    if cfg.dump:
                        snaps = list(run_chain(params, bc, region, cfg.algorithm, cfg.n_equil, cfg.n_meas,
                                               cfg.thin, cfg.seed, key))
                        name = f"snapshots_L{L:g}_{bc}_h{h:g}_c{c}.bin"
                        write_snapshots(out / name, snaps, h)
                        return np.array([s.spin.total for s in snaps]), name
                    rec = sample_series(params, bc, region, cfg.algorithm, cfg.n_equil, cfg.n_meas // cfg.thin,
                                        cfg.thin, cfg.seed, key)
                    return rec.sums, None

                res = parallel_map(one, range(cfg.chains), threads)
                for c, (sums, name) in enumerate(res):
                    if name:
                        extra.append(name)
                    for k, s in enumerate(sums):
                        series.append([L, bc, h, c, cfg.n_equil + (k + 1) * cfg.thin, scale * s])
                    st = series_stats(scale * np.asarray(sums, dtype=float))
                    summary.append([L, bc, h, c, st.count, st.mean, st.stderr, st.tau_int, int(st.converged)])
    return Outcome([
        Table("series.csv", ["L", "bc", "h", "chain", "sweep", "m"], series),
        Table("summary.csv", ["L", "bc", "h", "chain", "n", "mean", "stderr", "tau_int", "converged"], summary),
    ], True, extra)


def run_mgf(cfg, out: Path, threads) -> Outcome:
    spec = _spec(cfg, threads)
    rows = []
    t = np.asarray(cfg.t_grid)
    for L in cfg.L:
        region = _region(L, cfg.a)
        for bc in cfg.bc:
            r = log_mgf_ti_curve(t, bc, region, spec)
            rec = sample_series(ModelParams.critical(0.0, cfg.a), bc, region, cfg.algorithm, cfg.n_equil,
                                spec.n_samples, cfg.thin, cfg.seed, (_bc_id(bc), region.width, 0))
            m = renormalization_factor(cfg.a) * rec.sums
            for k, tk in enumerate(t):
                v, flag = mgf_naive(m, tk)
                rows.append([L, bc, tk, r.value[k], r.error[k], r.stat_error[k], r.quad_error[k], int(r.flagged),
                             np.log(v), int(flag)])
    cols = ["L", "bc", "t", "log_mgf_ti", "err", "stat_err", "quad_err", "ti_flagged", "log_mgf_naive",
            "naive_flagged"]
    return Outcome([Table("mgf.csv", cols, rows)])


def run_free_energy(cfg, out: Path, threads) -> Outcome:
    spec = _spec(cfg, threads)
    curves, rows = [], []
    for bc in cfg.bc:
        cs = free_energy_curve(bc, cfg.L, cfg.t_grid, cfg.a, spec, nodes_per_unit=4)
        curves += cs
        for c in cs:
            for k in range(c.t.size):
                rows.append([c.L, bc, c.t[k], c.f[k], c.err[k], int(c.flagged)])
    tables = [Table("free_energy.csv", ["L", "bc", "t", "f", "err", "flagged"], rows)]
    dy = []
    for bc in cfg.bc:
        cs = [c for c in curves if c.bc.value == bc]
        if bc == "free" or len(cs) < 2:
            continue
        rep = dyadic_monotonicity(cs)
        for r in rep["rows"]:
            for k in range(len(cfg.t_grid)):
                dy.append([bc, r["L"], r["L2"], cfg.t_grid[k], r["diff"][k], r["tol"][k], int(r["ok"][k])])
    tables.append(Table("dyadic.csv", ["bc", "L", "L2", "t", "signed_diff", "tol", "ok"], dy))
    fits = []
    try:
        rep = mgf_exponent_fit(curves, window="positive")
        for bc, f in rep.fits.items():
            fits.append([bc.value, f.exponent, f.exponent_err, f.prefactor, f.prefactor_err, f.chi2_red])
    except ValueError:
        pass
    tables.append(Table("exponent_fit.csv", ["bc", "alpha", "alpha_err", "b", "b_err", "chi2_red"], fits))
    return Outcome(tables)


def run_charfn(cfg, out: Path, threads) -> Outcome:
    spec = _spec(cfg, threads)
    t = np.asarray(cfg.t_grid)
    rows, fits = [], []
    for L in cfg.L:
        region = _region(L, cfg.a)
        for bc in cfg.bc:
            fs = fk_samples(ModelParams.critical(_h(cfg), cfg.a), bc, region, spec, (_bc_id(bc), region.width))
            fk = charfn_fk(fs.summaries, t)
            nv = charfn_naive(fs.m, t)
            for k in range(t.size):
                rows.append([L, bc, t[k], fk.value[k].real, fk.value[k].imag, fk.err_re[k], fk.err_im[k],
                             nv.value[k].real, nv.value[k].imag, nv.err_re[k], nv.err_im[k]])
            try:
                r = stretch_exponent_fit(t[t > 0], fk.value[t > 0].real if bc == "free" else fk.modulus[t > 0],
                                         fk.err_re[t > 0] if bc == "free" else fk.err_abs[t > 0])
                fits.append([L, bc, r.fit.exponent, r.fit.exponent_err, r.t_range[0], r.t_range[1],
                             int(r.resolved)])
            except ValueError:
                pass
    cols = ["L", "bc", "t", "fk_re", "fk_im", "fk_err_re", "fk_err_im", "naive_re", "naive_im",
            "naive_err_re", "naive_err_im"]
    return Outcome([Table("charfn.csv", cols, rows),
                    Table("stretch_fit.csv", ["L", "bc", "slope", "slope_err", "t_lo", "t_hi", "resolved"], fits)])


def _thinned_m(params, bc, region, cfg, key):
    rec = sample_series(params, bc, region, cfg.algorithm, cfg.n_equil, cfg.n_meas // cfg.thin, cfg.thin,
                        cfg.seed, key)
    return renormalization_factor(region.a) * rec.sums


def run_scaling(cfg, out: Path, threads) -> Outcome:
    side = cfg.L[0]
    bc = cfg.bc[0]
    params = ModelParams.critical(_h(cfg), cfg.a)
    r1, r2 = _region(side, cfg.a), _region(side * cfg.lam, cfg.a)
    m1, m2 = parallel_map(lambda rk: _thinned_m(params, bc, rk[0], cfg, (_bc_id(bc), rk[0].width, rk[1])),
                          [(r1, 0), (r2, 1)], threads)
    rep = scaling_covariance_test(m2, m1, cfg.lam, cfg.exponent, seed=cfg.seed)
    cols = ["side", "lam", "a", "bc", "exponent", "ks", "p_value", "n_small", "n_big"]
    return Outcome([Table("scaling.csv", cols, [[side, cfg.lam, cfg.a, bc, cfg.exponent, rep.distance,
                                                  rep.p_value, rep.n2, rep.n1]])])


def run_mesoscopic(cfg, out: Path, threads) -> Outcome:
    rows, summ = [], []
    for L in cfg.L:
        region = _region(L, cfg.a)
        for bc in cfg.bc:
            params = ModelParams.critical(_h(cfg), cfg.a)
            counts = [mesoscopic_scan(s.fk, region, None, cfg.eps, cfg.M) for s in
                      run_chain(params, bc, region, "sw", cfg.n_equil, cfg.n_meas, cfg.thin, cfg.seed,
                                (_bc_id(bc), region.width))]
            c = np.array(counts)
            rows += [[L, bc, k, x] for k, x in enumerate(counts)]
            if c.size:
                summ.append([L, bc, c.size, float((c >= 1).mean()), c.mean(), c.std() / c.mean() if c.mean() else
                             float("nan")])
    return Outcome([Table("mesoscopic.csv", ["L", "bc", "snapshot", "count"], rows),
                    Table("mesoscopic_summary.csv", ["L", "bc", "n", "frac_good", "mean", "cv"], summ)])


def run_crossing(cfg, out: Path, threads) -> Outcome:
    rows = []
    spec = _spec(cfg, threads)
    for L in cfg.L:
        region = _region(L, cfg.a)
        ann = Annulus(centered_square(region, cfg.outer * L), centered_square(region, cfg.inner * L))
        for bc in cfg.bc:
            e = crossing_probability(bc, region, ann, spec, ModelParams.critical(_h(cfg), cfg.a),
                                     (_bc_id(bc), region.width))
            rows.append([L, bc, cfg.inner, cfg.outer, e.value, e.stderr, e.n, e.tau_int])
    return Outcome([Table("crossing.csv", ["L", "bc", "inner", "outer", "p", "err", "n", "tau_int"], rows)])


def run_coupling(cfg, out: Path, threads) -> Outcome:
    if len(cfg.L) != 2:
        raise GeometryError("coupling needs geometry.L = L1, L2")
    L1, L2 = cfg.L
    max_annuli = None if cfg.max_annuli < 0 else cfg.max_annuli
    traces = grand_coupling(_h(cfg), cfg.a, L1, L2, cfg.chains, max_annuli, cfg.n_equil, cfg.n_meas, cfg.seed,
                            threads)
    tr = []
    for r, t in enumerate(traces):
        for rec in t.records:
            tr.append([r, rec.index, int(rec.circuit), int(rec.matched), int(rec.ghost), int(t.success == rec.index),
                       "" if t.interior_identical is None else int(t.interior_identical)])
    d = failure_decay(prefix_failures(traces)) if traces and traces[0].n_annuli else None
    dec = []
    if d is not None:
        for k in range(d.n_annuli.size):
            dec.append([int(d.n_annuli[k]), d.p_fail[k], d.log_p[k], d.log_p_err[k], d.slope, d.slope_err])
    return Outcome([
        Table("coupling_trace.csv", ["run", "annulus", "circuit", "matched", "ghost", "success",
                                     "interior_identical"], tr),
        Table("failure_decay.csv", ["n_annuli", "p_fail", "log_p", "log_p_err", "slope", "slope_err"], dec),
    ])


def run_kasahara(cfg, out: Path, threads) -> Outcome:
    r = kasahara_pipeline_selftest(cfg.alpha_prime, cfg.n_meas, cfg.seed)
    rows = [[cfg.alpha_prime, r.alpha_expected, r.alpha, r.fit.exponent_err, r.tail_exponent]]
    curve = [[r.t[k], r.log_mgf[k], r.log_mgf_err[k], r.log_mgf_exact[k]] for k in range(r.t.size)]
    return Outcome([Table("kasahara.csv", ["alpha_prime", "alpha_expected", "alpha_fit", "alpha_err",
                                           "tail_exponent"], rows),
                    Table("kasahara_curve.csv", ["t", "log_mgf", "err", "exact"], curve)])


RUNNERS = {
    "oracle-validate": run_oracle_validate,
    "sample": run_sample,
    "mgf": run_mgf,
    "free-energy": run_free_energy,
    "charfn": run_charfn,
    "scaling": run_scaling,
    "mesoscopic": run_mesoscopic,
    "crossing": run_crossing,
    "coupling": run_coupling,
    "kasahara-selftest": run_kasahara,
}
