"""Power-law fits, the MGF/tail Legendre transfer, a synthetic check of the
transfer pipeline, and two-sample tests of scaling covariance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

FIELD_EXPONENT = 15.0 / 8.0


@dataclass
class ScalingFit:
    exponent: float
    prefactor: float
    exponent_err: float
    prefactor_err: float
    window: tuple[int, int]
    chi2_red: float
    residuals: np.ndarray = field(repr=False)
    policy: str = "all"

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "err": self.exponent_err,
            "prefactor": self.prefactor,
            "prefactor_err": self.prefactor_err,
            "window": list(self.window),
            "chi2": self.chi2_red,
            "policy": self.policy,
        }


def _wls(lx, ly, sig):
    """Weighted line fit; returns (slope, intercept, cov, chi2_red, residuals)."""
    n = lx.size
    X = np.column_stack([lx, np.ones(n)])
    if sig is None:
        coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
        res = ly - X @ coef
        dof = n - 2
        s2 = float(res @ res) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(X.T @ X)
        return coef[0], coef[1], cov, s2, res
    w = 1.0 / sig**2
    A = X.T @ (X * w[:, None])
    coef = np.linalg.solve(A, X.T @ (w * ly))
    res = ly - X @ coef
    dof = n - 2
    chi2 = float((w * res**2).sum()) / dof if dof > 0 else 0.0
    cov = np.linalg.inv(A)
    if chi2 > 1.0:
        # scale errors when the scatter exceeds the quoted errors
        cov = cov * chi2
    return coef[0], coef[1], cov, chi2, res


def _plateau_window(lx, ly, sig, width: int = 3, run: int = 3) -> tuple[int, int]:
    """Longest stretch of >= ``run`` consecutive sliding windows whose slopes
    agree with their neighbours within one standard error."""
    n = lx.size
    if n < width + run - 1:
        return 0, n
    slopes, errs = [], []
    for k in range(n - width + 1):
        s = slice(k, k + width)
        b, _, cov, _, _ = _wls(lx[s], ly[s], None if sig is None else sig[s])
        slopes.append(b)
        errs.append(math.sqrt(max(cov[0, 0], 0.0)))
    slopes = np.array(slopes)
    errs = np.array(errs)
    agree = np.abs(np.diff(slopes)) <= np.hypot(errs[1:], errs[:-1]) + 1e-12
    best = (0, 0)
    k = 0
    while k < agree.size:
        if agree[k]:
            j = k
            while j < agree.size and agree[j]:
                j += 1
            if j - k + 1 >= run and j - k >= best[1] - best[0]:
                best = (k, j)
            k = j
        else:
            k += 1
    if best == (0, 0):
        return 0, n
    return best[0], best[1] + width


def fit_power_law(x, y, yerr=None, window="all") -> ScalingFit:
    """Fit y = A x^p by weighted least squares on (log x, log y).

    ``window`` is "all", "plateau" or an index pair (lo, hi) (half-open).
    Errors come from the regression covariance, scaled by the reduced
    chi-square when that exceeds one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sig_full = None if yerr is None else np.asarray(yerr, dtype=float)
    if window == "all":
        lo, hi = 0, x.size
    elif window == "plateau":
        ok = (x > 0) & (y > 0)
        if not ok.all():
            raise ValueError("non-positive data")
        ls = None if sig_full is None else sig_full / y
        lo, hi = _plateau_window(np.log(x), np.log(y), ls)
    else:
        lo, hi = map(int, window)
    if not (0 <= lo < hi <= x.size) or hi - lo < 2:
        raise ValueError(f"bad fit window {window!r}")
    xs, ys = x[lo:hi], y[lo:hi]
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit needs positive x and y in the window")
    sig = None
    if sig_full is not None:
        sig = sig_full[lo:hi] / ys
        if np.any(sig <= 0):
            sig = None
    b, a, cov, chi2, res = _wls(np.log(xs), np.log(ys), sig)
    return ScalingFit(float(b), float(math.exp(a)), float(math.sqrt(max(cov[0, 0], 0.0))),
                      float(math.exp(a) * math.sqrt(max(cov[1, 1], 0.0))), (lo, hi), float(chi2), res,
                      window if isinstance(window, str) else "fixed")


# ---------------------------------------------------------------------------
# Legendre transfer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LegendrePair:
    b: float
    alpha: float
    c: float
    alpha_prime: float
    c_numeric: float
    direction: str = "mgf->tail"


def conjugate_exponent(alpha: float) -> float:
    if not alpha > 1:
        raise ValueError(f"exponent must exceed 1, got {alpha!r}")
    return 1.0 / (1.0 - 1.0 / alpha)


def legendre_constant(b: float, alpha: float) -> float:
    """c with sup_t (t x - b t^alpha) = c x^(alpha/(alpha-1))."""
    conjugate_exponent(alpha)
    return (1.0 - 1.0 / alpha) * math.exp(-math.log(alpha * b) / (alpha - 1.0))


def legendre_sup(b: float, alpha: float) -> float:
    """The same constant from a bounded numerical maximisation.

    By homogeneity the sup may be taken at any x > 0; x = alpha*b puts the
    maximiser at t = 1 so every quantity stays O(1).
    """
    x = alpha * b
    g = lambda t: -(t * x - b * t**alpha)  # noqa: E731
    r = minimize_scalar(g, bounds=(1e-6, 10.0), method="bounded", options={"xatol": 1e-12})
    ap = conjugate_exponent(alpha)
    return -r.fun * math.exp(-ap * math.log(x))


def legendre_transfer(b: float, alpha: float) -> LegendrePair:
    if not b > 0:
        raise ValueError("prefactor must be positive")
    ap = conjugate_exponent(alpha)
    return LegendrePair(b, alpha, legendre_constant(b, alpha), ap, legendre_sup(b, alpha))


def legendre_inverse(c: float, alpha_prime: float) -> LegendrePair:
    """Tail side (c, alpha') back to the MGF side (b, alpha); the transform is an involution."""
    p = legendre_transfer(c, alpha_prime)
    return LegendrePair(p.c, p.alpha_prime, c, alpha_prime, p.c_numeric, "tail->mgf")


# ---------------------------------------------------------------------------
# synthetic pipeline
# ---------------------------------------------------------------------------


@dataclass
class KasaharaReport:
    alpha_prime: float
    alpha_expected: float
    fit: ScalingFit
    t: np.ndarray
    log_mgf: np.ndarray
    log_mgf_err: np.ndarray
    log_mgf_exact: np.ndarray
    tail_exponent: float

    @property
    def alpha(self) -> float:
        return self.fit.exponent


def _tilted_table(t: float, ap: float, n_table: int):
    """Grid and normalised CDF of the density proportional to exp(t x - |x|^ap)."""
    xm = (t / ap) ** (1.0 / (ap - 1.0)) if t > 0 else 0.0
    curv = ap * (ap - 1.0) * xm ** (ap - 2.0) if xm > 0 else 1.0
    s = 1.0 / math.sqrt(curv) if curv > 0 else 1.0
    lo = min(xm - 12 * s, -3.0)
    hi = max(xm + 12 * s, 3.0)
    x = np.linspace(lo, hi, n_table)
    logp = t * x - np.abs(x) ** ap
    return x, logp


def _sample_tilted(t, ap, n, rng, n_table):
    x, logp = _tilted_table(t, ap, n_table)
    w = np.exp(logp - logp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]))])
    cdf /= cdf[-1]
    u = rng.random(n)
    return np.interp(u, cdf, x)


def _exact_log_mgf(t, ap, n_table):
    x0, l0 = _tilted_table(0.0, ap, n_table)
    x1, l1 = _tilted_table(t, ap, n_table)
    return (logsumexp(l1) + math.log(x1[1] - x1[0])) - (logsumexp(l0) + math.log(x0[1] - x0[0]))


def kasahara_pipeline_selftest(alpha_prime: float, budget: int = 200_000, seed: int = 0,
                               t_fit=(1e2, 1e4), n_fit: int = 17, per_panel: int = 16,
                               n_table: int = 1 << 18) -> KasaharaReport:
    """Recover the MGF exponent from samples of a density ~ exp(-|x|^alpha').

    d/dt log E[e^{tX}] is the mean under the tilted density, which is sampled
    exactly by inverse CDF on a dense table. Integrating those means over
    geometric Gauss-Legendre panels gives log E[e^{tX}]; a power-law fit at
    large t returns alpha, to be compared with alpha'/(alpha'-1).
    """
    ap = float(alpha_prime)
    if not ap > 1:
        raise ValueError("tail exponent must exceed 1")
    rng = np.random.Generator(np.random.Philox(seed))
    t_pts = np.geomspace(t_fit[0], t_fit[1], n_fit)
    edges = np.unique(np.concatenate([[0.0], np.geomspace(1e-2, t_fit[0], 8), t_pts]))
    xg, wg = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights, owner = [], [], []
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wg)
        owner.append(np.full(per_panel, k))
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    owner = np.concatenate(owner)
    n_per = max(2, budget // nodes.size)
    means = np.empty(nodes.size)
    ses = np.empty(nodes.size)
    for i, t in enumerate(nodes):
        xs = _sample_tilted(t, ap, n_per, rng, n_table)
        means[i] = xs.mean()
        ses[i] = xs.std(ddof=1) / math.sqrt(n_per)
    inc = np.bincount(owner, weights=weights * means, minlength=len(edges) - 1)
    var = np.bincount(owner, weights=(weights * ses) ** 2, minlength=len(edges) - 1)
    cum = np.concatenate([[0.0], np.cumsum(inc)])
    cvar = np.concatenate([[0.0], np.cumsum(var)])
    idx = np.searchsorted(edges, t_pts)
    lm = cum[idx]
    le = np.sqrt(cvar[idx])
    fit = fit_power_law(t_pts, lm, le)
    exact = np.array([_exact_log_mgf(t, ap, n_table) for t in t_pts])
    tail = conjugate_exponent(fit.exponent) if fit.exponent > 1 else math.inf
    return KasaharaReport(ap, conjugate_exponent(ap), fit, t_pts, lm, le, exact, tail)


# ---------------------------------------------------------------------------
# two-sample tests
# ---------------------------------------------------------------------------


def ks_distance(x, y) -> float:
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    pooled = np.concatenate([x, y])
    fx = np.searchsorted(x, pooled, side="right") / x.size
    fy = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.abs(fx - fy).max())


@nb.njit(nogil=True, cache=True)
def _ks_labels(labels, last_of_tie, n1, n2):
    c1 = 0
    c2 = 0
    d = 0.0
    for k in range(labels.size):
        if labels[k]:
            c1 += 1
        else:
            c2 += 1
        if last_of_tie[k]:
            v = abs(c1 / n1 - c2 / n2)
            if v > d:
                d = v
    return d


@nb.njit(nogil=True, cache=True)
def _ks_permutations(labels, last_of_tie, n1, n2, n_perm, rng, d_obs):
    hits = 0
    lab = labels.copy()
    for _ in range(n_perm):
        # Fisher-Yates shuffle of the group labels over the pooled order
        for i in range(lab.size - 1, 0, -1):
            j = int(rng.random() * (i + 1))
            if j > i:
                j = i
            tmp = lab[i]
            lab[i] = lab[j]
            lab[j] = tmp
        if _ks_labels(lab, last_of_tie, n1, n2) >= d_obs - 1e-12:
            hits += 1
    return hits


def ks_permutation_test(x, y, n_perm: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """(KS distance, permutation p-value (1 + hits)/(1 + n_perm))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    pooled = np.concatenate([x, y])
    order = np.argsort(pooled, kind="stable")
    sp = pooled[order]
    labels = (order < x.size)
    last = np.ones(sp.size, dtype=bool)
    last[:-1] = sp[1:] != sp[:-1]
    d = _ks_labels(labels, last, x.size, y.size)
    rng = np.random.Generator(np.random.Philox(seed))
    hits = _ks_permutations(labels, last, x.size, y.size, n_perm, rng, d)
    return float(d), (1.0 + hits) / (1.0 + n_perm)


@dataclass
class CovarianceReport:
    lam: float
    exponent: float
    distance: float
    p_value: float
    n1: int
    n2: int


def scaling_covariance_test(m_lambda, m, lam: float, exponent: float = FIELD_EXPONENT,
                            n_perm: int = 10_000, seed: int = 0) -> CovarianceReport:
    """Compare the law of m at side lam with lam^exponent times the law at side 1."""
    m_lambda = np.asarray(m_lambda, dtype=float)
    m = np.asarray(m, dtype=float)
    if m_lambda.size == 0 or m.size == 0:
        raise ValueError("empty sample")
    d, p = ks_permutation_test(m_lambda, lam**exponent * m, n_perm, seed)
    return CovarianceReport(lam, exponent, d, p, m_lambda.size, m.size)


# ---------------------------------------------------------------------------
# free-energy exponent
# ---------------------------------------------------------------------------


@dataclass
class MgfExponentReport:
    fits: dict
    pairs: list
    agree: bool


def mgf_exponent_fit(curves, n_sigma: float = 3.0, window="all") -> MgfExponentReport:
    """Fit f(t) ~ b t^alpha on the largest-L curve of each boundary condition
    and compare the slopes pairwise. ``window="positive"`` restricts every fit
    to the grid points where all the curves are positive."""
    best = {}
    for c in curves:
        if c.bc not in best or c.L > best[c.bc].L:
            best[c.bc] = c
    fits = {}
    common = np.logical_and.reduce([(c.t > 0) & (c.f > 0) for c in best.values()])
    for bc, c in best.items():
        if window == "positive":
            # grid points where every compared curve is positive
            keep, w = common, "all"
        else:
            keep, w = c.t > 0, window
        fits[bc] = fit_power_law(c.t[keep], c.f[keep], c.err[keep], w)
    pairs = []
    keys = list(fits)
    agree = True
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            a, b = fits[keys[i]], fits[keys[j]]
            diff = a.exponent - b.exponent
            tol = n_sigma * math.hypot(a.exponent_err, b.exponent_err)
            ok = abs(diff) <= tol
            agree &= ok
            pairs.append((keys[i], keys[j], diff, tol, ok))
    return MgfExponentReport(fits, pairs, agree)


@dataclass
class StretchReport:
    fit: ScalingFit
    t_range: tuple[float, float]
    resolved: bool
    n_resolved: int
    n_points: int


def stretch_exponent_fit(t, value, err, decades: float = 1.0, n_sigma: float = 3.0) -> StretchReport:
    """Slope of log(-log|E|) against log t over a window spanning ``decades``.

    The window is the highest-t one in which every point is resolved
    (|E| > n_sigma * err); when no window qualifies, the one with the most
    resolved points is used and the report is flagged unresolved."""
    t = np.asarray(t, dtype=float)
    v = np.abs(np.asarray(value))
    e = np.asarray(err, dtype=float)
    good = (v > n_sigma * e) & (v > 0) & (v < 1)
    usable = (v > 0) & (v < 1) & (t > 0)
    span = 10.0 ** decades
    best = None
    for i in range(t.size):
        j = int(np.searchsorted(t, span * t[i] * (1 - 1e-12)))
        if j >= t.size:
            break
        sl = slice(i, j + 1)
        if not usable[sl].all():
            continue
        key = (bool(good[sl].all()), int(good[sl].sum()), t[i])
        if best is None or key > best[0]:
            best = (key, i, j + 1)
    if best is None:
        raise ValueError("no t window of the requested span with 0 < |E| < 1")
    (resolved, n_good, _), lo, hi = best
    y = -np.log(v)
    fit = fit_power_law(t, y, e / v, window=(lo, hi))
    fit.policy = f"{decades:g}-decade window, resolved at {n_sigma:g} sigma"
    return StretchReport(fit, (float(t[lo]), float(t[hi - 1])), resolved, n_good, hi - lo)
