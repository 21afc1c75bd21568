"""Time-series reduction for Monte Carlo output."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WINDOW_FACTOR = 6.0


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation function rho(t), t = 0..n-1, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    if acov[0] <= 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acov / acov[0]


def integrated_time(x: np.ndarray, c: float = WINDOW_FACTOR) -> tuple[float, int, bool]:
    """Integrated autocorrelation time with Sokal's self-consistent window.

    Returns (tau_int, window, converged); the window is the smallest W with
    W >= c * tau_int(W). ``converged`` is False when no such W exists below
    n/2, in which case the estimate is unreliable.
    """
    n = len(x)
    if n < 4:
        return 0.5, 0, False
    rho = autocorrelation(x)
    taus = 0.5 + np.cumsum(rho[1:])
    w = np.arange(1, n)
    ok = np.flatnonzero(w >= c * taus)
    if ok.size == 0 or ok[0] > n // 2:
        W = min(n // 2, n - 2)
        return max(0.5, float(taus[W])), W + 1, False
    W = ok[0]
    return max(0.5, float(taus[W])), int(w[W]), True


@dataclass
class SeriesStats:
    count: int
    mean: float
    variance: float
    tau_int: float
    window: int
    converged: bool
    binning: list[tuple[int, float]] = field(default_factory=list)

    @property
    def stderr(self) -> float:
        if self.count == 0:
            return float("nan")
        return float(np.sqrt(2.0 * self.tau_int * self.variance / self.count))

    @property
    def n_eff(self) -> float:
        return self.count / (2.0 * self.tau_int) if self.count else 0.0


def binning_table(x: np.ndarray, min_bins: int = 16) -> list[tuple[int, float]]:
    """(bin size, naive standard error of bin means) for bin sizes 1, 2, 4, ..."""
    x = np.asarray(x, dtype=float)
    out = []
    b = 1
    while x.size // b >= min_bins:
        nb_ = x.size // b
        means = x[: nb_ * b].reshape(nb_, b).mean(axis=1)
        out.append((b, float(means.std(ddof=1) / np.sqrt(nb_))))
        b *= 2
    return out


def series_stats(x, binning: bool = False) -> SeriesStats:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        return SeriesStats(0, float("nan"), float("nan"), 0.5, 0, False)
    mean = float(x.mean())
    var = float(x.var(ddof=1)) if n > 1 else 0.0
    if var == 0.0:
        tau, W, conv = 0.5, 0, True
    else:
        tau, W, conv = integrated_time(x)
    return SeriesStats(n, mean, var, tau, W, conv, binning_table(x) if binning else [])


@dataclass
class Moments:
    """Streaming count/mean/M2 with an associative merge."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, values) -> "Moments":
        v = np.asarray(values, dtype=float).ravel()
        if v.size:
            self.merge(Moments(v.size, float(v.mean()), float(((v - v.mean()) ** 2).sum())))
        return self

    def merge(self, other: "Moments") -> "Moments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


@dataclass
class Estimate:
    value: float
    stderr: float
    n: int = 0
    tau_int: float = 0.5

    def __iter__(self):
        yield self.value
        yield self.stderr


def proportion(flags) -> Estimate:
    """Frequency of a 0/1 series with an autocorrelation-corrected error."""
    st = series_stats(np.asarray(flags, dtype=float))
    return Estimate(st.mean, st.stderr if st.count else float("nan"), st.count, st.tau_int)
