"""Estimators over observed or simulated return series.

All estimators use overlapping windows with step 1 and the lag convention in
which t = 1 means zero separation, so empirical curves align index-for-index
with their theoretical counterparts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest, norm

from .errors import NonPositivePrice, ZeroVariance
from .theory import MomentCurve, AcfCurve, ScalingFit, hurst_fit

__all__ = [
    "ReturnSeries",
    "MugShotGrid",
    "SignMagnitudeReport",
    "log_returns",
    "empirical_moment_ratio",
    "empirical_moment_curve",
    "empirical_acf",
    "empirical_acf_curve",
    "empirical_hurst",
    "mug_shot",
    "sign_magnitude_diagnostics",
]


@dataclass
class ReturnSeries:
    """Return sequence with a flag recording whether the drift was removed."""

    values: np.ndarray
    mean_removed: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("returns must be one-dimensional")
        if self.mean_removed and len(self.values) > 1:
            std = float(self.values.std())
            if std > 0 and abs(float(self.values.sum())) > 1e-12 * len(self) * std:
                raise ValueError("series marked mean-removed but the sum is not zero")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class MugShotGrid:
    """Past-vs-future volatility correlation on a (t_h, t_r) grid.

    Cells where either window volatility has zero variance are NaN.
    """

    t_h: np.ndarray
    t_r: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.t_h = np.asarray(self.t_h, dtype=int)
        self.t_r = np.asarray(self.t_r, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.t_h), len(self.t_r)):
            raise ValueError("values must be shaped (len(t_h), len(t_r))")

    def value(self, t_h: int, t_r: int) -> float:
        i = int(np.nonzero(self.t_h == t_h)[0][0])
        j = int(np.nonzero(self.t_r == t_r)[0][0])
        return float(self.values[i, j])

    def asymmetry(self) -> float:
        """Largest |chi(a,b) - chi(b,a)| over grid pairs present both ways."""
        best = 0.0
        for i, a in enumerate(self.t_h):
            for j, b in enumerate(self.t_r):
                ii = np.nonzero(self.t_h == b)[0]
                jj = np.nonzero(self.t_r == a)[0]
                if len(ii) and len(jj):
                    x, y = self.values[i, j], self.values[ii[0], jj[0]]
                    if not (math.isnan(x) or math.isnan(y)):
                        best = max(best, abs(x - y))
        return best


def log_returns(prices) -> ReturnSeries:
    """Zero-mean log returns of a positive price series.

    The drift is fixed so the returns sum to zero; output length is one less
    than the input length.
    """
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or len(p) < 2:
        raise ValueError("need a one-dimensional price series of length >= 2")
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise NonPositivePrice("price series must be strictly positive")
    x = np.diff(np.log(p))
    x -= x.mean()
    return ReturnSeries(values=x, mean_removed=True)


def _aggregate_abs_moment(x: np.ndarray, q: float, t: int) -> float:
    c = np.concatenate(([0.0], np.cumsum(x)))
    sums = c[t:] - c[:-t]
    return float(np.mean(np.abs(sums) ** q))


def empirical_moment_ratio(x: ReturnSeries, q: float, t: int) -> float:
    """Overlapping-window aggregate moment ratio, normalized to 1 at t = 1."""
    T = len(x)
    if not 1 <= t <= T:
        raise ValueError(f"t must be in [1, {T}], got {t}")
    if q < 0:
        raise ValueError("q must be >= 0")
    return _aggregate_abs_moment(x.values, q, t) / _aggregate_abs_moment(
        x.values, q, 1
    )


def empirical_moment_curve(x: ReturnSeries, q: float, t_max: int) -> MomentCurve:
    base = _aggregate_abs_moment(x.values, q, 1)
    values = [
        _aggregate_abs_moment(x.values, q, t) / base for t in range(1, t_max + 1)
    ]
    return MomentCurve(
        q=q, ts=np.arange(1, t_max + 1), values=np.array(values),
        provenance="empirical",
    )


def empirical_acf(x: ReturnSeries, q: float, t: int) -> float:
    """Sample autocorrelation of |x|^q at separation t - 1."""
    T = len(x)
    if not 1 <= t <= T:
        raise ValueError(f"t must be in [1, {T}], got {t}")
    if t == 1:
        return 1.0
    w = _centered_abs_powers(x.values, q)
    denom = float(w @ w)
    lag = t - 1
    return float(w[:-lag] @ w[lag:]) / denom


def _centered_abs_powers(values: np.ndarray, q: float) -> np.ndarray:
    w = np.abs(values) ** q
    scale = float(np.mean(w ** 2))
    w = w - w.mean()
    if float(w @ w) <= 1e-26 * len(w) * max(scale, 1e-300):
        raise ZeroVariance("|x|^q has no variance; autocorrelation undefined")
    return w


def empirical_acf_curve(x: ReturnSeries, q: float, t_max: int) -> AcfCurve:
    w = _centered_abs_powers(x.values, q)
    denom = float(w @ w)
    values = [1.0] + [
        float(w[: -(t - 1)] @ w[t - 1 :]) / denom for t in range(2, t_max + 1)
    ]
    return AcfCurve(
        q=q, ts=np.arange(1, t_max + 1), values=np.array(values),
        provenance="empirical",
    )


def empirical_hurst(x: ReturnSeries, q: float, window: tuple[int, int]) -> ScalingFit:
    """Scaling fit of the time-average moment curve over [window[0], window[1]]."""
    lo, hi = window
    if hi > len(x) / 10:
        raise ValueError("window too wide for the series length (need W <= T/10)")
    curve = empirical_moment_curve(x, q, hi)
    return hurst_fit(curve, (lo, hi))


def mug_shot(x: ReturnSeries, t_h_grid, t_r_grid) -> MugShotGrid:
    """Past-vs-future volatility correlation over all grid pairs.

    For a split point n the historical window covers the t_h returns up to n
    and the realized window the t_r returns after n; both windows slide with
    step 1.
    """
    t_h_grid = np.asarray(t_h_grid, dtype=int)
    t_r_grid = np.asarray(t_r_grid, dtype=int)
    T = len(x)
    if t_h_grid.max() + t_r_grid.max() > T:
        raise ValueError("max(t_h) + max(t_r) must not exceed the series length")
    s2 = np.concatenate(([0.0], np.cumsum(x.values ** 2)))
    lengths = sorted(set(t_h_grid.tolist()) | set(t_r_grid.tolist()))
    vol = {
        ell: np.sqrt((s2[ell:] - s2[:-ell]) / ell)  # window ending at ell..T
        for ell in lengths
    }
    values = np.full((len(t_h_grid), len(t_r_grid)), np.nan)
    for i, th in enumerate(t_h_grid):
        for j, tr in enumerate(t_r_grid):
            # split points n = th .. T - tr
            hist = vol[th][: T - tr - th + 1]
            real = vol[tr][th:]
            sh, sr = hist.std(), real.std()
            if sh <= 0 or sr <= 0:
                continue
            values[i, j] = float(np.corrcoef(hist, real)[0, 1])
    return MugShotGrid(t_h=t_h_grid, t_r=t_r_grid, values=values)


@dataclass(frozen=True)
class SignMagnitudeReport:
    """Outcome of the sign-fairness and sign-magnitude independence checks."""

    n: int
    sign_fair_pvalue: float
    runs_pvalue: float
    lags: np.ndarray
    cross_correlation: np.ndarray
    cross_zscores: np.ndarray

    def all_pass(self, level: float = 0.01, z_cut: float | None = None) -> bool:
        if z_cut is None:
            z_cut = float(norm.ppf(1 - level / 2))
        return (
            self.sign_fair_pvalue > level
            and self.runs_pvalue > level
            and bool(np.all(np.abs(self.cross_zscores) < z_cut))
        )


def sign_magnitude_diagnostics(y) -> SignMagnitudeReport:
    """Fair-coin and independence checks for the sign process of a series.

    Reports a two-sided binomial test of sign fairness, a runs test of sign
    independence, and sign-vs-magnitude cross-correlations at lags 0..5 with
    normal-approximation z-scores.
    """
    y = np.asarray(y, dtype=float)
    if len(y) < 100:
        raise ValueError("need at least 100 observations")
    signs = np.where(y >= 0, 1.0, -1.0)
    n = len(y)
    n_pos = int((signs > 0).sum())
    sign_p = binomtest(n_pos, n, 0.5).pvalue

    # runs test with normal approximation
    runs = 1 + int((signs[1:] != signs[:-1]).sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        runs_p = 0.0
    else:
        mean_runs = 2 * n_pos * n_neg / n + 1
        var_runs = (
            2 * n_pos * n_neg * (2 * n_pos * n_neg - n) / (n ** 2 * (n - 1))
        )
        z = (runs - mean_runs) / math.sqrt(var_runs)
        runs_p = 2 * (1 - norm.cdf(abs(z)))

    lags = np.arange(6)
    mags = np.abs(y)
    corr = np.empty(6)
    zscores = np.empty(6)
    for k in lags:
        a = signs[: n - k] if k else signs
        b = mags[k:] if k else mags
        with np.errstate(invalid="ignore", divide="ignore"):
            c = float(np.corrcoef(a, b)[0, 1])  # NaN when a sign never occurs
        corr[k] = c
        zscores[k] = c * math.sqrt(len(a))
    return SignMagnitudeReport(
        n=n,
        sign_fair_pvalue=float(sign_p),
        runs_pvalue=float(runs_p),
        lags=lags,
        cross_correlation=corr,
        cross_zscores=zscores,
    )
