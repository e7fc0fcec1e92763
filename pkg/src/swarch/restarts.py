"""Posterior restart detection, hidden-path reconstruction, volatility samples.

The reset posterior at a time point conditions on a narrow window of returns
centered there.  Within the exchangeable regime (window length at most M+1)
the joint window density is an explicit mixture over (initial index, reset
pattern) pairs, so exact Bayes reduces to a finite enumeration: the initial
index runs over the truncated stationary law and the pattern over all
2^(2 tau) reset configurations.

All positions are 0-based array indices; a reset at position p means the
hidden index returns to 1 exactly at that sample.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    InverseGamma,
    ModelParams,
    Point,
    geometric_truncation,
    rescale_factors,
)
from .empirics import ReturnSeries
from .errors import WindowTooWide

__all__ = [
    "RestartDiagnostics",
    "VolSampleSet",
    "restart_posterior",
    "restart_posterior_series",
    "detect_restarts",
    "reconstruct_endogenous",
    "longmem_vol_samples",
]


@dataclass
class RestartDiagnostics:
    """Per-time reset posterior with the selected times and decoded paths.

    ``posterior`` is NaN where the window does not fit; ``restart_times`` are
    the selected 0-based positions; ``threshold`` is the smallest selected
    posterior value.
    """

    posterior: np.ndarray
    restart_times: np.ndarray
    i_path: np.ndarray
    y_path: np.ndarray
    threshold: float


@dataclass
class VolSampleSet:
    """Sliding-window root-mean-square samples of the endogenous component."""

    t: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if np.any(self.samples < 0):
            raise ValueError("volatility samples must be non-negative")


def _n_threads() -> int:
    try:
        return max(1, int(os.environ.get("SWARCH_THREADS", "1")))
    except ValueError:
        return 1


def _window_scale(params: ModelParams):
    mix = params.mixture
    if isinstance(mix, InverseGamma):
        return mix.beta, mix.alpha
    return mix.sigma0, None


def _pattern_paths(tau: int):
    """All reset patterns of a (2 tau + 1)-window with their structure.

    Yields (pattern_bits, first_reset_position, fixed_indices) where
    first_reset_position is 1-based within the window (w+1 when no reset) and
    fixed_indices are the window indices from that position on.
    """
    w = 2 * tau + 1
    for bits in range(2 ** (w - 1)):
        first = w + 1
        fixed = []
        idx = None
        for step in range(w - 1):
            reset = (bits >> step) & 1
            if reset and first == w + 1:
                first = step + 2
                idx = 1
                fixed.append(1)
            elif first != w + 1:
                idx = 1 if reset else idx + 1
                fixed.append(idx)
        yield bits, first, fixed


def _log_pattern_prob(bits: int, w: int, nu: float) -> float:
    k = bin(bits).count("1")
    return k * math.log(nu) + (w - 1 - k) * math.log1p(-nu)


def restart_posterior(
    x: ReturnSeries, t: int, tau: int, params: ModelParams
) -> float:
    """Posterior probability of a reset at position t given the local window.

    Exact Bayes over (initial index, reset pattern) pairs; the initial index
    carries the stationary law truncated at a negligible mass.  Requires
    2 tau + 1 <= M + 1 and the window to fit inside the series.
    """
    T = len(x)
    w = 2 * tau + 1
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if w > params.M + 1:
        raise WindowTooWide(f"window {w} exceeds M+1 = {params.M + 1}")
    if not tau <= t <= T - 1 - tau:
        raise ValueError(f"window around t={t} does not fit in [0, {T - 1}]")
    if params.nu == 1.0:
        return 1.0

    scale, alpha = _window_scale(params)
    nu, D = params.nu, params.D
    i_max = max(geometric_truncation(nu, 1e-13), w + 1)
    a = rescale_factors(i_max + w, D)
    x2 = (x.values[t - tau : t + tau + 1] / scale) ** 2
    log_pi = math.log(nu) + np.arange(i_max) * math.log1p(-nu)

    num = 0.0
    den = 0.0
    for bits, first, fixed in _pattern_paths(tau):
        lp = _log_pattern_prob(bits, w, nu)
        n_pre = min(first - 1, w)
        post = float(x2[n_pre:] @ (1.0 / a[np.array(fixed) - 1] ** 2)) if fixed else 0.0
        log_post_a = float(np.log(a[np.array(fixed) - 1]).sum()) if fixed else 0.0
        for i in range(1, i_max + 1):
            pre_idx = a[i - 1 : i - 1 + n_pre]
            pre = float(x2[:n_pre] @ (1.0 / pre_idx ** 2))
            log_a = float(np.log(pre_idx).sum()) + log_post_a
            if alpha is not None:
                log_dens = -((alpha + w) / 2) * math.log1p(pre + post) - log_a
            else:
                log_dens = -0.5 * (pre + post) - log_a
            weight = math.exp(log_pi[i - 1] + lp + log_dens)
            den += weight
            if _center_index(i, bits, tau) == 1:
                num += weight
    return num / den if den > 0 else 0.0


def _center_index(i: int, bits: int, tau: int) -> int:
    idx = i
    for step in range(tau):
        idx = 1 if (bits >> step) & 1 else idx + 1
    return idx


def restart_posterior_series(
    x: ReturnSeries, tau: int, params: ModelParams
) -> np.ndarray:
    """Reset posterior at every admissible position (NaN at the edges).

    Vectorized counterpart of :func:`restart_posterior`: patterns share their
    pre-reset structure, so the index-dependent part reduces to sliding-window
    matrix products against the inverse squared modulating factors.
    """
    T = len(x)
    w = 2 * tau + 1
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if w > params.M + 1:
        raise WindowTooWide(f"window {w} exceeds M+1 = {params.M + 1}")
    out = np.full(T, np.nan)
    if params.nu == 1.0:
        out[tau : T - tau] = 1.0
        return out

    scale, alpha = _window_scale(params)
    nu, D = params.nu, params.D
    i_max = max(geometric_truncation(nu, 1e-13), w + 1)
    a = rescale_factors(i_max + w, D)
    inv_a2 = 1.0 / a ** 2
    log_a = np.log(a)
    x2 = (x.values / scale) ** 2
    windows = np.lib.stride_tricks.sliding_window_view(x2, w)  # (T-w+1, w)
    n_valid = windows.shape[0]
    log_pi = math.log(nu) + np.arange(i_max) * math.log1p(-nu)
    pre_log_a = np.concatenate(([0.0], np.cumsum(log_a)))

    num = np.zeros(n_valid)
    den = np.zeros(n_valid)
    chunk = max(1, min(i_max, 8_000_000 // max(n_valid, 1)))
    spans = [(lo, min(lo + chunk, i_max)) for lo in range(0, i_max, chunk)]

    def process(span, pattern):
        lo, hi = span
        bits, first, fixed = pattern
        n_pre = min(first - 1, w)
        i_vals = np.arange(lo + 1, hi + 1)
        # sum over pre-reset positions of x^2 / a(i+n-1)^2, all i at once
        kernel = np.empty((n_pre, hi - lo))
        for n in range(n_pre):
            kernel[n] = inv_a2[lo + n : hi + n]
        pre = windows[:, :n_pre] @ kernel if n_pre else np.zeros((n_valid, hi - lo))
        if fixed:
            fixed_arr = np.array(fixed) - 1
            post = windows[:, n_pre:] @ inv_a2[fixed_arr]
            log_post_a = float(log_a[fixed_arr].sum())
        else:
            post = np.zeros(n_valid)
            log_post_a = 0.0
        log_pre_a = pre_log_a[i_vals - 1 + n_pre] - pre_log_a[i_vals - 1]
        log_w = (
            log_pi[lo:hi]
            + _log_pattern_prob(bits, w, nu)
            - log_pre_a
            - log_post_a
        )
        bracket = 1.0 + pre + post[:, None]
        if alpha is not None:
            dens = bracket ** (-(alpha + w) / 2)
        else:
            dens = np.exp(-0.5 * (pre + post[:, None]))
        contrib = dens @ np.exp(log_w)
        center_one = np.array(
            [_center_index(i, bits, tau) == 1 for i in i_vals]
        )
        if center_one.all():
            return contrib, contrib
        if center_one.any():
            sel = dens[:, center_one] @ np.exp(log_w[center_one])
            return contrib, sel
        return contrib, np.zeros(n_valid)

    patterns = list(_pattern_paths(tau))
    jobs = [(span, pat) for pat in patterns for span in spans]
    workers = _n_threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: process(*job), jobs))
    else:
        results = [process(*job) for job in jobs]
    for d_part, n_part in results:
        den += d_part
        num += n_part
    with np.errstate(invalid="ignore"):
        ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    out[tau : tau + n_valid] = ratio
    return out


def detect_restarts(
    x: ReturnSeries, params: ModelParams, tau: int
) -> RestartDiagnostics:
    """Locate resets as the highest posterior peaks, ceil(nu T) of them.

    Peaks are strict local maxima (plateaus count at their left edge); when
    fewer peaks exist than the target count, the remaining slots are filled
    by the highest non-peak posteriors.  Ties break toward earlier times.
    """
    T = len(x)
    posterior = restart_posterior_series(x, tau, params)
    # below one expected reset nothing is selected (count-based rule)
    if params.nu * T < 1:
        target = 0
    else:
        target = min(int(math.ceil(params.nu * T)), T - 2 * tau)
    valid = np.arange(tau, T - tau)
    p = posterior[valid]

    left = np.concatenate(([-np.inf], p[:-1]))
    right = np.concatenate((p[1:], [-np.inf]))
    is_peak = (p > left) & (p >= right)

    order = sorted(
        range(len(p)),
        key=lambda k: (not is_peak[k], -p[k], k),
    )
    chosen = sorted(valid[order[:target]])
    threshold = float(min(posterior[chosen])) if chosen else math.nan
    i_path, y_path = reconstruct_endogenous(x, np.array(chosen), params.D)
    return RestartDiagnostics(
        posterior=posterior,
        restart_times=np.array(chosen, dtype=int),
        i_path=i_path,
        y_path=y_path,
        threshold=threshold,
    )


def reconstruct_endogenous(x: ReturnSeries, restart_times, D: float):
    """Decode the hidden index path and endogenous series from reset times.

    The index resets to 1 at each reset time and increments otherwise; before
    the first reset the path starts at 1 (the prefix of the decoded series is
    only trustworthy from the first reset on).  Returns (i_path, y_path) with
    y = x / a(i).
    """
    T = len(x)
    restart_times = np.asarray(restart_times, dtype=int)
    if len(restart_times) and (
        restart_times.min() < 0 or restart_times.max() >= T
    ):
        raise ValueError("restart times must lie inside the series")
    # position of the latest reset at or before each time; virtual reset at 0
    flags = np.zeros(T, dtype=bool)
    flags[restart_times] = True
    flags[0] = True
    positions = np.where(flags, np.arange(T), -1)
    last = np.maximum.accumulate(positions)
    i_path = (np.arange(T) - last + 1).astype(np.int64)
    a = rescale_factors(int(i_path.max()), D)
    y_path = x.values / a[i_path - 1]
    return i_path, y_path


def longmem_vol_samples(y_path, restart_times, t: int) -> VolSampleSet:
    """Root-mean-square of the decoded endogenous series over sliding windows.

    Windows step by one over the full path; no window is excluded around the
    reset times (``restart_times`` is carried for provenance only).
    """
    y = np.asarray(y_path, dtype=float)
    if t < 1 or t > len(y):
        raise ValueError(f"window must satisfy 1 <= t <= {len(y)}")
    c = np.concatenate(([0.0], np.cumsum(y ** 2)))
    samples = np.sqrt((c[t:] - c[:-t]) / t)
    return VolSampleSet(t=t, samples=samples)
