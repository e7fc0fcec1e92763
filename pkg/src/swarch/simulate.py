"""Seeded exact samplers for the hidden chains and the compound return process.

Reproducibility contract: a :class:`SeedSpec` identifies one logical random
stream.  Component generators are derived from it with a fixed splitting rule
(`SeedSequence(seed, spawn_key=(stream, component))`), component 0 feeding the
restart chain and component 1 the endogenous process, so either hidden process
can be regenerated in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .core import InverseGamma, ModelParams, Point, rescale_factors

__all__ = [
    "SeedSpec",
    "SimulatedPath",
    "sample_restart_path",
    "sample_endogenous",
    "sample_returns",
    "student_residuals",
]

_RECOMPUTE_EVERY = 10_000  # exact refresh of the ARCH running sum

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class SeedSpec:
    """Seed plus sub-stream id; identical (seed, stream) gives identical output."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.stream < 0:
            raise ValueError("stream must be non-negative")

    def component_rng(self, component: int) -> np.random.Generator:
        """Generator for one hidden component (0 restart chain, 1 endogenous)."""
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.stream, component))
        )


@dataclass(frozen=True)
class SimulatedPath:
    """Aligned triplet of hidden restart indices, endogenous values, and returns."""

    i: np.ndarray
    y: np.ndarray
    x: np.ndarray
    params: ModelParams

    def __post_init__(self):
        if not (len(self.i) == len(self.y) == len(self.x)):
            raise ValueError("i, y, x must share the same length")

    def __len__(self) -> int:
        return len(self.x)


def sample_restart_path(nu: float, T: int, seed: SeedSpec) -> np.ndarray:
    """Stationary path of the restart chain.

    The initial index is geometric (the invariant law); each step resets the
    index to 1 with probability nu and increments it otherwise, so the
    marginal law of every ``i_t`` is the stationary pmf.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    rng = seed.component_rng(0)
    i1 = int(rng.geometric(nu))
    if T == 1:
        return np.array([i1], dtype=np.int64)
    restarts = rng.random(T - 1) < nu
    # position of the most recent restart; a virtual restart at 2 - i1 seeds i_1
    marks = np.empty(T, dtype=np.int64)
    marks[0] = 2 - i1
    marks[1:] = np.where(restarts, np.arange(2, T + 1), np.iinfo(np.int64).min)
    last = np.maximum.accumulate(marks)
    return np.arange(1, T + 1, dtype=np.int64) - last + 1


def _bailey_polar(a_dof: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Polar draw of residuals with density ~ (1+z^2)^-((a+1)/2).

    Adapts the polar normal transform to Student variates; the returned value
    is the standard Student-t variate divided by sqrt(a_dof).
    """
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(int((n - filled) / 0.7) + 16, 32)
        u = rng.uniform(-1.0, 1.0, m)
        v = rng.uniform(-1.0, 1.0, m)
        w = u * u + v * v
        keep = (w <= 1.0) & (w > 0.0)
        u, w = u[keep], w[keep]
        z = u * np.sqrt((w ** (-2.0 / a_dof) - 1.0) / w)
        take = min(len(z), n - filled)
        out[filled : filled + take] = z[:take]
        filled += take
    return out


def _inverse_cdf(a_dof: float, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(n)
    return student_t.ppf(u, df=a_dof) / math.sqrt(a_dof)


def student_residuals(
    a_dof: float, n: int, rng: np.random.Generator, method: str = "polar"
) -> np.ndarray:
    """Residual draws with density proportional to ``(1+z^2)**-((a_dof+1)/2)``."""
    if not a_dof > 0:
        raise ValueError(f"a_dof must be > 0, got {a_dof}")
    if method == "polar":
        return _bailey_polar(a_dof, n, rng)
    if method == "inverse-cdf":
        return _inverse_cdf(a_dof, n, rng)
    raise ValueError(f"unknown method {method!r}")


def _arch_recursion_py(z: np.ndarray, beta: float, M: int) -> np.ndarray:
    y = np.empty_like(z)
    beta2 = beta * beta
    s = 0.0
    for t in range(len(z)):
        y[t] = math.sqrt(beta2 + s) * z[t]
        s += y[t] * y[t]
        if t >= M:
            s -= y[t - M] * y[t - M]
        if (t + 1) % _RECOMPUTE_EVERY == 0:
            lo = max(0, t - M + 1)
            s = float(np.dot(y[lo : t + 1], y[lo : t + 1]))
    return y


if _HAVE_NUMBA:

    @njit(cache=True)
    def _arch_recursion_nb(z, beta, M):  # pragma: no cover - jitted
        y = np.empty_like(z)
        beta2 = beta * beta
        s = 0.0
        for t in range(len(z)):
            y[t] = math.sqrt(beta2 + s) * z[t]
            s += y[t] * y[t]
            if t >= M:
                s -= y[t - M] * y[t - M]
            if (t + 1) % 10_000 == 0:
                lo = max(0, t - M + 1)
                acc = 0.0
                for n in range(lo, t + 1):
                    acc += y[n] * y[n]
                s = acc
        return y

    _arch_recursion = _arch_recursion_nb
else:
    _arch_recursion = _arch_recursion_py


def sample_endogenous(
    params: ModelParams, T: int, seed: SeedSpec, method: str = "polar"
) -> np.ndarray:
    """Exact draw of the endogenous process.

    Inverse-gamma mixture: auto-regressive recursion
    ``Y_t = sqrt(beta^2 + sum of last min(t-1, M) squares) * Z_t`` with
    independent residuals of tail index ``alpha + min(t-1, M)``; the
    construction is stationary from t = 1, so no burn-in is applied.
    Point mixture: i.i.d. centered normals with std sigma0.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = seed.component_rng(1)
    mix = params.mixture
    if isinstance(mix, Point):
        return mix.sigma0 * rng.standard_normal(T)
    assert isinstance(mix, InverseGamma)
    z = np.empty(T)
    head = min(params.M, T)
    for t in range(head):
        z[t] = student_residuals(mix.alpha + t, 1, rng, method)[0]
    if T > params.M:
        z[params.M :] = student_residuals(
            mix.alpha + params.M, T - params.M, rng, method
        )
    return _arch_recursion(z, mix.beta, params.M)


def sample_returns(
    params: ModelParams, T: int, seed: SeedSpec, method: str = "polar"
) -> SimulatedPath:
    """Compound return path ``x_t = a(i_t) * y_t``.

    The two hidden processes use independent sub-streams derived from
    ``seed``, so each can be re-drawn separately with identical output.
    """
    i = sample_restart_path(params.nu, T, seed)
    y = sample_endogenous(params, T, seed, method)
    a = rescale_factors(int(i.max()), params.D)
    x = a[i - 1] * y
    return SimulatedPath(i=i, y=y, x=x, params=params)
