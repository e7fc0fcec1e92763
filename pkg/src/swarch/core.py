"""Parameter types, modulating sequence, restart-chain law, and closed-form moments.

The observed return process is ``X_t = a(I_t) * Y_t`` where

* ``a(i) = sqrt(i**(2D) - (i-1)**(2D))`` is a deterministic modulating sequence,
* ``I_t`` is a stationary restart chain (geometric marginal, reset probability nu),
* ``Y_t`` is an exchangeable-within-memory endogenous process identified by a
  volatility mixture: either an inverse-gamma law for the squared volatility
  (ARCH with Student-t residuals) or a point mass (independent normals).

Everything here is a pure function of its arguments; gamma functions are
evaluated through ``gammaln`` so large shape arguments do not overflow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import gammaln

from .errors import MomentDiverges, SeriesUnstable

__all__ = [
    "InverseGamma",
    "Point",
    "VolatilityMixture",
    "ModelParams",
    "Theta",
    "rescale_factor",
    "rescale_factors",
    "restart_stationary_pmf",
    "restart_transition_prob",
    "geometric_truncation",
    "student_abs_moment",
    "endo_abs_moment",
    "endo_cross_moment",
    "a_power_moment",
]

logger = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InverseGamma:
    """Inverse-gamma weighting of the squared mixing volatility.

    ``alpha`` is the dimensionless shape (also the tail index of the returns),
    ``beta`` the scale in return units.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


@dataclass(frozen=True)
class Point:
    """Volatility pinned to ``sigma0``: the endogenous process is i.i.d. normal."""

    sigma0: float

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be > 0, got {self.sigma0}")


VolatilityMixture = Union[InverseGamma, Point]


@dataclass(frozen=True)
class ModelParams:
    """Full parameter vector identifying a model instance.

    ``D`` scaling exponent of the modulating sequence; ``nu`` restart
    probability; ``mixture`` volatility mixture; ``M`` memory order of the
    endogenous process.
    """

    D: float
    nu: float
    mixture: VolatilityMixture
    M: int

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be > 0, got {self.D}")
        if not 0 < self.nu <= 1:
            raise ValueError(f"nu must be in (0, 1], got {self.nu}")
        if not (isinstance(self.M, (int, np.integer)) and self.M >= 1):
            raise ValueError(f"M must be a positive integer, got {self.M}")


@dataclass(frozen=True)
class Theta:
    """Shape parameters (D, nu, alpha) targeted by moment calibration.

    ``alpha`` is None for the constant-volatility (point-mixture) variant,
    which has no tail-index parameter.
    """

    D: float
    nu: float
    alpha: float | None = None

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be > 0, got {self.D}")
        if not 0 < self.nu <= 1:
            raise ValueError(f"nu must be in (0, 1], got {self.nu}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


# --------------------------------------------------------------------------
# Modulating sequence and restart chain
# --------------------------------------------------------------------------

def rescale_factor(i: int, D: float) -> float:
    """Modulating factor ``a_i = sqrt(i**(2D) - (i-1)**(2D))``.

    ``a_1 == 1`` exactly for every D; the sequence is identically 1 at
    ``D = 1/2``, decays to zero for ``D < 1/2`` and diverges for ``D > 1/2``.
    """
    if i < 1:
        raise ValueError(f"index must be >= 1, got {i}")
    if not D > 0:
        raise ValueError(f"D must be > 0, got {D}")
    if i == 1:
        return 1.0
    return math.sqrt(float(i) ** (2 * D) - float(i - 1) ** (2 * D))


def rescale_factors(n: int, D: float) -> np.ndarray:
    """Vector of modulating factors ``a_1 .. a_n``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    grid = np.arange(0, n + 1, dtype=float) ** (2 * D)
    a = np.sqrt(np.diff(grid))
    a[0] = 1.0
    return a


def restart_stationary_pmf(i, nu: float):
    """Stationary law of the restart chain, ``pi(i) = nu * (1-nu)**(i-1)``."""
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    i = np.asarray(i)
    if np.any(i < 1):
        raise ValueError("index must be >= 1")
    out = nu * (1.0 - nu) ** (i - 1)
    return float(out) if out.ndim == 0 else out


def restart_transition_prob(i: int, j: int, nu: float) -> float:
    """One-step transition probability ``P[I_{t+1}=i | I_t=j]``.

    A reset to 1 occurs with probability nu, otherwise the index increments.
    The stationary pmf is invariant under this kernel.
    """
    if i < 1 or j < 1:
        raise ValueError("indices must be >= 1")
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if i == 1:
        return nu
    if i == j + 1:
        return 1.0 - nu
    return 0.0


def geometric_truncation(nu: float, eps: float) -> int:
    """Smallest ``i_max`` with ``(1-nu)**i_max < eps``.

    Series over the stationary restart pmf truncated at ``i_max`` carry an
    absolute tail error below ``eps`` times the summand's supremum.
    """
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if nu == 1.0:
        return 1
    log_r = math.log1p(-nu)
    i_max = max(1, math.ceil(math.log(eps) / log_r))
    # guard against rounding at the boundary
    while math.exp(i_max * log_r) >= eps:
        i_max += 1
    while i_max > 1 and math.exp((i_max - 1) * log_r) < eps:
        i_max -= 1
    return i_max


# --------------------------------------------------------------------------
# Closed-form scalar moments
# --------------------------------------------------------------------------

def student_abs_moment(q: float, a_dof: float) -> float:
    """``E[|Z|^q]`` for the residual density proportional to ``(1+z^2)**-((a+1)/2)``.

    Closed form ``Gamma((q+1)/2) Gamma((a-q)/2) / (sqrt(pi) Gamma(a/2))``;
    the moment exists only for ``q < a_dof``.
    """
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    if not a_dof > 0:
        raise ValueError(f"a_dof must be > 0, got {a_dof}")
    if q >= a_dof:
        raise MomentDiverges(f"|Z|^{q} moment diverges for tail index {a_dof}")
    return math.exp(
        gammaln((q + 1) / 2) + gammaln((a_dof - q) / 2) - gammaln(a_dof / 2)
    ) / SQRT_PI


def endo_abs_moment(q: float, mixture: VolatilityMixture) -> float:
    """``E[|Y_1|^q]`` of the endogenous process.

    Inverse-gamma mixture: ``beta^q Gamma((q+1)/2) Gamma((alpha-q)/2) /
    (sqrt(pi) Gamma(alpha/2))`` (exists for ``q < alpha``).  Point mixture:
    ``sigma0^q 2^(q/2) Gamma((q+1)/2) / sqrt(pi)``.
    """
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    if isinstance(mixture, InverseGamma):
        if q >= mixture.alpha:
            raise MomentDiverges(
                f"|Y|^{q} moment diverges for alpha={mixture.alpha}"
            )
        return mixture.beta ** q * math.exp(
            gammaln((q + 1) / 2)
            + gammaln((mixture.alpha - q) / 2)
            - gammaln(mixture.alpha / 2)
        ) / SQRT_PI
    return mixture.sigma0 ** q * 2 ** (q / 2) * math.exp(gammaln((q + 1) / 2)) / SQRT_PI


def endo_cross_moment(q: float, mixture: VolatilityMixture) -> float:
    """``E[|Y_1|^q |Y_2|^q]`` of two adjacent endogenous values.

    Both values share the mixing volatility, so conditioning on sigma
    factorizes the pair into independent normals:
    ``E = (2^q / pi) Gamma((q+1)/2)^2 E_rho[sigma^(2q)]``.  For the
    inverse-gamma mixture this reduces to
    ``Gamma((q+1)/2)^2 beta^(2q) Gamma((alpha-2q)/2) / (pi Gamma(alpha/2))``
    (exists for ``2q < alpha``); for the point mixture the pair is independent
    and the expectation factorizes exactly.
    """
    if q < 0:
        raise ValueError(f"q must be >= 0, got {q}")
    if isinstance(mixture, InverseGamma):
        if 2 * q >= mixture.alpha:
            raise MomentDiverges(
                f"|Y1 Y2|^{q} moment diverges for alpha={mixture.alpha}"
            )
        return mixture.beta ** (2 * q) * math.exp(
            2 * gammaln((q + 1) / 2)
            + gammaln((mixture.alpha - 2 * q) / 2)
            - gammaln(mixture.alpha / 2)
        ) / math.pi
    m = endo_abs_moment(q, mixture)
    return m * m


def _poly_tail_bound(p: float, c: float, nu: float, i_start: int) -> float:
    """Certified bound on ``sum_{i>i_start} nu (1-nu)^(i-1) c i^p`` for p > 0.

    Once the term ratio ``(1-nu) ((i+1)/i)^p`` drops below 1 the remainder is
    dominated by a geometric series.  The sum from i_start to that point is
    accumulated termwise.  Raises SeriesUnstable on overflow.
    """
    one_minus = 1.0 - nu
    log_r = math.log1p(-nu)
    i = i_start + 1
    head = 0.0
    while one_minus * ((i + 1) / i) ** p >= 1.0:
        term = nu * math.exp((i - 1) * log_r) * c * i ** p
        if not math.isfinite(term) or i > 10 ** 12:
            raise SeriesUnstable("geometric tail never dominates polynomial growth")
        head += term
        i += 1
    ratio = one_minus * ((i + 1) / i) ** p
    term = nu * math.exp((i - 1) * log_r) * c * i ** p
    if not math.isfinite(term):
        raise SeriesUnstable("tail term overflows")
    return head + term / (1.0 - ratio)


def a_power_moment(q: float, nu: float, D: float, eps: float = 1e-12) -> float:
    """``E[a(I_1)^q]``: the stationary moment of the modulating factor.

    Evaluates the truncated series ``sum_{i<=i_max} a_i^q nu (1-nu)^(i-1)``
    with ``i_max`` from :func:`geometric_truncation` and logs the certified
    truncation bound.  Always finite for ``D <= 1/2`` and ``q >= 0``; for
    growing summands the tail is bounded through the derivative envelope
    ``a_i^q <= (2D)^(q/2) i^((2D-1)q/2)`` and SeriesUnstable is raised when
    the bound overflows.
    """
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if not D > 0:
        raise ValueError(f"D must be > 0, got {D}")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if nu == 1.0:
        return 1.0
    i_max = geometric_truncation(nu, eps)
    log_r = math.log1p(-nu)
    total = 0.0
    last_power = 1.0
    for lo in range(1, i_max + 1, 4_000_000):
        hi = min(lo + 4_000_000 - 1, i_max)
        grid = np.arange(lo - 1, hi + 1, dtype=float) ** (2 * D)
        a2 = np.diff(grid)
        if lo == 1:
            a2[0] = 1.0
        with np.errstate(over="raise"):
            try:
                powers = a2 ** (q / 2)
            except FloatingPointError:
                raise SeriesUnstable(
                    f"a_i^q overflows for q={q}, D={D} at i<={i_max}"
                ) from None
        if not np.all(np.isfinite(powers)):
            raise SeriesUnstable(f"a_i^q overflows for q={q}, D={D} at i<={i_max}")
        weights = nu * np.exp(np.arange(lo - 1, hi) * log_r)
        total += float(powers @ weights)
        last_power = float(powers[-1])

    p = (2 * D - 1) * q / 2
    if p <= 0:
        # decreasing summand: tail below the truncated mass times the last term
        bound = math.exp(i_max * log_r) * last_power
    else:
        bound = _poly_tail_bound(p, (2 * D) ** (q / 2), nu, i_max)
    logger.debug(
        "a_power_moment(q=%g, nu=%g, D=%g): i_max=%d, truncation bound %.3e",
        q, nu, D, i_max, bound,
    )
    return total
