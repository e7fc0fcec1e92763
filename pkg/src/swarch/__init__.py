"""Markov-switching ARCH return model: simulation, theory, estimation, decoding.

The package is organized around the compound process ``X_t = a(I_t) * Y_t``:

* :mod:`swarch.core` — parameter types and closed-form scalar moments,
* :mod:`swarch.simulate` — seeded exact samplers,
* :mod:`swarch.theory` — theoretical moment ratios, autocorrelations, densities,
* :mod:`swarch.empirics` — estimators over observed or simulated return series,
* :mod:`swarch.calibrate` — method-of-moments parameter estimation,
* :mod:`swarch.restarts` — posterior restart detection and path reconstruction,
* :mod:`swarch.cli` — command-line entry points.
"""

from .core import (
    InverseGamma,
    ModelParams,
    Point,
    Theta,
    VolatilityMixture,
    a_power_moment,
    endo_abs_moment,
    endo_cross_moment,
    geometric_truncation,
    rescale_factor,
    rescale_factors,
    restart_stationary_pmf,
    restart_transition_prob,
    student_abs_moment,
)
from .errors import (
    BudgetExceeded,
    DegenerateModulation,
    MomentDiverges,
    NoFeasiblePoint,
    NonPositivePrice,
    SeriesUnstable,
    SwarchError,
    UnsupportedMixture,
    WindowTooWide,
    ZeroVariance,
)

__version__ = "0.1.0"
