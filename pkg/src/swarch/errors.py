"""Exception hierarchy shared across the package."""


class SwarchError(Exception):
    """Base class for all model-specific failures."""


class NumericError(SwarchError):
    """A quantity could not be evaluated (divergent moment, unstable series, ...)."""


class MomentDiverges(NumericError):
    """Requested absolute moment does not exist for the given tail index."""


class SeriesUnstable(NumericError):
    """Series over the restart distribution overflows or cannot be bounded."""


class DegenerateModulation(NumericError):
    """Modulating factor is constant, so its autocorrelation is undefined."""


class BudgetExceeded(NumericError):
    """Exact evaluation cannot reach the requested tolerance within budget."""


class UnsupportedMixture(NumericError):
    """Operation is undefined for the supplied volatility mixture variant."""


class ZeroVariance(NumericError):
    """Sample statistic undefined because the series has zero variance."""


class NonPositivePrice(SwarchError):
    """Price series contains a non-positive entry; log returns undefined."""


class WindowTooWide(SwarchError):
    """Posterior window exceeds the exchangeable regime of the endogenous process."""


class NoFeasiblePoint(SwarchError):
    """Every calibration probe violates the moment-existence constraints."""
