"""Exception types raised across the package."""


class MimoIdentError(Exception):
    """Base class for all package errors."""


class IndexOutOfRange(MimoIdentError, IndexError):
    pass


class BudgetExceeded(MimoIdentError):
    """Exhaustive enumeration would exceed the allowed subset budget."""


class UnboundedInput(MimoIdentError, ValueError):
    pass


class SupportTooLarge(MimoIdentError, ValueError):
    """A support does not fit on the (K, L) torus without self-overlap."""


class NoCoverFound(MimoIdentError):
    pass


class PackingFailed(MimoIdentError):
    pass


class GridMismatch(MimoIdentError, ValueError):
    pass


class ShapeMismatch(MimoIdentError, ValueError):
    pass


class RankDeficient(MimoIdentError):
    """A row matrix is not of full column rank.

    ``row`` is the receive-antenna index of the offending row (or None).
    """

    def __init__(self, message, row=None, sigma_min=None, sigma_max=None):
        super().__init__(message)
        self.row = row
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max


class NumericalRankFull(MimoIdentError):
    pass


class DivergentTail(MimoIdentError):
    pass


class GridTooCoarse(MimoIdentError, ValueError):
    pass


class PlanNotOverspread(MimoIdentError):
    pass
