"""Exception types shared across the package."""


class PwaProxError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(PwaProxError, ValueError):
    pass


class RankDeficientError(PwaProxError):
    pass


class NotSymmetricError(PwaProxError):
    pass


class NotPositiveDefiniteError(PwaProxError):
    pass


class MaxPivotsError(PwaProxError):
    """The active-set QP solver hit its pivot limit."""


class StageInfeasibleError(PwaProxError):
    """Every component of a stage is empty for the given parameter."""

    def __init__(self, stage: int):
        super().__init__(f"all components of stage {stage} are empty")
        self.stage = stage


class XiTooSmallError(PwaProxError):
    def __init__(self, xi: float, minimum: float, hint: str = ""):
        msg = f"proximal scaling xi={xi:g} must exceed {minimum:.12g}"
        if hint:
            msg += f" ({hint})"
        super().__init__(msg)
        self.xi = xi
        self.minimum = minimum


class RankMismatchError(PwaProxError):
    pass


class BlowUpError(PwaProxError):
    """Fourier-Motzkin elimination exceeded its row cap."""


class CombinatorialCapError(PwaProxError):
    pass


class TooManyCombinationsError(PwaProxError):
    pass


class NoActiveRegionError(PwaProxError):
    """No region of the plant contains the current state and input."""
