"""Exception hierarchy for cvteleport."""


class TeleportError(Exception):
    """Base class for all package errors."""


class InvalidStateError(TeleportError, ValueError):
    """A Gaussian state violates positivity or the uncertainty bound."""


class UnphysicalReconstructionError(TeleportError, ValueError):
    """A reconstructed variance came out negative.

    Raised instead of clamping so that calibration mistakes surface.
    """


class CalibrationError(TeleportError, ValueError):
    """A calibration fit could not be performed (degenerate or too few points)."""


class ConvergenceError(TeleportError, RuntimeError):
    """An optimizer failed to converge within its iteration budget."""


class NyquistError(TeleportError, ValueError):
    pass
