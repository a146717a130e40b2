"""Exception and warning types raised by thzsound."""


class InvalidArgument(ValueError):
    pass


class PlanInfeasible(ValueError):
    """Frequency plan places the receive band where it cannot be sampled."""


class FitFailed(RuntimeError):
    pass


class DegenerateReference(ValueError):
    """Reference waveform has (near-)empty bins on the active tone set."""


class InsufficientNoiseRegion(ValueError):
    pass


class LowSnrTrackingWarning(UserWarning):
    """Main peak is too weak for reliable per-snapshot phase tracking."""
