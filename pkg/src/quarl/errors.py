"""Exception hierarchy shared by every quarl module."""


class QuarlError(Exception):
    """Base class for all errors raised by quarl."""


class InvalidLattice(QuarlError, ValueError):
    pass


class InvalidAction(QuarlError, ValueError):
    pass


class StateSpaceTooLarge(QuarlError, ValueError):
    pass


class SymmetryUnavailable(QuarlError, ValueError):
    pass


class NonStoquastic(QuarlError, ValueError):
    """Model parameters give positive off-diagonal elements (or none at all)."""


class DegenerateGroundState(QuarlError, RuntimeError):
    """The passive dynamics is not ergodic on the requested sector."""


class ConvergenceFailure(QuarlError, RuntimeError):
    pass


class InvalidShift(QuarlError, ValueError):
    pass


class NonErgodic(QuarlError, ValueError):
    pass


class InvalidScale(QuarlError, ValueError):
    """A state has H_ss <= E0, so the terminal-state scale factor is undefined."""


class InvalidWavefunction(QuarlError, ValueError):
    pass


class DivisionByZeroAmplitude(QuarlError, ZeroDivisionError):
    pass


class TimestepTooLarge(QuarlError, ValueError):
    pass


class TerminalUnreachable(QuarlError, ValueError):
    pass


class SupportMismatch(QuarlError, ValueError):
    """Controlled rates put mass on a transition the passive dynamics forbids."""


class ShapeError(QuarlError, ValueError):
    pass


class TrainingDiverged(QuarlError, RuntimeError):
    """Raised when the loss becomes non-finite.

    ``checkpoint`` holds the parameters of the last finite network state.
    """

    def __init__(self, message, checkpoint=None, episode=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.episode = episode


class SamplerStuck(QuarlError, RuntimeError):
    pass


class DegenerateSeries(QuarlError, ValueError):
    pass


class ConfigError(QuarlError, ValueError):
    pass
