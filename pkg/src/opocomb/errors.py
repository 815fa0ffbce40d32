"""Exception types.  Invalid input raises ``ValueError``; everything here is a
numerical failure and maps to exit code 3 in the CLI."""


class NumericalError(RuntimeError):
    pass


class PoleError(NumericalError):
    """A transfer coefficient was evaluated on a pole of its denominator."""


class SingularSystemError(NumericalError):
    """The frequency-domain linear system has no unique solution at this frequency."""


class ConvergenceError(NumericalError):
    """An iterative estimate failed to settle."""


class UnstableDynamicsError(NumericalError):
    pass
