"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, malformed input shapes or bad parameters.

    Parameters
    ----------
    message : str
        Human readable description.
    line : int, optional
        1-based line number in a configuration file, when applicable.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(RuntimeError):
    """A numerical failure that aborts a simulation (exit status 3)."""


class SingularMapError(NumericalError):
    """A map Jacobian with non-positive determinant was encountered.

    Attributes
    ----------
    location : ndarray
        Query point at which the failure was detected.
    stage : int
        Index of the submap in the composition (0 is the current map, then
        the stack from newest to oldest).
    det : float
        Offending determinant value.
    """

    def __init__(self, location, stage, det):
        self.location = location
        self.stage = stage
        self.det = det
        super().__init__(
            f"non-positive Jacobian determinant {det:.6g} at point "
            f"{tuple(float(v) for v in location)} in composition stage {stage}"
        )


class ContractError(ValueError):
    """A call violated a documented precondition (for example a time outside
    the validity interval of a velocity interpolant)."""
