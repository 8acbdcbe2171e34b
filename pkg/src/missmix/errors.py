"""Exception types raised across the package.

Every error carries enough structure (offending component, eigenvalue,
coordinate index, ...) for callers to report precisely what went wrong
instead of parsing message strings.
"""

from __future__ import annotations


class MissmixError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MissmixError):
    """A parameter object violates one of its invariants."""


class NonSPDCovarianceError(InvalidParameterError):
    """Covariance matrix is not symmetric positive definite.

    Attributes:
        eigenvalue: the offending (smallest) eigenvalue.
        component: index of the mixture component, if applicable.
    """

    def __init__(self, eigenvalue: float, component: int | None = None):
        self.eigenvalue = float(eigenvalue)
        self.component = component
        where = "" if component is None else f" (component {component})"
        super().__init__(
            f"covariance is not SPD{where}: smallest eigenvalue "
            f"{self.eigenvalue:.6e} is below the 1e-10 floor"
        )


class ContractViolationError(MissmixError):
    """A caller violated an operation's precondition."""


class UnsupportedConfigError(MissmixError):
    """The requested computation is undefined for this configuration
    (e.g. a discriminant with g != 2 or heteroscedastic components)."""


class DegenerateComponentError(MissmixError):
    """A mixture component collapsed during fitting.

    Attributes:
        component: index (0-based) of the collapsed component.
        responsibility: its total responsibility at the point of failure.
    """

    def __init__(self, component: int, responsibility: float):
        self.component = component
        self.responsibility = float(responsibility)
        super().__init__(
            f"component {component} degenerated: total responsibility "
            f"{self.responsibility:.3e} < 1e-8"
        )


class MechanismStepError(MissmixError):
    """The Newton update of the mechanism parameters failed to ascend
    after exhausting step halvings.

    Attributes:
        xi: the mechanism parameter iterate at the point of failure.
    """

    def __init__(self, xi, message: str = "mechanism Newton step failed after 30 halvings"):
        self.xi = xi
        super().__init__(f"{message}; iterate {xi}")


class NonFiniteGradientError(MissmixError):
    """A score/gradient evaluation produced a non-finite entry.

    Attributes:
        coordinate: index of the first non-finite coordinate.
    """

    def __init__(self, coordinate: int):
        self.coordinate = int(coordinate)
        super().__init__(f"non-finite gradient at coordinate {self.coordinate}")


class ConfigError(MissmixError):
    """A run configuration file is invalid.

    Attributes:
        key: the offending key, if known.
        line: 1-based line number in the config file, if known.
    """

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        loc = ""
        if key is not None:
            loc += f" [key: {key}]"
        if line is not None:
            loc += f" [line {line}]"
        super().__init__(message + loc)
