"""Exception hierarchy shared by the library, the CLI and the HTTP service."""


class VRelaxError(Exception):
    """Base class for every error raised by vrelax."""

    exit_code = 3
    http_status = 500


class AngularDomainError(VRelaxError, ValueError):
    """Malformed quantum numbers (|M| > J, J < 0, sigma outside {-1, 0, 1})."""

    exit_code = 2
    http_status = 400


class EnvironmentDomainError(VRelaxError, ValueError):
    """Invalid photon environment: negative samples, broken grids, bad parameters."""

    exit_code = 2
    http_status = 400


class SchemeError(VRelaxError, ValueError):
    """Level scheme violates the dipole or hyperfine constraints."""

    exit_code = 2
    http_status = 400


class ConfigError(VRelaxError):
    """Scenario configuration error, anchored to a file line when known."""

    exit_code = 2
    http_status = 400

    def __init__(self, message, path=None, line=None, section=None, key=None):
        self.message = message
        self.path = path
        self.line = line
        self.section = section
        self.key = key
        super().__init__(self.render())

    def render(self):
        where = ''
        if self.path is not None:
            where = f'{self.path}:{self.line}: ' if self.line else f'{self.path}: '
        elif self.line:
            where = f'line {self.line}: '
        if self.section and self.key:
            where += f'[{self.section}] {self.key}: '
        elif self.section:
            where += f'[{self.section}]: '
        return where + self.message


class RateContractError(VRelaxError):
    """RateSet violates the feeding/upper trace identity."""

    exit_code = 3
    http_status = 422

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f'{message} at {index}'
        super().__init__(message)


class NumericalAbort(VRelaxError):
    """Propagation left the physical region (trace drift or negativity)."""

    exit_code = 3
    http_status = 422

    def __init__(self, message, time=None, trace_drift=None, min_eigenvalue=None):
        self.time = time
        self.trace_drift = trace_drift
        self.min_eigenvalue = min_eigenvalue
        details = []
        if time is not None:
            details.append(f't={time:.6g}')
        if trace_drift is not None:
            details.append(f'trace drift={trace_drift:.3e}')
        if min_eigenvalue is not None:
            details.append(f'min eigenvalue={min_eigenvalue:.3e}')
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class DegenerateSteadyState(VRelaxError):
    """The generator null space has more than one dimension."""

    exit_code = 3
    http_status = 422

    def __init__(self, degeneracy):
        self.degeneracy = degeneracy
        super().__init__(f'steady state is {degeneracy}-fold degenerate')
