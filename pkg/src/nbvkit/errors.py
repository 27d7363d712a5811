"""Exception types shared across the toolkit."""


class InvalidInputError(ValueError):
    """An argument is outside the documented domain."""


class MeshFormatError(ValueError):
    """A mesh file could not be parsed."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ContractViolation(ValueError):
    """A precondition on a geometric object does not hold (e.g. a non-watertight mesh)."""


class SamplingFailure(RuntimeError):
    """Rejection sampling starved before producing the requested count."""


class RankDeficiencyError(ValueError):
    """A least-squares design matrix is too ill-conditioned to invert."""


class ConfigError(ValueError):
    """An experiment configuration field is invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SetupError(RuntimeError):
    """An experiment could not be initialised (e.g. no valid start pose)."""
