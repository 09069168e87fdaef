"""Exception types shared across the package."""


class TriageqError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TriageqError):
    """A config file could not be read or does not match the schema."""


class WorkflowValidationError(TriageqError):
    """A workflow description violates one or more invariants.

    Carries the full list of violations so callers can report them all at
    once instead of stopping at the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class EmptyClassError(TriageqError):
    """A conditional quantity was requested for a zero-probability class."""


class UnstableQueueError(TriageqError):
    """Offered load of a class prefix is at or above server capacity."""

    def __init__(self, prefix, load):
        self.prefix = tuple(prefix)
        self.load = float(load)
        super().__init__(
            "unstable queue: cumulative load %.6g >= 1 for class prefix [%s]"
            % (self.load, ", ".join(self.prefix))
        )


class TheoryUnsupportedError(TriageqError):
    """The requested analytical method does not cover this workflow.

    Raised instead of silently approximating; the simulation engine has no
    such restriction.
    """
