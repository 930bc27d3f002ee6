"""Exception hierarchy shared across the package."""


class PMetaError(Exception):
    """Base class for all errors raised by pmetarl."""


class InvalidTaskParameter(PMetaError, ValueError):
    """A task-family constructor received an unusable parameter."""


class InvalidIndex(PMetaError, IndexError):
    """A state or action index is out of range for the task."""


class InvalidParameter(PMetaError, ValueError):
    """A numeric hyperparameter violates its precondition."""


class InvalidState(PMetaError, ValueError):
    """Tables handed to an operation do not fit together."""


class NonConvergence(PMetaError, RuntimeError):
    """An iteration that must converge ran out of iterations."""


class BoundUndefined(PMetaError, ValueError):
    """A theoretical bound needs lambda**2 > 8 and did not get it."""


class ConfigError(PMetaError, ValueError):
    """Experiment configuration could not be parsed or validated."""


class EmptyInput(PMetaError, ValueError):
    """An emitter was handed no records."""
