"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the chart of a Lie-group map (e.g. angle at or near pi)."""


class ModelError(ValueError):
    """Robot-model document is malformed or violates a model invariant.

    ``path`` locates the offending node, e.g. ``links[3].joint.limits``.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class PreconditionError(ValueError):
    """A documented precondition of an operation is not met."""
