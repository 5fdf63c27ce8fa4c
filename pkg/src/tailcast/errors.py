class NumericalError(RuntimeError):
    """A fit produced non-finite values or an unrecoverable factorization failure."""


class MissingPrerequisiteError(RuntimeError):
    """A pipeline stage was run before the stage producing its inputs."""
