class ScprmError(Exception):
    """Base class for every error raised by this package."""


class GraphFormatError(ScprmError):
    """A triples/types/queries file could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class UnknownEntityError(ScprmError, KeyError):
    def __init__(self, entity):
        self.entity = entity
        super().__init__(f"unknown or untyped entity {entity!r}")

    def __str__(self):
        return self.args[0]


class InvalidTrajectoryError(ScprmError, ValueError):
    pass


class InfeasibleError(ScprmError, ValueError):
    pass


class ConfigError(ScprmError, ValueError):
    pass


class TrainingError(ScprmError, RuntimeError):
    pass
