"""Exception hierarchy shared by all pipeline stages."""


class PainProfError(Exception):
    """Base class; ``category`` is what the CLI reports."""

    category = "error"


class InputError(PainProfError, ValueError):
    category = "input"


class OutOfRangeError(PainProfError, ValueError):
    category = "range"


class RegistrationError(PainProfError, ValueError):
    category = "registration"


class EigenConvergenceError(PainProfError, RuntimeError):
    category = "numerics"


class ConfigError(PainProfError, ValueError):
    category = "config"


class MissingArtifactError(PainProfError, FileNotFoundError):
    category = "missing-artifact"


class IngestError(PainProfError, ValueError):
    """A file could not be turned into a valid recording.

    ``line`` is 1-based and counts the header, so it matches what an editor
    shows; it is ``None`` for file-level problems.
    """

    category = "ingest"

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        self.message = message
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")
