"""Exception types shared across the engine.

The CLI maps these onto exit codes: config problems exit 2, backend
problems exit 3, data problems exit 4.
"""


class KnmError(Exception):
    """Base class for all engine errors."""


class ConfigError(KnmError):
    """Bad or missing configuration (CLI flags, config file)."""


class EmptyCorpus(KnmError):
    """A corpus yielded no tokens where at least one is required."""


class EmptyInput(KnmError):
    """An operation that requires a nonempty input received an empty one."""


class LengthMismatch(KnmError):
    """Two paired sequences differ in length."""


class DimensionMismatch(KnmError):
    """An embedding does not match the configured dimension."""


class VocabMismatch(KnmError):
    """Two distributions do not share the same vocabulary size."""


class BackendUnavailable(KnmError):
    """The remote model backend could not be reached or answered garbage.

    Callers must surface this; silently substituting a uniform
    distribution would corrupt every downstream statistic.
    """


class FormatError(KnmError):
    """A persisted file is malformed (bad magic, version, or truncation)."""


class ChecksumError(KnmError):
    """A persisted file is well-formed but its checksum does not match."""
