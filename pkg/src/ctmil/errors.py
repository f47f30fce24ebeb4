"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: configuration/validation problems
exit 1, runtime failures (corrupt files, numeric blow-ups, I/O) exit 2.
"""


class CtmilError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(CtmilError):
    """A configuration value is out of range or inconsistent."""


class ValidationError(CtmilError):
    """Input data violates a documented invariant (manifest, splits)."""


class FormatError(CtmilError):
    """A binary file does not match its declared layout."""


class TrainingError(CtmilError):
    """Training produced a non-finite value or an invalid state."""
