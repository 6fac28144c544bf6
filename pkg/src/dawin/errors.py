"""Exception types shared across the package.

Anything that should map to a "data/format" failure at the command line
derives from DawinError; plain ValueError stays reserved for bad arguments.
"""


class DawinError(Exception):
    """Base class for package-specific failures."""


class IncompatibleModelsError(DawinError):
    """Parameter vectors cannot be combined (layout id or length mismatch)."""


class CheckpointFormatError(DawinError):
    """Checkpoint bytes are malformed or inconsistent with their header."""


class DataFormatError(DawinError):
    """A domain CSV, manifest, or serialized artifact failed to parse."""


class InsufficientSamplesError(DawinError):
    """An operation needs more samples than were provided."""


class DegenerateDomainError(DawinError):
    """Domain statistics collapse, e.g. zero mean entropy."""


class UndefinedOracleError(DawinError):
    """Oracle coefficient undefined: both true-label masses vanish."""
