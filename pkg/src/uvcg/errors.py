"""Exception hierarchy shared by all uvcg modules.

The CLI maps these onto its exit-code contract: usage/configuration
problems exit 2, data/format problems exit 3, numerical failures exit 4,
sidecar failures exit 5.
"""


class UvcgError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(UvcgError):
    """Invalid configuration, incompatible shapes, or misuse of an API."""


class DataError(UvcgError):
    """Base class for problems with on-disk data."""


class FormatError(DataError):
    """A file exists but is not in the expected format."""


class IntegrityError(DataError):
    """Data is well-formed but internally inconsistent."""


class IoError(DataError):
    """Reading or writing data failed at the OS level."""


class SchemaError(DataError):
    """A report violates the pinned JSON schema."""


class NumericalError(UvcgError):
    """A computation produced NaN or otherwise lost numerical meaning."""


class CapabilityError(ConfigError):
    """An endpoint was asked for an operation it does not support."""


class SidecarError(UvcgError):
    """A sidecar process failed to launch, misbehaved, or broke protocol."""
