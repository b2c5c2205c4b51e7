"""
Error Hierarchy

All errors raised deliberately by the workbench derive from WorkbenchError so
the CLI can turn them into one-line diagnostics.
"""

from typing import Sequence


class WorkbenchError(Exception):
    """Base class for every expected failure"""


class ShapeError(WorkbenchError, ValueError):
    """Tensor shapes or dimensions do not fit together"""

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            rendered = " vs ".join(str(tuple(s)) for s in shapes)
            message = f"{message}: {rendered}"
        super().__init__(message)


class ConfigError(WorkbenchError, ValueError):
    """Invalid or unknown configuration value"""


class NonFiniteError(WorkbenchError, ValueError):
    """NaN or Inf where finite values are required"""


class DatasetError(WorkbenchError):
    """Dataset files missing or inconsistent with the model"""


# =============================================================================
# Container format errors
# =============================================================================

class ContainerFormatError(WorkbenchError):
    """Binary container could not be decoded"""


class BadMagicError(ContainerFormatError):
    """File does not start with the expected magic bytes"""


class UnsupportedVersionError(ContainerFormatError):
    """File declares a format version this build cannot read"""


class TruncatedFileError(ContainerFormatError):
    """File ends before the declared payload"""


class DimensionOverflowError(ContainerFormatError):
    """Declared dimensions are implausible for the payload"""


class StructureError(ContainerFormatError):
    """Blob layout does not match the expected architecture"""


class LabelRangeError(DatasetError, ValueError):
    """Class id outside [0, num_classes)"""


class DegenerateInputError(WorkbenchError, ValueError):
    """Input for which the requested quantity is undefined, e.g. an all-zero matrix"""
