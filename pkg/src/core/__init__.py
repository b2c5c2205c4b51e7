"""Core components shared by every workbench module"""

from .exceptions import (
    WorkbenchError,
    ShapeError,
    ConfigError,
    NonFiniteError,
    DatasetError,
    LabelRangeError,
    ContainerFormatError,
    BadMagicError,
    UnsupportedVersionError,
    TruncatedFileError,
    DimensionOverflowError,
    StructureError,
    DegenerateInputError,
)
from .models import AttackConfig, AttackMethod, SvdHook, GradMode, ResultRow, CKAReport

__all__ = [
    "WorkbenchError",
    "ShapeError",
    "ConfigError",
    "NonFiniteError",
    "DatasetError",
    "LabelRangeError",
    "ContainerFormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "DimensionOverflowError",
    "StructureError",
    "DegenerateInputError",
    "AttackConfig",
    "AttackMethod",
    "SvdHook",
    "GradMode",
    "ResultRow",
    "CKAReport",
]
