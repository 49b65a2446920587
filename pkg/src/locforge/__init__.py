"""Batch toolkit for localization-corpus curation, serialization,
evaluation, and training-stage planning."""

from .model import (
    ABS,
    AbsolutePixels,
    AnnotatedImage,
    Box,
    ConversationRecord,
    DEFAULT_COORD_BINS,
    DetailLevel,
    NormalizedGrid,
    RegionAnnotation,
    Role,
    TaskKind,
    TaskSample,
    Turn,
    from_grid,
    to_grid,
    validate_box,
)

__version__ = "0.1.0"

__all__ = [
    "ABS",
    "AbsolutePixels",
    "AnnotatedImage",
    "Box",
    "ConversationRecord",
    "DEFAULT_COORD_BINS",
    "DetailLevel",
    "NormalizedGrid",
    "RegionAnnotation",
    "Role",
    "TaskKind",
    "TaskSample",
    "Turn",
    "from_grid",
    "to_grid",
    "validate_box",
    "__version__",
]
