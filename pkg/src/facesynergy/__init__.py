"""Facial AU detection from distal EMG plus camera labels, and AU synergy analysis."""
__version__ = "0.1.0"

from .core import Block, Condition, Kind, LabelTrack, Modality, Recording  # noqa: E402
from .errors import (  # noqa: E402
    DegenerateAgreementError,
    DegenerateInputError,
    InvalidArgumentError,
    MissingColumnError,
    ParseError,
    UndefinedRatioError,
)

__all__ = [
    "Block", "Condition", "Kind", "LabelTrack", "Modality", "Recording",
    "DegenerateAgreementError", "DegenerateInputError", "InvalidArgumentError",
    "MissingColumnError", "ParseError", "UndefinedRatioError", "__version__",
]
