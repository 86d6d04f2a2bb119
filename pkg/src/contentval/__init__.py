"""Content validity assessment of questionnaire items.

Expert-panel Content Validity Ratios, embedding-based construct assignment,
and pair-dataset generation for fine-tuning sentence similarity models.
"""

from contentval.errors import ConfigError, ContentValidityError, InputError, RemoteError
from contentval.model import (
    AccuracyReport,
    Construct,
    Item,
    Questionnaire,
    Rating,
    RatingSet,
    ValidationReport,
    parse_questionnaire,
    parse_ratings,
    validate_alignment,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "ConfigError",
    "Construct",
    "ContentValidityError",
    "InputError",
    "Item",
    "Questionnaire",
    "Rating",
    "RatingSet",
    "RemoteError",
    "ValidationReport",
    "parse_questionnaire",
    "parse_ratings",
    "validate_alignment",
]
