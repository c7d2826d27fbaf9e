"""Exception types shared across the engine.

Everything raised on bad data or bad usage derives from DiscernError so the
CLI can map it to a data/validation exit code; anything else escaping is an
internal error.
"""


class DiscernError(Exception):
    """Base class for data and validation failures."""


class EmptyDocument(DiscernError):
    """An article produced no text, sentences, or tokens."""


class InvalidScore(DiscernError):
    """A rater score is outside the 1..5 range."""


class StratificationInfeasible(DiscernError):
    """A class has fewer members than the number of folds."""


class DegenerateLabels(DiscernError):
    """An operation needing both classes saw only one."""


class ShapeMismatch(DiscernError):
    """Tensor or feature dimensions do not line up."""


class NonFiniteValue(DiscernError):
    """A NaN or infinity appeared in a tensor value or gradient."""


class InvalidProbability(DiscernError):
    """A probability parameter is outside its admissible range."""


class BadMagic(DiscernError):
    """A binary file does not start with the expected magic bytes."""


class VersionUnsupported(DiscernError):
    """A binary file declares a format version this build cannot read."""


class ChecksumMismatch(DiscernError):
    """Archive payload bytes do not match the manifest checksum."""


class MissingDocument(DiscernError):
    """A document id was requested that the source does not cover."""


class NoAttention(DiscernError):
    """Attention output was requested from a model that has none."""


class DivergedLoss(DiscernError):
    """The training objective became non-finite."""


class CheckpointError(DiscernError):
    """A checkpoint file is inconsistent with the expected model layout."""


class EmptyVocabulary(DiscernError):
    """Vocabulary fitting saw no usable terms."""
