"""Exception types shared across the library."""


class TTRNNError(Exception):
    """Base class for all library errors."""


class ExtentMismatch(TTRNNError):
    """Shapes or extents are inconsistent for the requested operation."""


class IndexOutOfRange(TTRNNError):
    """A multi-index or gate index is outside the valid range."""


class SVDFailure(TTRNNError):
    """SVD could not be computed (e.g. non-finite input)."""


class NotFactorizable(TTRNNError):
    """Requested integer factorization does not exist."""


class NonScalarLoss(TTRNNError):
    """backward() was called on a non-scalar output."""


class NonFiniteFunctionValue(TTRNNError):
    """Finite-difference probe produced a NaN or infinity."""


class LabelOutOfRange(TTRNNError):
    """Class label index exceeds the number of logits."""


class ZeroNormEmbedding(TTRNNError):
    """Cosine similarity is undefined for a zero-norm embedding."""


class FewerThanTwoSpeakers(TTRNNError):
    """GE2E loss needs at least two speakers."""


class MalformedHeader(TTRNNError):
    """A binary container (WAV, TTEN1) has an invalid or truncated header."""


class UnsupportedEncoding(TTRNNError):
    """WAV payload is not 16-bit PCM."""


class SignalTooShort(TTRNNError):
    """Audio buffer is shorter than one analysis frame."""


class NegativeFrequency(TTRNNError):
    """Mel scale is only defined for non-negative frequencies."""


class BadMagic(TTRNNError):
    """IDX file does not start with the expected magic bytes."""


class TruncatedPayload(TTRNNError):
    """IDX payload is shorter than the header declares."""


class RaggedImages(TTRNNError):
    """Images in a dataset do not share a common flattened length."""


class EmptyScores(TTRNNError):
    """EER needs at least one positive and one negative score."""


class LengthMismatch(TTRNNError):
    """Prediction and truth label arrays differ in length."""


class ZeroCount(TTRNNError):
    """Compression ratio is undefined for zero parameter counts."""


class ZeroReps(TTRNNError):
    """Timing harness needs at least one repetition."""


class EmptyDataset(TTRNNError):
    """Training requires non-empty train and validation splits."""


class NonFiniteLoss(TTRNNError):
    """Training loss diverged to NaN or infinity."""


class ConfigError(TTRNNError):
    """Run configuration failed validation."""


class IncompatibleCheckpoint(TTRNNError):
    """Checkpoint contents do not match the requested model or data."""
