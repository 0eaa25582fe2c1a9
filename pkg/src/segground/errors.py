"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Operands have different raster dimensions."""


class EmptyMaskError(ValueError):
    """Operation requires a mask with at least one true pixel."""


class LengthMismatchError(ValueError):
    """Sequence lengths (or run sums) do not line up."""


class MalformedRunsError(ValueError):
    """Run-length sequence violates the alternating minimal form."""


class EmptyInputError(ValueError):
    """Operation is undefined on an empty input collection."""


class ConfigMismatchError(ValueError):
    """Two accumulators were built with different metric configurations."""


class KnowledgeParseError(ValueError):
    """Knowledge-base file is not valid or violates its schema."""


class DuplicateLabelError(ValueError):
    """Knowledge-base file defines the same normalized label twice."""


class UnknownLabelError(KeyError):
    """Label has no entry in the knowledge base."""


class ManifestError(ValueError):
    """Input manifest record is missing fields or is malformed."""


class ProviderError(RuntimeError):
    """Completion provider failed after the configured retries."""


class UngroundableAnswerError(ValueError):
    """Generated answer mentions none of the known labels."""


class BadRatiosError(ValueError):
    """Split ratios are negative or do not sum to one."""


class EmptySourceError(ValueError):
    """A mixing source with positive weight holds no samples."""


class IdMismatchError(ValueError):
    """Prediction and gold files do not cover the same ids."""

    def __init__(self, missing_pred: list, missing_gold: list):
        self.missing_pred = list(missing_pred)
        self.missing_gold = list(missing_gold)
        super().__init__(
            f"ids missing from predictions: {self.missing_pred[:10]}; "
            f"ids missing from gold: {self.missing_gold[:10]}"
        )


class OutOfBoundsError(ValueError):
    """Visual prompt lies outside the owning image."""


class NonFiniteError(ArithmeticError):
    """A loss or gradient evaluated to NaN or infinity."""
