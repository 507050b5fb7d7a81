"""Exception hierarchy shared across the package."""


class SlideSearchError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SlideSearchError, ValueError):
    """A value violates a documented invariant or precondition."""


class DataError(SlideSearchError):
    """Input data is structurally valid but unusable (missing files,
    underfull classes, unknown ids)."""


class FormatError(SlideSearchError):
    """A persisted artifact does not match its declared format
    (bad magic, version, dimension, truncation)."""


class ClassUnderflowError(DataError):
    """Balanced sampling was asked for more patches than a class holds."""

    def __init__(self, requested: int, counts: dict):
        self.requested = requested
        self.counts = dict(counts)
        short = {k: v for k, v in counts.items() if v < requested}
        super().__init__(
            f"requested {requested} per class but classes are short: {short}"
        )


class DimMismatchError(FormatError):
    """Embedding dimension differs from what the database expects."""
