"""
Typed errors shared across the toolkit.

Validation problems stay Django ``ValidationError`` instances (dict form,
keyed by the offending field) so callers can handle them uniformly; the
subclasses below carry the extra context each layer needs.
"""

from django.core.exceptions import ValidationError


class DimensionError(ValidationError):
    """A tensor or volume axis has the wrong extent."""

    def __init__(self, message, *, axis):
        self.axis = axis
        super().__init__({axis: message})


class UsageError(ValidationError):
    """An operation was called in a state it does not support."""

    def __init__(self, message, *, field="usage"):
        super().__init__({field: message})


class GradCheckError(ValidationError):
    def __init__(self, message):
        super().__init__({"grad_check": message})


class PhantomSpecError(ValidationError):
    def __init__(self, message, *, field="spec"):
        super().__init__({field: message})


class NiftiParseError(ValidationError):
    """Malformed NIfTI-1 input; ``offset`` is the byte position at fault."""

    def __init__(self, message, *, offset):
        self.offset = offset
        super().__init__({"nifti": f"{message} (byte offset {offset})"})


class WeightFileError(ValidationError):
    def __init__(self, message, *, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__({"weights": message})


class ChecksumError(WeightFileError):
    pass


class WeightVersionError(WeightFileError):
    pass


class NumericalAbort(Exception):
    """Training produced a non-finite loss."""

    def __init__(self, *, iteration, loss, layer_norms):
        self.iteration = iteration
        self.loss = loss
        self.layer_norms = dict(layer_norms)
        worst = sorted(self.layer_norms.items(), key=lambda item: -item[1])[:5]
        summary = ", ".join(f"{name}={norm:.4g}" for name, norm in worst)
        super().__init__(
            f"Non-finite loss {loss} at iteration {iteration}; largest parameter norms: {summary}"
        )


class EmptyInputError(UsageError):
    """A manifest, split or sample set has nothing to process."""

    def __init__(self, message, *, field="input"):
        super().__init__(message, field=field)
