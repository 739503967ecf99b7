"""Exception types shared across the toolkit."""


class CurvitopoError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedDtype(CurvitopoError):
    """File holds a dtype outside the supported float/unsigned-int set."""


class ShapeMismatch(CurvitopoError):
    """Declared shape disagrees with the data actually present."""


class NonFinite(CurvitopoError):
    """Volume data contains NaN or Inf."""


class IoFailure(CurvitopoError):
    """Reading or writing a volume file failed."""


class NotEnoughPlanes(CurvitopoError):
    """Requested more slices than the volume has planes."""


class NoBackground(CurvitopoError):
    """Distance transform needs at least one background pixel."""


class AllSlicesEmpty(CurvitopoError):
    """Every sampled slice binarized to empty foreground."""


class DoesNotFit(CurvitopoError):
    """Phantom structure does not fit inside the requested shape."""


class NotApplicable(CurvitopoError):
    """Perturbation precondition on the structure is not met."""


class DegenerateRangeWarning(UserWarning):
    """Volume became constant during preprocessing; returned as all zeros."""
