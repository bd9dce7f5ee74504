"""Exception types raised across the package."""


class InputError(ValueError):
    """Invalid argument value (out-of-range label, bad fraction, wrong length...)."""


class DimensionError(ValueError):
    """Shape mismatch between a tensor and the layer or mean it meets."""


class PlacementError(ValueError):
    """Internal classifiers cannot be placed on the given network."""


class ValidationError(ValueError):
    """A parsed file is well-formed but its contents violate an invariant."""


class ParseError(ValueError):
    """A file could not be parsed.

    ``line`` is 1-based; ``offset`` is the 1-based column (or byte offset for
    JSON documents) where parsing failed, when known.
    """

    def __init__(self, message, line=None, offset=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", offset {offset})" if offset is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.offset = offset


class BudgetRangeError(ValueError):
    """FLOPs budget outside the interval covered by a frontier."""

    def __init__(self, budget, low, high):
        super().__init__(f"budget {budget!r} outside valid interval [{low!r}, {high!r}]")
        self.budget = budget
        self.interval = (low, high)
