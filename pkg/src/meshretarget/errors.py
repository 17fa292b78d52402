"""Exception types shared across the package."""


class RetargetError(Exception):
    """Base class for errors raised by meshretarget."""


class OutOfBoundsError(RetargetError, ValueError):
    """A point lies outside a rigid mesh rectangle."""


class OutsideMeshError(RetargetError, ValueError):
    """No quad of a deformed mesh contains the point."""


class NumericalError(RetargetError, ArithmeticError):
    """Inverse bilinear solve failed on a quad that should contain the point."""


class FoldOverError(RetargetError):
    """A mesh has inverted quads and cannot drive a backward warp."""

    def __init__(self, cells, message=None):
        self.cells = list(cells)
        if message is None:
            shown = ", ".join(f"({i},{j})" for i, j in self.cells[:12])
            more = "" if len(self.cells) <= 12 else f" ... (+{len(self.cells) - 12})"
            message = f"mesh has fold-over in {len(self.cells)} cell(s): {shown}{more}"
        super().__init__(message)


class DegenerateInputError(RetargetError, ValueError):
    """Inputs leave a quantity undefined (e.g. zero objects)."""


class UnsupportedOperationError(RetargetError):
    """The requested operation is not defined for this method."""


class OptimizationError(RetargetError):
    """The optimizer produced a non-finite loss."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
