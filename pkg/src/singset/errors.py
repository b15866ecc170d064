"""Exception types shared across the package."""


class SingsetError(Exception):
    """Base class for all package errors."""


class OutOfDomain(SingsetError):
    """Requested ball does not fit inside the grid's domain box."""


class RadiusTooSmall(SingsetError):
    """Blowup radius is below the resolution guard (r_min cells)."""


class LatticeMismatch(SingsetError):
    """Two samples do not live on the same unit-ball lattice."""


class AllUndefined(SingsetError):
    """No valid node pairs remain after dropping undefined values."""


class EmptyInput(SingsetError):
    """Empty value/weight arrays where at least one element is required."""


class EmptyRegion(SingsetError):
    """Region is empty after intersecting with valid samples."""


class RegionTooSmall(EmptyRegion):
    """Region captured fewer nodes than the statistical minimum (8)."""


class NonFiniteValues(SingsetError):
    """Infinite values reached an operation that requires finite input.

    Extended-valued grids must be routed through the arctan transform first.
    """


class InsufficientRadii(SingsetError):
    """Fewer valid blowup radii than required at this point."""


class DegenerateHalf(SingsetError):
    """A half-ball in a jump fit captured fewer nodes than the minimum."""


class NoQuietBall(SingsetError):
    """No ball in the supplied family has oscillation below the threshold."""


class DegenerateCone(SingsetError):
    """Ball geometry does not produce a proper exclusion cone (eps >= |z0|)."""


class FormatError(SingsetError):
    """Malformed grid file. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DimensionUnsupported(SingsetError):
    """Grid dimension outside the supported range 1..3."""


class InvalidSpec(SingsetError):
    """Corpus spec is inconsistent or names an unknown kind."""
