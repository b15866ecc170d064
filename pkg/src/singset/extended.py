"""Extended-valued functions via the arctan transform and convergence in measure.

Measurable functions taking values in [-inf, +inf] are handled by mapping
through arctan (extended to +/- pi/2 at the infinities), which is bounded and
strictly increasing, and classifying the transformed function.  Convergence
in measure is exposed directly through the exceedance fraction below.
"""

from __future__ import annotations

import numpy as np

from .classify import ClassifyConfig, PointClass, classify_grid, classify_point
from .errors import LatticeMismatch
from .grid import BlowupSample, GridFunction, UnitBallLattice

PHI_LO = -np.pi / 2
PHI_HI = np.pi / 2


def phi(values):
    """arctan, extended by its limits at +/-inf; NaN passes through."""
    return np.arctan(values)


def phi_inv(values):
    """Inverse of phi; +/-pi/2 map back to +/-inf."""
    values = np.asarray(values, dtype=float)
    out = np.tan(values)
    out = np.where(values >= PHI_HI, np.inf, out)
    out = np.where(values <= PHI_LO, -np.inf, out)
    return out if out.ndim else float(out)


def phi_apply(u: GridFunction) -> GridFunction:
    """Pointwise transform of the grid; output is finite wherever defined."""
    return GridFunction(
        shape=u.shape,
        spacing=u.spacing,
        origin=u.origin.copy(),
        values=phi(u.values),
    )


def measure_distance(f: BlowupSample, g: BlowupSample, eps: float) -> float:
    """Fraction of in-ball nodes where |f - g| exceeds eps.

    The discrete stand-in for convergence in measure; inputs are expected to
    be transform-space (finite) samples.  Node pairs where either side is
    undefined are excluded from both numerator and denominator.
    """
    if not f.lattice.same_as(g.lattice):
        raise LatticeMismatch("samples live on different lattices")
    if not eps > 0:
        raise ValueError("eps must be positive")
    valid = ~np.isnan(f.values) & ~np.isnan(g.values)
    if not valid.any():
        return 0.0
    a, b = f.values[valid], g.values[valid]
    diff = np.where(a == b, 0.0, np.abs(a - b))
    return float(np.mean(diff > eps))


def classify_extended(
    u: GridFunction,
    x: np.ndarray,
    cfg: ClassifyConfig | None = None,
    lattice: UnitBallLattice | None = None,
) -> PointClass:
    """Classify a point of a possibly extended-valued grid.

    Identical to classifying arctan(u): the transform is bounded and strictly
    increasing, so the singular/jump structure is preserved while infinities
    become the finite plateau values +/-pi/2.  Reported fit parameters are in
    transform space; map them back with phi_inv when needed.
    """
    return classify_point(phi_apply(u), x, cfg, lattice)


def classify_grid_extended(
    u: GridFunction,
    cfg: ClassifyConfig | None = None,
    lattice: UnitBallLattice | None = None,
):
    """Whole-grid classification of a possibly extended-valued grid."""
    return classify_grid(phi_apply(u), cfg, lattice)
