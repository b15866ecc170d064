"""Jump and singular point detection for sampled functions.

Multiscale blowup analysis, L1 oscillation functionals, decomposition-set
extraction, and executable cone-property / Lipschitz-graph-cover checks for
rectifiability of the detected sets.
"""

from .grid import (
    Ball,
    BlowupSample,
    GridFunction,
    UnitBallLattice,
    blowup_sample,
    default_lattice,
    interpolate,
    l1_distance,
    read_grid,
    write_grid,
)
from .oscillation import Region, OscTable, osc, osc_table, weighted_median

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "BlowupSample",
    "GridFunction",
    "UnitBallLattice",
    "blowup_sample",
    "default_lattice",
    "interpolate",
    "l1_distance",
    "read_grid",
    "write_grid",
    "Region",
    "OscTable",
    "osc",
    "osc_table",
    "weighted_median",
    "__version__",
]
