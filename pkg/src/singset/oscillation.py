"""L1 oscillation of sampled functions: weighted medians and multiscale tables.

The oscillation of u over a region A is the smallest mean absolute deviation
from a constant, ``min_c mean_A |u - c|``.  The minimizing constant is a
weighted median, computed exactly here; ties resolve to the lower endpoint of
the minimizing interval so results are reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    EmptyRegion,
    NonFiniteValues,
    OutOfDomain,
    RadiusTooSmall,
    RegionTooSmall,
)
from .grid import Ball, BlowupSample, GridFunction, UnitBallLattice, blowup_sample

# Ball regions capturing fewer nodes than this are statistical noise and are
# refused (callers may exclude the ball instead of failing).
MIN_REGION_NODES = 8


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Exact minimizer of sum_i w_i |v_i - c| (lower median on ties)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyInput("weighted_median of empty input")
    if values.shape != weights.shape:
        raise ValueError("values and weights must have equal length")
    if not np.isfinite(values).all():
        raise NonFiniteValues("weighted_median requires finite values")
    if not (weights > 0).all():
        raise ValueError("weights must be positive")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, 0.5 * cum[-1], side="left"))
    return float(values[order][idx])


def lower_median(values: np.ndarray) -> float:
    """Uniform-weight lower median via selection (no full sort)."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyInput("median of empty input")
    k = (values.size - 1) // 2
    return float(np.partition(values, k)[k])


def rowwise_lower_median(matrix: np.ndarray) -> np.ndarray:
    """Lower median of each row of a 2-d array."""
    k = (matrix.shape[1] - 1) // 2
    return np.partition(matrix, k, axis=1)[:, k]


@dataclass(eq=False)
class Region:
    """A weighted index subset of a lattice's nodes or a grid's cells."""

    indices: np.ndarray
    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if indices.size == 0:
            raise EmptyRegion(f"region {self.label!r} is empty")
        if self.weights is None:
            weights = np.ones(indices.size)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape != indices.shape:
            raise ValueError("weights length must match indices")
        if not (weights > 0).all() or not weights.sum() > 0:
            raise ValueError("region weights must be positive")
        self.indices = indices
        self.weights = weights

    @property
    def n_nodes(self) -> int:
        return self.indices.size

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    @classmethod
    def full_lattice(cls, lattice: UnitBallLattice) -> "Region":
        return cls(np.arange(lattice.n_nodes), lattice.weights.copy(), label="B1")

    @classmethod
    def ball_on_lattice(
        cls, lattice: UnitBallLattice, ball: Ball, min_nodes: int = MIN_REGION_NODES
    ) -> "Region":
        mask = ball.contains(lattice.nodes)
        count = int(mask.sum())
        label = f"ball(r={ball.radius:g})"
        if count == 0:
            raise EmptyRegion(f"{label} captures no lattice nodes")
        if count < min_nodes:
            raise RegionTooSmall(f"{label} captures only {count} nodes (< {min_nodes})")
        return cls(np.nonzero(mask)[0], lattice.weights[mask].copy(), label=label)

    @classmethod
    def ball_on_grid(
        cls, u: GridFunction, ball: Ball, min_nodes: int = MIN_REGION_NODES
    ) -> "Region":
        mask = ball.contains(u.cell_centers())
        count = int(mask.sum())
        label = f"grid-ball(r={ball.radius:g})"
        if count == 0:
            raise EmptyRegion(f"{label} captures no cells")
        if count < min_nodes:
            raise RegionTooSmall(f"{label} captures only {count} cells (< {min_nodes})")
        return cls(np.nonzero(mask)[0], None, label=label)

    @classmethod
    def from_indices(cls, indices, weights=None, label: str = "") -> "Region":
        return cls(np.asarray(indices), weights, label=label)


def osc(obj: GridFunction | BlowupSample, region: Region) -> float:
    """Oscillation of the sampled values over the region.

    NaN samples are dropped (undefined); infinities raise, since oscillation
    of extended values is only meaningful after the arctan transform.
    Zero exactly when all region samples are equal.
    """
    vals = obj.values[region.indices]
    wts = region.weights
    defined = ~np.isnan(vals)
    if not defined.all():
        vals = vals[defined]
        wts = wts[defined]
    if vals.size == 0:
        raise EmptyRegion("region contains no defined samples")
    if np.isinf(vals).any():
        raise NonFiniteValues("region contains infinite values")
    if region.uniform and defined.all():
        c = lower_median(vals)
        return float(np.mean(np.abs(vals - c)))
    c = weighted_median(vals, wts)
    return float(np.sum(wts * np.abs(vals - c)) / np.sum(wts))


@dataclass(eq=False)
class OscTable:
    """Oscillations of the blowups of u at x, per radius and per probe ball.

    Rows follow ``radii`` (strictly decreasing).  ``b1`` holds the oscillation
    over the whole unit ball; ``balls`` has one column per family ball, NaN
    where the ball captured too few nodes.  ``available`` marks radii whose
    blowup could actually be sampled.
    """

    x: np.ndarray
    radii: np.ndarray
    ball_ids: list[str]
    b1: np.ndarray
    balls: np.ndarray
    available: np.ndarray

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        if radii.size > 1 and not (np.diff(radii) < 0).all():
            raise ValueError("radii must be strictly decreasing")
        self.radii = radii

    def to_json_dict(self) -> dict:
        def cell(v):
            return None if np.isnan(v) else float(v)

        return {
            "x": [float(v) for v in np.atleast_1d(self.x)],
            "radii": [float(r) for r in self.radii],
            "available": [bool(a) for a in self.available],
            "ball_ids": list(self.ball_ids),
            "b1": [cell(v) for v in self.b1],
            "balls": [[cell(v) for v in row] for row in self.balls],
        }


def osc_table(
    u: GridFunction,
    x: np.ndarray,
    radii,
    ball_family: list[Ball],
    lattice: UnitBallLattice,
    ball_ids: list[str] | None = None,
) -> OscTable:
    """Tabulate osc(u^{x,r}, B1) and osc(u^{x,r}, B) for every r and family ball.

    Radii whose blowup leaves the domain (or is below the resolution guard)
    are marked unavailable instead of failing the whole table.
    """
    radii = np.asarray(sorted(np.atleast_1d(radii), reverse=True), dtype=float)
    if ball_ids is None:
        ball_ids = [f"ball{k}" for k in range(len(ball_family))]
    full = Region.full_lattice(lattice)
    regions: list[Region | None] = []
    for ball in ball_family:
        try:
            regions.append(Region.ball_on_lattice(lattice, ball))
        except EmptyRegion:
            regions.append(None)

    n_r, n_b = radii.size, len(ball_family)
    b1 = np.full(n_r, np.nan)
    mat = np.full((n_r, n_b), np.nan)
    avail = np.zeros(n_r, dtype=bool)
    for i, r in enumerate(radii):
        try:
            sample = blowup_sample(u, x, float(r), lattice)
        except (OutOfDomain, RadiusTooSmall):
            continue
        avail[i] = True
        b1[i] = osc(sample, full)
        for j, region in enumerate(regions):
            if region is not None:
                mat[i, j] = osc(sample, region)
    return OscTable(
        x=np.atleast_1d(np.asarray(x, dtype=float)),
        radii=radii,
        ball_ids=list(ball_ids),
        b1=b1,
        balls=mat,
        available=avail,
    )
