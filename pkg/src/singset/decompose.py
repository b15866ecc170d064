"""Decomposition sets, exclusion cones, and Lipschitz-graph coverings.

Points whose rescalings oscillate at least delta on the unit ball but at most
tau*delta on a fixed sub-ball form the decomposition sets mined here.  Any two
such points exclude each other from a truncated cone built from the sub-ball
geometry; the cone check and the cell-wise slope bound below turn that
exclusion into executable evidence that the extracted set sits on Lipschitz
graphs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .classify import ClassifyConfig
from .errors import DegenerateCone, EmptyRegion, InsufficientRadii, InvalidSpec
from .grid import (
    Ball,
    GridFunction,
    UnitBallLattice,
    aligned_blowup_batch,
    blowup_sample,
    default_lattice,
)
from .oscillation import Region, osc, rowwise_lower_median


def rational_ball_family(depth: int, dim: int = 2) -> list[tuple[str, Ball]]:
    """Dyadic-rational balls strictly inside the unit ball.

    Centers run over the lattice 2^-depth * Z^dim, radii over {2^-1 ...
    2^-depth}, keeping |center| + radius < 1.  Enumeration order is
    deterministic: radius descending, then lexicographic center.  Deeper
    families contain shallower ones.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    out: list[tuple[str, Ball]] = []
    n_lat = 1 << depth
    coords = np.arange(-n_lat, n_lat + 1)
    for j in range(1, depth + 1):
        q = 0.5**j
        for ijk in itertools.product(coords, repeat=dim):
            c = np.array(ijk, dtype=float) / n_lat
            if np.linalg.norm(c) + q < 1.0:
                cid = "q%d_c%s" % (j, "_".join(str(int(v)) for v in ijk))
                out.append((cid, Ball(center=c, radius=q)))
    return out


@dataclass
class ESetParams:
    """Membership thresholds and the radius sample for one decomposition set."""

    delta: float
    tau: float
    ball: Ball
    r0: float
    radii: np.ndarray
    ball_id: str = ""

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidSpec("delta must be positive")
        if not 0.0 < self.tau < 1.0:
            raise InvalidSpec("tau must be in (0, 1)")
        if np.linalg.norm(self.ball.center) + self.ball.radius >= 1.0:
            raise InvalidSpec("ball must lie strictly inside the unit ball")
        radii = np.asarray(self.radii, dtype=float)
        if radii.size == 0:
            raise InvalidSpec("radius sample must be nonempty")
        radii = np.sort(radii)[::-1]
        if radii[0] > self.r0 * (1 + 1e-12) or radii[-1] <= 0:
            raise InvalidSpec("radius samples must lie in (0, r0]")
        self.radii = radii

    def to_json_dict(self) -> dict:
        return {
            "delta": self.delta,
            "tau": self.tau,
            "ball": {
                "center": [float(v) for v in self.ball.center],
                "radius": self.ball.radius,
            },
            "ball_id": self.ball_id,
            "r0": self.r0,
            "radii": [float(r) for r in self.radii],
        }


# Membership compares oscillations against absolute delta thresholds; at two
# cells the interpolation ramp fills half the window and deflates osc(B1) by
# up to ~30%, so membership sampling stops one dyadic level higher.
ESET_R_MIN_CELLS = 4.0


def eset_params(
    u: GridFunction,
    delta: float,
    tau: float,
    ball: Ball,
    r0: float,
    cfg: ClassifyConfig | None = None,
    ball_id: str = "",
    r_min_cells: float = ESET_R_MIN_CELLS,
) -> ESetParams:
    """Params with the radius sample drawn from the geometric schedule."""
    cfg = cfg or ClassifyConfig()
    r_min = r_min_cells * u.spacing
    radii = []
    r = r0
    while r >= r_min * (1.0 - 1e-12):
        radii.append(r)
        r *= cfg.sigma
    if not radii:
        raise InvalidSpec(f"r0 = {r0:g} leaves no radii above the {r_min:g} guard")
    return ESetParams(
        delta=delta, tau=tau, ball=ball, r0=r0, radii=np.array(radii), ball_id=ball_id
    )


def e_set_membership(
    u: GridFunction,
    x: np.ndarray,
    params: ESetParams,
    lattice: UnitBallLattice | None = None,
) -> bool:
    """True iff at every sampled radius the rescaled function oscillates at
    least delta on the unit ball and at most tau*delta on the sub-ball.

    Raises InsufficientRadii when some sampled radius is invalid at x, so the
    caller can exclude (not fail) the point.
    """
    if lattice is None:
        lattice = default_lattice(u.dim)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if u.boundary_distance(x) < params.radii[0]:
        raise InsufficientRadii(f"radius {params.radii[0]:g} invalid at {x}")
    full = Region.full_lattice(lattice)
    ball_region = Region.ball_on_lattice(lattice, params.ball)
    # smallest radius first: it is the most selective on real data
    for r in params.radii[::-1]:
        sample = blowup_sample(u, x, float(r), lattice)
        if osc(sample, full) < params.delta:
            return False
        if osc(sample, ball_region) > params.tau * params.delta:
            return False
    return True


@dataclass(eq=False)
class ESet:
    """Extracted decomposition set: params plus the passing grid points."""

    params: ESetParams
    points: np.ndarray
    point_indices: np.ndarray
    insufficient_count: int

    @property
    def size(self) -> int:
        return self.point_indices.size

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "points": [[float(v) for v in p] for p in np.atleast_2d(self.points)]
            if self.size
            else [],
            "point_indices": [int(i) for i in self.point_indices],
            "insufficient_count": self.insufficient_count,
        }


class ESetScanner:
    """Shared-work extractor for sweeps over (delta, ball, r0) on one grid.

    Oscillations of the rescaled samples depend only on (point, radius) and
    (point, radius, ball), so they are computed once: a vectorized pass over
    the whole grid for the unit-ball column, then per-ball columns on the
    surviving candidates only.
    """

    def __init__(
        self,
        u: GridFunction,
        lattice: UnitBallLattice | None = None,
        cfg: ClassifyConfig | None = None,
    ):
        self.u = u
        self.cfg = cfg or ClassifyConfig()
        self.lattice = lattice or default_lattice(u.dim, self.cfg.lattice_resolution)
        if np.isnan(u.values).any() or np.isinf(u.values).any():
            raise InvalidSpec(
                "E-set scans need finite grids; transform extended values first"
            )
        self._b1_osc: dict[float, np.ndarray] = {}
        self._ball_osc: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._samples_cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        centers = u.cell_centers()
        self._centers = centers
        self._dists = np.minimum(
            (centers - u.box_lo).min(axis=1), (u.box_hi - centers).min(axis=1)
        )

    @staticmethod
    def _ball_key(ball: Ball, r: float) -> tuple:
        return (tuple(float(v) for v in ball.center), float(ball.radius), float(r))

    def _b1_column(self, r: float) -> np.ndarray:
        """osc(u^{x,r}, B1) for every grid point (NaN where invalid)."""
        key = float(r)
        if key not in self._b1_osc:
            u, lat = self.u, self.lattice
            n_pts = u.values.size
            out = np.full(n_pts, np.nan)
            ok = np.nonzero(self._dists > r + 0.55 * u.spacing)[0]
            chunk = max(1, 120_000_000 // (lat.n_nodes * 8))
            for s in range(0, ok.size, chunk):
                sub = ok[s : s + chunk]
                vals = aligned_blowup_batch(u, sub, np.array([r]), lat)[:, 0, :]
                c = rowwise_lower_median(vals)
                out[sub] = np.mean(np.abs(vals - c[:, None]), axis=1)
            # margin cells: pointwise with clamped interpolation
            edge = np.nonzero(
                (self._dists >= r * (1.0 - 1e-12))
                & ~(self._dists > r + 0.55 * u.spacing)
            )[0]
            full = Region.full_lattice(lat)
            for i in edge:
                sample = blowup_sample(u, self._centers[i], key, lat)
                out[i] = osc(sample, full)
            self._b1_osc[key] = out
        return self._b1_osc[key]

    def _candidate_samples(self, idx: np.ndarray, r: float) -> np.ndarray:
        """Blowup values at one radius for candidate points (one slot per radius)."""
        key = float(r)
        cached = self._samples_cache.get(key)
        if cached is not None and np.array_equal(cached[0], idx):
            return cached[1]
        u, lat = self.u, self.lattice
        vals = np.empty((idx.size, lat.n_nodes))
        fast = self._dists[idx] > r + 0.55 * u.spacing
        if fast.any():
            vals[fast] = aligned_blowup_batch(u, idx[fast], np.array([r]), lat)[:, 0, :]
        for k in np.nonzero(~fast)[0]:
            vals[k] = blowup_sample(u, self._centers[idx[k]], key, lat).values
        self._samples_cache[key] = (idx.copy(), vals)
        return vals

    def extract(self, params: ESetParams) -> ESet:
        u, lat = self.u, self.lattice
        valid = self._dists >= params.radii[0] * (1.0 - 1e-12)
        insufficient = int((~valid).sum())

        member = valid.copy()
        for r in params.radii[::-1]:
            col = self._b1_column(float(r))
            with np.errstate(invalid="ignore"):
                member &= col >= params.delta
            if not member.any():
                break

        cand = np.nonzero(member)[0]
        if cand.size:
            try:
                region = Region.ball_on_lattice(lat, params.ball)
            except EmptyRegion:
                raise InvalidSpec(
                    f"ball {params.ball_id or params.ball.radius} captures too few "
                    "lattice nodes for membership testing"
                )
            keep = np.ones(cand.size, dtype=bool)
            for r in params.radii[::-1]:
                ball_osc = self._ball_column(cand, float(r), params.ball, region)
                keep &= ball_osc <= params.tau * params.delta
            cand = cand[keep]

        return ESet(
            params=params,
            points=self._centers[cand],
            point_indices=cand,
            insufficient_count=insufficient,
        )

    def _ball_column(
        self, idx: np.ndarray, r: float, ball: Ball, region: Region
    ) -> np.ndarray:
        """osc(u^{x,r}, ball) for the given points, memoized per (ball, r).

        Sweeps that query loosest thresholds first get subset hits for free;
        other orders stay correct and just recompute.
        """
        key = self._ball_key(ball, r)
        entry = self._ball_osc.get(key)
        if entry is not None:
            stored_idx, stored_vals = entry
            pos = np.searchsorted(stored_idx, idx)
            inside = pos < stored_idx.size
            if inside.all() and np.array_equal(stored_idx[pos], idx):
                return stored_vals[pos]
        vals = self._candidate_samples(idx, r)[:, region.indices]
        c = rowwise_lower_median(vals)
        oscs = np.mean(np.abs(vals - c[:, None]), axis=1)
        self._ball_osc[key] = (idx.copy(), oscs)
        return oscs


def extract_e_set(
    u: GridFunction,
    params: ESetParams,
    lattice: UnitBallLattice | None = None,
) -> ESet:
    """All grid points passing membership; invalid points excluded and counted."""
    return ESetScanner(u, lattice).extract(params)


# ---------------------------------------------------------------------------
# Exclusion cones
# ---------------------------------------------------------------------------


@dataclass
class ConeSpec:
    """Truncated exclusion cone derived from a sub-ball B_rho(z0).

    The cone is the union of segments {r*z : z in B_eps(z0), 0 < r <= range},
    with rho' = tau^(1/n)*rho/2 and eps = rho - rho'.  Its half-aperture theta
    satisfies sin(theta) = eps/|z0|; excluding the symmetrized cone from a set
    forces the set onto graphs of slope L = cot(theta) over the hyperplane
    normal to the axis.
    """

    axis: np.ndarray
    z0_norm: float
    rho: float
    rho_prime: float
    eps: float
    sin_half_aperture: float
    lipschitz: float
    range_r0: float

    def __post_init__(self):
        axis = np.atleast_1d(np.asarray(self.axis, dtype=float))
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError("cone axis must be a unit vector")
        self.axis = axis

    @property
    def dim(self) -> int:
        return self.axis.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "axis": [float(v) for v in self.axis],
            "z0_norm": self.z0_norm,
            "rho": self.rho,
            "rho_prime": self.rho_prime,
            "eps": self.eps,
            "sin_half_aperture": self.sin_half_aperture,
            "lipschitz": self.lipschitz,
            "range_r0": self.range_r0,
        }


def cone_from_params(ball: Ball, tau: float, r0: float, dim: int) -> ConeSpec:
    """Exclusion cone for the sub-ball B = B_rho(z0) at thresholds tau, r0."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    if np.linalg.norm(ball.center) + ball.radius >= 1.0:
        raise ValueError("ball must lie strictly inside the unit ball")
    z0 = np.asarray(ball.center, dtype=float)
    z0_norm = float(np.linalg.norm(z0))
    if z0_norm == 0.0:
        raise DegenerateCone("sub-ball centered at the origin has no cone axis")
    rho = float(ball.radius)
    rho_prime = 0.5 * tau ** (1.0 / dim) * rho
    eps = rho - rho_prime
    if eps >= z0_norm:
        raise DegenerateCone(
            f"eps = {eps:g} >= |z0| = {z0_norm:g}: ball too large or too close "
            "to the origin for a proper cone"
        )
    sin_theta = eps / z0_norm
    lipschitz = math.sqrt(z0_norm * z0_norm - eps * eps) / eps
    return ConeSpec(
        axis=z0 / z0_norm,
        z0_norm=z0_norm,
        rho=rho,
        rho_prime=rho_prime,
        eps=eps,
        sin_half_aperture=sin_theta,
        lipschitz=lipschitz,
        range_r0=float(r0),
    )


def in_cone(delta: np.ndarray, cone: ConeSpec) -> tuple[bool, float | None]:
    """Whether delta = r*z for some z in B_eps(z0) and r in (0, range].

    Solves |delta - r*z0|^2 <= (r*eps)^2 for r in closed form.  Returns the
    verdict and a witness radius (the smaller quadratic root) when inside.
    The apex is excluded: delta = 0 is never in the cone.
    """
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    z0 = cone.axis * cone.z0_norm
    a = cone.z0_norm**2 - cone.eps**2
    b = float(d @ z0)
    c = float(d @ d)
    if c == 0.0 or b <= 0.0:
        return False, None
    disc = b * b - a * c
    if disc < 0.0:
        return False, None
    r_lo = (b - math.sqrt(disc)) / a
    if r_lo > cone.range_r0 * (1.0 + 1e-12):
        return False, None
    return True, r_lo


def _in_cone_batch(deltas: np.ndarray, cone: ConeSpec) -> np.ndarray:
    z0 = cone.axis * cone.z0_norm
    a = cone.z0_norm**2 - cone.eps**2
    b = deltas @ z0
    c = np.einsum("ij,ij->i", deltas, deltas)
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        r_lo = (b - np.sqrt(np.maximum(disc, 0.0))) / a
    return (c > 0) & (b > 0) & (disc >= 0) & (r_lo <= cone.range_r0 * (1.0 + 1e-12))


def verify_cone_property(
    points: np.ndarray, cone: ConeSpec, guard: float
) -> list[tuple[int, int]]:
    """All unordered pairs farther apart than the guard that see each other
    inside the symmetrized truncated cone.  Empty list = property verified.

    Brute-force O(N^2) scan; the independence from any spatial index is the
    point, this is the checking oracle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    violations: list[tuple[int, int]] = []
    for i in range(n - 1):
        deltas = pts[i + 1 :] - pts[i]
        dist = np.linalg.norm(deltas, axis=1)
        hit = _in_cone_batch(deltas, cone) | _in_cone_batch(-deltas, cone)
        hit &= dist > guard
        for j in np.nonzero(hit)[0]:
            violations.append((i, i + 1 + int(j)))
    return violations


@dataclass(eq=False)
class CoverCell:
    cell: tuple[int, ...]
    member_indices: np.ndarray
    passes: bool
    worst_slope: float
    worst_pair: tuple[int, int] | None
    subguard_pairs: int = 0


@dataclass(eq=False)
class CoverReport:
    """Cell partition of a point set with per-cell Lipschitz-graph checks."""

    cone: ConeSpec
    cell_side: float
    cells: list[CoverCell]

    @property
    def all_pass(self) -> bool:
        return all(c.passes for c in self.cells)

    @property
    def worst_slope(self) -> float:
        worst = 0.0
        for c in self.cells:
            if math.isinf(c.worst_slope):
                return math.inf
            worst = max(worst, c.worst_slope)
        return worst

    def to_json_dict(self) -> dict:
        return {
            "cone": self.cone.to_json_dict(),
            "cell_side": self.cell_side,
            "all_pass": self.all_pass,
            "worst_slope": None if math.isinf(self.worst_slope) else self.worst_slope,
            "cells": [
                {
                    "cell": [int(v) for v in c.cell],
                    "members": [int(i) for i in c.member_indices],
                    "pass": c.passes,
                    "worst_slope": None if math.isinf(c.worst_slope) else c.worst_slope,
                    "worst_pair": None
                    if c.worst_pair is None
                    else [int(c.worst_pair[0]), int(c.worst_pair[1])],
                    "subguard_pairs": c.subguard_pairs,
                }
                for c in self.cells
            ],
        }


def cover_with_graphs(
    points: np.ndarray, cone: ConeSpec, guard: float = 0.0
) -> CoverReport:
    """Partition points into cubes sized to the cone range and check that
    every in-cell pair satisfies the slope bound |<d,e>| <= L * |d_perp|.

    The cube side r0*(|z0|-eps)/sqrt(n) keeps in-cell displacements within the
    truncated cone's reach, so pairs violating the slope bound would also
    violate the cone property.  Pairs not farther apart than ``guard`` are
    below sampling resolution, exactly as in the cone check: they are counted
    per cell but do not fail it.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dim = pts.shape[1] if pts.size else cone.dim
    side = cone.range_r0 * (cone.z0_norm - cone.eps) / math.sqrt(dim)
    cells: dict[tuple[int, ...], list[int]] = {}
    if pts.size:
        lo = pts.min(axis=0)
        keys = np.floor((pts - lo) / side).astype(np.int64)
        for i, key in enumerate(keys):
            cells.setdefault(tuple(int(v) for v in key), []).append(i)

    e = cone.axis
    L = cone.lipschitz
    report_cells: list[CoverCell] = []
    for key in sorted(cells):
        members = np.array(cells[key], dtype=np.int64)
        worst, worst_pair = 0.0, None
        subguard = 0
        p = pts[members]
        for i in range(len(members) - 1):
            d = p[i + 1 :] - p[i]
            dist = np.linalg.norm(d, axis=1)
            axial = d @ e
            perp = np.linalg.norm(d - axial[:, None] * e[None, :], axis=1)
            with np.errstate(divide="ignore"):
                slopes = np.where(
                    perp > 0, np.abs(axial) / np.where(perp > 0, perp, 1.0), np.inf
                )
            guarded = dist <= guard
            subguard += int(guarded.sum())
            slopes = np.where(guarded, -np.inf, slopes)
            j = int(np.argmax(slopes)) if slopes.size else -1
            if j >= 0 and slopes[j] > worst:
                worst = float(slopes[j])
                worst_pair = (int(members[i]), int(members[i + 1 + j]))
        report_cells.append(
            CoverCell(
                cell=key,
                member_indices=members,
                passes=not worst > L * (1.0 + 1e-12),
                worst_slope=worst,
                worst_pair=worst_pair,
                subguard_pairs=subguard,
            )
        )
    return CoverReport(cone=cone, cell_side=side, cells=report_cells)