"""Blowup convergence, constant/jump model fitting, and per-point classification.

A point is probed on a geometric radius schedule.  The sequence of rescaled
samples is judged Cauchy from its tail gaps; the limit is the sample at the
smallest radius.  Constant limits are approximately continuous points; limits
that fit a two-valued half-space model are jump points; the rest are singular
non-jump.  Model parameters (a, b, nu) are estimated a few dyadic levels above
the resolution floor, where interpolation smear no longer corrupts the half
space medians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InsufficientRadii, DegenerateHalf, NoQuietBall, NonFiniteValues
from .grid import (
    Ball,
    BlowupSample,
    GridFunction,
    UnitBallLattice,
    aligned_blowup_batch,
    blowup_sample,
    default_lattice,
    interpolate,
    l1_distance,
)
from .oscillation import (
    EmptyRegion,
    Region,
    lower_median,
    osc,
    rowwise_lower_median,
)


@dataclass
class ClassifyConfig:
    """Tolerances (relative to the function's value range) and schedule knobs.

    The radius schedule at x runs geometrically from
    ``min(r0_dist_factor * dist(x, boundary), r0_cap_cells * h)`` down to
    ``r_min_cells * h``.  Convergence requires the smallest of the last
    ``k_conv`` tail gaps to sit below ``tol_cauchy`` and the largest below
    ``cauchy_cap``: the first attests the sequence stopped moving within the
    resolved scales, the second rejects sequences still swinging.
    """

    tol_cauchy: float = 0.10
    cauchy_cap: float = 0.30
    tol_const: float = 0.05
    tol_jump: float = 0.15
    sep_min: float = 0.10
    sigma: float = 0.5
    r0_cap_cells: float = 32.0
    r0_dist_factor: float = 1.0
    r_min_cells: float = 2.0
    k_min: int = 4
    k_conv: int = 3
    lattice_resolution: int = 33
    n_dirs_2d: int = 360
    n_dirs_3d: int = 500
    refine_deg: float = 0.1
    min_half_nodes: int = 8
    workers: int = 1

    def __post_init__(self):
        for name in ("tol_cauchy", "cauchy_cap", "tol_const", "tol_jump", "sep_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must be in (0, 1)")
        if self.k_min < self.k_conv + 1:
            raise ValueError("k_min must exceed k_conv")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


class ClassKind(Enum):
    APPROX_CONTINUOUS = "approx_continuous"
    JUMP = "jump"
    SINGULAR_NON_JUMP = "singular_non_jump"
    NON_CONVERGENT = "non_convergent"
    INSUFFICIENT = "insufficient"

    @property
    def code(self) -> int:
        return _CLASS_CODES[self]


_CLASS_CODES = {
    ClassKind.APPROX_CONTINUOUS: 0,
    ClassKind.JUMP: 64,
    ClassKind.SINGULAR_NON_JUMP: 128,
    ClassKind.NON_CONVERGENT: 192,
    ClassKind.INSUFFICIENT: 255,
}


@dataclass
class JumpFit:
    """Two-valued half-space model: value a where nu.y > 0, b where nu.y <= 0."""

    a: float
    b: float
    nu: np.ndarray
    residual: float

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
            raise ValueError("nu must be a unit vector")
        if self.residual < 0:
            raise ValueError("residual must be nonnegative")
        self.nu = nu

    @property
    def separation(self) -> float:
        return abs(self.a - self.b)


@dataclass(eq=False)
class BlowupSequence:
    """Rescaled samples of u at x on a decreasing radius schedule, with gaps."""

    x: np.ndarray
    radii: np.ndarray
    samples: list[BlowupSample]
    gaps: np.ndarray

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        if radii.size > 1 and not (np.diff(radii) < 0).all():
            raise ValueError("radii must be strictly decreasing")
        gaps = np.asarray(self.gaps, dtype=float)
        if gaps.size != radii.size - 1:
            raise ValueError("gaps length must be len(radii) - 1")
        self.radii = radii
        self.gaps = gaps

    @property
    def limit_candidate(self) -> BlowupSample:
        return self.samples[-1]


@dataclass
class PointClass:
    """Classification verdict for one point."""

    kind: ClassKind
    c: float | None = None
    fit: JumpFit | None = None
    osc_limit: float | None = None
    gaps: np.ndarray | None = None
    radii: np.ndarray | None = None

    def to_json_dict(self) -> dict:
        d: dict = {"class": self.kind.value}
        if self.c is not None:
            d["c"] = float(self.c)
        if self.fit is not None:
            d.update(
                a=float(self.fit.a),
                b=float(self.fit.b),
                nu=[float(v) for v in self.fit.nu],
                residual=float(self.fit.residual),
            )
        if self.osc_limit is not None:
            d["osc_limit"] = float(self.osc_limit)
        if self.gaps is not None:
            d["gaps"] = [float(g) for g in self.gaps]
        if self.radii is not None:
            d["radii"] = [float(r) for r in self.radii]
        return d


def value_range(u: GridFunction) -> float:
    """Spread of the finite values; 1.0 for constant grids so relative
    tolerances stay meaningful."""
    finite = u.values[np.isfinite(u.values)]
    if np.isinf(u.values).any():
        raise NonFiniteValues(
            "grid carries infinite values; transform them first (extended mode)"
        )
    if finite.size == 0:
        raise NonFiniteValues("grid has no finite values")
    spread = float(finite.max() - finite.min())
    return spread if spread > 0 else 1.0


def _schedule_depth(avail: np.ndarray, cfg: ClassifyConfig, h: float) -> np.ndarray:
    """Number of schedule radii per available headroom (vectorized)."""
    r_min = cfg.r_min_cells * h
    counts = np.zeros(np.shape(avail), dtype=int)
    ok = avail >= r_min * (1.0 - 1e-12)
    counts[ok] = (
        np.floor(
            np.log(avail[ok] / r_min) / math.log(1.0 / cfg.sigma) + 1e-9
        ).astype(int)
        + 1
    )
    return counts


def radius_schedule(u: GridFunction, x: np.ndarray, cfg: ClassifyConfig) -> np.ndarray:
    """Geometric radii, largest first; empty if the point is too boxed in.

    The top radius snaps down onto the geometric grid anchored at r_min, so
    every point's schedule is a suffix of one shared ladder; with sigma = 1/2
    all radii are whole dyadic multiples of the cell size.
    """
    h = u.spacing
    dist = u.boundary_distance(np.asarray(x, dtype=float))
    avail = min(cfg.r0_dist_factor * dist, cfg.r0_cap_cells * h)
    count = int(_schedule_depth(np.array([avail]), cfg, h)[0])
    if count == 0:
        return np.empty(0)
    r_min = cfg.r_min_cells * h
    growth = 1.0 / cfg.sigma
    return r_min * growth ** np.arange(count - 1, -1, -1)


def _tail_verdict(gaps: np.ndarray, scale: float, cfg: ClassifyConfig) -> bool:
    tail = gaps[-cfg.k_conv:]
    return bool(
        tail.size >= cfg.k_conv
        and np.isfinite(tail).all()
        and tail.min() <= cfg.tol_cauchy * scale
        and tail.max() <= cfg.cauchy_cap * scale
    )


def blowup_converge(
    u: GridFunction,
    x: np.ndarray,
    cfg: ClassifyConfig | None = None,
    lattice: UnitBallLattice | None = None,
    scale: float | None = None,
) -> tuple[BlowupSequence, bool]:
    """Sample the blowup sequence at x and judge Cauchy convergence.

    Returns the full sequence (for diagnostics) and the verdict.  Raises
    InsufficientRadii when fewer than ``k_min`` radii fit inside the domain.
    """
    cfg = cfg or ClassifyConfig()
    if lattice is None:
        lattice = default_lattice(u.dim, cfg.lattice_resolution)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    radii = radius_schedule(u, x, cfg)
    if radii.size < cfg.k_min:
        raise InsufficientRadii(
            f"only {radii.size} valid radii at {x} (need {cfg.k_min})"
        )
    samples = [blowup_sample(u, x, float(r), lattice, cfg.r_min_cells) for r in radii]
    gaps = np.array(
        [l1_distance(samples[i], samples[i + 1]) for i in range(len(samples) - 1)]
    )
    seq = BlowupSequence(x=x, radii=radii, samples=samples, gaps=gaps)
    if scale is None:
        scale = value_range(u)
    return seq, _tail_verdict(gaps, scale, cfg)


def fit_constant(v: BlowupSample) -> tuple[float, float]:
    """Best constant (weighted median) and its mean absolute residual on B1."""
    region = Region.full_lattice(v.lattice)
    residual = osc(v, region)
    vals = v.values[~np.isnan(v.values)]
    return lower_median(vals), residual


# ---------------------------------------------------------------------------
# Jump fitting
# ---------------------------------------------------------------------------


def _circle_dirs(n: int) -> np.ndarray:
    th = 2.0 * math.pi * np.arange(n) / n
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


def _coarse_dirs(dim: int, cfg: ClassifyConfig) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        return _circle_dirs(cfg.n_dirs_2d)
    return _fibonacci_sphere(cfg.n_dirs_3d)


def _half_medians_resid(vals: np.ndarray, dots: np.ndarray) -> tuple[float, float, float]:
    """(a, b, residual) for one direction; inf residual when a half is empty."""
    pos = dots > 0
    neg = dots < 0
    if not pos.any() or not neg.any():
        return math.nan, math.nan, math.inf
    a = lower_median(vals[pos])
    b = lower_median(vals[neg])
    resid = float(np.mean(np.abs(vals - np.where(pos, a, b))))
    return a, b, resid


def _gradient_direction(vals: np.ndarray, lattice: UnitBallLattice) -> np.ndarray | None:
    """Mean finite-difference direction of the sample (None if flat).

    For a two-valued sample split by a plane, every difference across the
    plane points along its normal, so the summed moment recovers the normal
    even when the plane misses the origin.
    """
    g = np.zeros(lattice.dim)
    for axis in range(lattice.dim):
        lo, hi = lattice.neighbor_pairs(axis)
        g[axis] = float(np.sum(vals[hi] - vals[lo]))
    norm = np.linalg.norm(g)
    return g / norm if norm > 0 else None


def _finalize_fit(
    vals: np.ndarray, lattice: UnitBallLattice, nu_sharp: np.ndarray
) -> JumpFit:
    """Resolve the direction within the flat-residual plateau.

    When the dividing plane misses the origin the residual is flat over a
    cone of directions and the grid argmin lands anywhere inside it.  The
    finite-difference moment is offset-blind; if its residual is within a
    few node flips of the minimum, it is the better-conditioned normal.
    """
    nodes = lattice.nodes
    a, b, resid = _half_medians_resid(vals, nodes @ nu_sharp)
    # only meaningful when the residual floor is well above node-flip noise;
    # near-exact fits keep the sharp search result
    noise_floor = 8.0 * abs(a - b) / lattice.n_nodes
    g = _gradient_direction(vals, lattice)
    if g is not None and math.isfinite(resid) and resid > noise_floor:
        ag, bg, rg = _half_medians_resid(vals, nodes @ g)
        if rg <= resid * 1.05:
            return JumpFit(a=ag, b=bg, nu=g, residual=rg)
    return JumpFit(a=a, b=b, nu=nu_sharp, residual=resid)


def _refine_direction_2d(vals, nodes, theta, width, target) -> float:
    while width > target:
        cands = theta + width * np.array([-0.5, -0.25, 0.0, 0.25, 0.5])
        best, best_r = theta, math.inf
        for t in cands:
            nu = np.array([math.cos(t), math.sin(t)])
            _, _, r = _half_medians_resid(vals, nodes @ nu)
            if r < best_r:
                best, best_r = t, r
        theta = best
        width *= 0.5
    # the residual is a staircase in the angle; a dense sweep at the target
    # resolution keeps the pattern search from stalling one step short
    best, best_r = theta, math.inf
    for t in theta + target * np.arange(-3.0, 3.01, 0.2):
        nu = np.array([math.cos(t), math.sin(t)])
        _, _, r = _half_medians_resid(vals, nodes @ nu)
        if r < best_r:
            best, best_r = t, r
    return best


def _refine_direction_3d(vals, nodes, nu, width, target) -> np.ndarray:
    # local tangent-frame grid search, shrinking the aperture each level
    while width > target:
        ref = np.array([0.0, 0.0, 1.0]) if abs(nu[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t1 = np.cross(nu, ref)
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(nu, t1)
        best, best_r = nu, math.inf
        for s in (-1.0, -0.5, 0.0, 0.5, 1.0):
            for t in (-1.0, -0.5, 0.0, 0.5, 1.0):
                cand = nu + width * (s * t1 + t * t2)
                cand /= np.linalg.norm(cand)
                _, _, r = _half_medians_resid(vals, nodes @ cand)
                if r < best_r:
                    best, best_r = cand, r
        nu = best
        width *= 0.5
    return nu


def fit_jump(v: BlowupSample, cfg: ClassifyConfig | None = None) -> JumpFit:
    """Best two-valued half-space fit over a coarse-to-fine direction search.

    For each direction the half-space medians are the L1-optimal plateau
    values; the winning direction minimizes the mean absolute residual and is
    refined to ``refine_deg`` angular resolution.  The search is grid-based
    because the residual has kinks wherever a lattice node crosses the
    dividing plane.
    """
    cfg = cfg or ClassifyConfig()
    vals = v.values
    if np.isnan(vals).any() or np.isinf(vals).any():
        raise NonFiniteValues("jump fit requires finite samples on the lattice")
    nodes = v.lattice.nodes
    dim = v.lattice.dim

    dirs = _coarse_dirs(dim, cfg)
    best_j, best_r = 0, math.inf
    for j in range(dirs.shape[0]):
        _, _, r = _half_medians_resid(vals, nodes @ dirs[j])
        if r < best_r:
            best_j, best_r = j, r

    target = math.radians(cfg.refine_deg)
    if dim == 1:
        nu = dirs[best_j]
    elif dim == 2:
        theta0 = math.atan2(dirs[best_j, 1], dirs[best_j, 0])
        width = 2.0 * math.pi / cfg.n_dirs_2d
        theta = _refine_direction_2d(vals, nodes, theta0, width, target)
        nu = np.array([math.cos(theta), math.sin(theta)])
    else:
        width = math.sqrt(4.0 * math.pi / cfg.n_dirs_3d)
        nu = _refine_direction_3d(vals, nodes, dirs[best_j].copy(), width, target)

    fit = _finalize_fit(vals, v.lattice, nu)
    dots = nodes @ fit.nu
    n_pos, n_neg = int((dots > 0).sum()), int((dots < 0).sum())
    if min(n_pos, n_neg) < cfg.min_half_nodes:
        raise DegenerateHalf(
            f"winning direction leaves a half-ball with "
            f"{min(n_pos, n_neg)} nodes (< {cfg.min_half_nodes})"
        )
    return fit


def _fit_jump_batch(
    values: np.ndarray, lattice: UnitBallLattice, cfg: ClassifyConfig
) -> list[JumpFit]:
    """Jump fits for many samples on one lattice: coarse stage vectorized
    across samples, refinement per sample."""
    nodes = lattice.nodes
    dim = lattice.dim
    dirs = _coarse_dirs(dim, cfg)
    n_s = values.shape[0]
    best_r = np.full(n_s, np.inf)
    best_j = np.zeros(n_s, dtype=int)
    for j in range(dirs.shape[0]):
        dots = nodes @ dirs[j]
        pos, neg = dots > 0, dots < 0
        if not pos.any() or not neg.any():
            continue
        a = rowwise_lower_median(values[:, pos])
        b = rowwise_lower_median(values[:, neg])
        model = np.where(pos, a[:, None], b[:, None])
        resid = np.mean(np.abs(values - model), axis=1)
        better = resid < best_r
        best_r[better] = resid[better]
        best_j[better] = j

    target = math.radians(cfg.refine_deg)
    fits = []
    for i in range(n_s):
        vals = values[i]
        if dim == 1:
            nu = dirs[best_j[i]]
        elif dim == 2:
            theta0 = math.atan2(dirs[best_j[i], 1], dirs[best_j[i], 0])
            width = 2.0 * math.pi / cfg.n_dirs_2d
            theta = _refine_direction_2d(vals, nodes, theta0, width, target)
            nu = np.array([math.cos(theta), math.sin(theta)])
        else:
            width = math.sqrt(4.0 * math.pi / cfg.n_dirs_3d)
            nu = _refine_direction_3d(vals, nodes, dirs[best_j[i]].copy(), width, target)
        fits.append(_finalize_fit(vals, lattice, nu))
    return fits


def classify_point(
    u: GridFunction,
    x: np.ndarray,
    cfg: ClassifyConfig | None = None,
    lattice: UnitBallLattice | None = None,
    scale: float | None = None,
) -> PointClass:
    """Classify one point: continuous / jump / singular / non-convergent.

    All failure modes map to PointClass variants; nothing raises for valid
    finite grids.  Jump parameters are fitted on the sample ``k_conv`` dyadic
    levels above the smallest radius, where half-space medians are clean; the
    Jump verdict additionally requires the fitted model to hold at the next
    finer level (scale invariance of the two-valued model, made executable),
    which rejects interfaces that merely graze the neighborhood.
    """
    cfg = cfg or ClassifyConfig()
    if lattice is None:
        lattice = default_lattice(u.dim, cfg.lattice_resolution)
    if scale is None:
        scale = value_range(u)
    try:
        seq, converged = blowup_converge(u, x, cfg, lattice, scale)
    except InsufficientRadii:
        return PointClass(kind=ClassKind.INSUFFICIENT)
    if not converged:
        return PointClass(
            kind=ClassKind.NON_CONVERGENT, gaps=seq.gaps, radii=seq.radii
        )
    limit = seq.limit_candidate
    c, osc_limit = fit_constant(limit)
    if osc_limit < cfg.tol_const * scale:
        return PointClass(
            kind=ClassKind.APPROX_CONTINUOUS,
            c=c,
            osc_limit=osc_limit,
            gaps=seq.gaps,
            radii=seq.radii,
        )
    fit_idx = max(0, len(seq.samples) - cfg.k_conv)
    fit = fit_jump(seq.samples[fit_idx], cfg)
    next_resid = _half_medians_resid(
        seq.samples[fit_idx + 1].values, lattice.nodes @ fit.nu
    )[2]
    if (
        fit.residual < cfg.tol_jump * scale
        and next_resid < cfg.tol_jump * scale
        and fit.separation >= cfg.sep_min * scale
    ):
        return PointClass(
            kind=ClassKind.JUMP,
            fit=fit,
            osc_limit=osc_limit,
            gaps=seq.gaps,
            radii=seq.radii,
        )
    return PointClass(
        kind=ClassKind.SINGULAR_NON_JUMP,
        fit=fit,
        osc_limit=osc_limit,
        gaps=seq.gaps,
        radii=seq.radii,
    )


def find_quiet_ball(v: BlowupSample, delta: float, family: list[Ball]) -> Ball:
    """First family ball (enumeration order) where v oscillates below delta/2.

    Balls capturing fewer than the minimum node count are skipped.  For a true
    blowup limit such a ball exists by Lebesgue density once the family is
    fine enough; a finite family may miss it, which is reported, not guessed.
    """
    if not family:
        raise NoQuietBall("empty ball family")
    for ball in family:
        try:
            region = Region.ball_on_lattice(v.lattice, ball)
        except EmptyRegion:
            continue
        if osc(v, region) < 0.5 * delta:
            return ball
    raise NoQuietBall(
        f"no family ball has oscillation below {0.5 * delta:g} "
        f"at this enumeration depth"
    )


# ---------------------------------------------------------------------------
# Whole-grid classification
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ClassificationMap:
    """Per-cell class codes plus detailed records for non-continuous points."""

    grid_shape: tuple[int, ...]
    spacing: float
    origin: np.ndarray
    codes: np.ndarray
    records: dict[int, PointClass]
    scale: float
    cfg: ClassifyConfig

    def counts(self) -> dict[str, int]:
        return {
            kind.value: int((self.codes == kind.code).sum()) for kind in ClassKind
        }

    def indices_of(self, kind: ClassKind) -> np.ndarray:
        return np.nonzero(self.codes == kind.code)[0]

    def to_json_dict(self, config_extra: dict | None = None) -> dict:
        cfg_dict = self.cfg.to_json_dict()
        if config_extra:
            cfg_dict.update(config_extra)
        points = []
        for idx in sorted(self.records):
            rec = self.records[idx].to_json_dict()
            rec["index"] = int(idx)
            points.append(rec)
        return {
            "schema": 1,
            "kind": "classification",
            "config": cfg_dict,
            "grid": {
                "dim": len(self.grid_shape),
                "shape": list(self.grid_shape),
                "spacing": self.spacing,
                "origin": [float(v) for v in self.origin],
            },
            "value_range": self.scale,
            "counts": self.counts(),
            "points": points,
        }

    def to_pgm_bytes(self) -> bytes:
        """P5 raster of class codes (2-d grids only)."""
        if len(self.grid_shape) != 2:
            raise ValueError("PGM output requires a 2-d grid")
        rows, cols = self.grid_shape
        header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
        return header + self.codes.astype(np.uint8).tobytes()


def _classify_rows(
    u: GridFunction,
    lattice: UnitBallLattice,
    cfg: ClassifyConfig,
    scale: float,
    idx: np.ndarray,
) -> tuple[np.ndarray, dict[int, PointClass]]:
    """Vectorized classification of the given flat cell indices."""
    centers = u.cell_centers()[idx]
    n_pts = idx.size
    codes = np.full(n_pts, ClassKind.INSUFFICIENT.code, dtype=np.uint8)
    records: dict[int, PointClass] = {}

    h = u.spacing
    r_min = cfg.r_min_cells * h
    growth = 1.0 / cfg.sigma
    dists = np.minimum(
        (centers - u.box_lo).min(axis=1), (u.box_hi - centers).min(axis=1)
    )
    counts = _schedule_depth(
        np.minimum(cfg.r0_dist_factor * dists, cfg.r0_cap_cells * h), cfg, h
    )

    nodes = lattice.nodes
    n_nodes = lattice.n_nodes
    tol_cauchy = cfg.tol_cauchy * scale
    cap = cfg.cauchy_cap * scale
    tol_const = cfg.tol_const * scale
    finite_grid = bool(np.isfinite(u.values).all())

    def verdict_block(sub: np.ndarray, vals: np.ndarray, radii: np.ndarray) -> None:
        gaps = np.mean(np.abs(np.diff(vals, axis=1)), axis=2)
        tail = gaps[:, -cfg.k_conv :]
        conv = (tail.min(axis=1) <= tol_cauchy) & (tail.max(axis=1) <= cap)
        for pos in np.nonzero(~conv)[0]:
            row = sub[pos]
            codes[row] = ClassKind.NON_CONVERGENT.code
            records[int(idx[row])] = PointClass(
                kind=ClassKind.NON_CONVERGENT, gaps=gaps[pos], radii=radii
            )
        conv_pos = np.nonzero(conv)[0]
        if conv_pos.size == 0:
            return
        limit_vals = vals[conv_pos, -1, :]
        c_opt = rowwise_lower_median(limit_vals)
        osc_limit = np.mean(np.abs(limit_vals - c_opt[:, None]), axis=1)
        is_ac = osc_limit < tol_const
        codes[sub[conv_pos[is_ac]]] = ClassKind.APPROX_CONTINUOUS.code

        rest = conv_pos[~is_ac]
        if rest.size:
            fit_level = vals.shape[1] - cfg.k_conv
            fits = _fit_jump_batch(vals[rest, fit_level, :], lattice, cfg)
            for pos, fit, o in zip(rest, fits, osc_limit[~is_ac]):
                next_resid = _half_medians_resid(
                    vals[pos, fit_level + 1, :], lattice.nodes @ fit.nu
                )[2]
                if (
                    fit.residual < cfg.tol_jump * scale
                    and next_resid < cfg.tol_jump * scale
                    and fit.separation >= cfg.sep_min * scale
                ):
                    kind = ClassKind.JUMP
                else:
                    kind = ClassKind.SINGULAR_NON_JUMP
                row = sub[pos]
                codes[row] = kind.code
                records[int(idx[row])] = PointClass(
                    kind=kind, fit=fit, osc_limit=float(o), gaps=gaps[pos], radii=radii
                )

    for n_r in np.unique(counts):
        if n_r < cfg.k_min:
            continue
        rows = np.nonzero(counts == n_r)[0]
        radii = r_min * growth ** np.arange(int(n_r) - 1, -1, -1)
        # shared-pattern resampling needs every ball strictly inside the
        # clamp-free core; the few rows on the margin take the generic path
        fast_ok = finite_grid & (dists[rows] > radii[0] + 0.55 * h)
        max_rows = max(1, 120_000_000 // (int(n_r) * n_nodes * 8))
        for fast, rowset in ((True, rows[fast_ok]), (False, rows[~fast_ok])):
            for s in range(0, rowset.size, max_rows):
                sub = rowset[s : s + max_rows]
                if sub.size == 0:
                    continue
                if fast:
                    vals = aligned_blowup_batch(u, idx[sub], radii, lattice)
                else:
                    pts = (
                        centers[sub][:, None, None, :]
                        + radii[None, :, None, None] * nodes[None, None, :, :]
                    )
                    vals = interpolate(u, pts.reshape(-1, u.dim)).reshape(
                        sub.size, int(n_r), n_nodes
                    )
                verdict_block(sub, vals, radii)
    return codes, records


def classify_grid(
    u: GridFunction,
    cfg: ClassifyConfig | None = None,
    lattice: UnitBallLattice | None = None,
) -> ClassificationMap:
    """Classify every cell of the grid.

    Deterministic and independent of the worker count: the index space is
    chunked the same way regardless of scheduling, and results are merged by
    cell index.
    """
    cfg = cfg or ClassifyConfig()
    if lattice is None:
        lattice = default_lattice(u.dim, cfg.lattice_resolution)
    scale = value_range(u)
    all_idx = np.arange(u.values.size)

    if np.isnan(u.values).any():
        # undefined samples need the pairwise-exclusion distance; take the
        # scalar path so verdicts match classify_point exactly
        centers = u.cell_centers()
        codes = np.empty(u.values.size, dtype=np.uint8)
        records: dict[int, PointClass] = {}
        for i in all_idx:
            pc = classify_point(u, centers[i], cfg, lattice, scale)
            codes[i] = pc.kind.code
            if pc.kind not in (ClassKind.APPROX_CONTINUOUS, ClassKind.INSUFFICIENT):
                records[int(i)] = pc
        return ClassificationMap(
            grid_shape=u.shape,
            spacing=u.spacing,
            origin=u.origin,
            codes=codes,
            records=records,
            scale=scale,
            cfg=cfg,
        )

    if cfg.workers == 1:
        codes, records = _classify_rows(u, lattice, cfg, scale, all_idx)
    else:
        import multiprocessing as mp

        n_chunks = max(cfg.workers * 4, 8)
        chunks = np.array_split(all_idx, n_chunks)
        with mp.get_context("fork").Pool(cfg.workers) as pool:
            parts = pool.starmap(
                _classify_rows,
                [(u, lattice, cfg, scale, chunk) for chunk in chunks if chunk.size],
            )
        codes = np.concatenate([p[0] for p in parts])
        records = {}
        for p in parts:
            records.update(p[1])

    return ClassificationMap(
        grid_shape=u.shape,
        spacing=u.spacing,
        origin=u.origin,
        codes=codes,
        records=records,
        scale=scale,
        cfg=cfg,
    )
