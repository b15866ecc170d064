"""Sampled functions on uniform lattices, blowup resampling, and the GF1 on-disk format.

A :class:`GridFunction` stores one sample per cell center of a uniform
n-dimensional lattice (n = 1..3) and stands in for a locally integrable
function on the box domain covered by the cells.  Undefined samples are NaN;
``+/-inf`` values are allowed and flow through untouched.  The central
operation is :func:`blowup_sample`, which rescales the function around a base
point onto a fixed unit-ball lattice, the discrete analog of zooming into a
point at scale r.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    AllUndefined,
    DimensionUnsupported,
    FormatError,
    LatticeMismatch,
    OutOfDomain,
    RadiusTooSmall,
)

MAX_DIM = 3

# Below this many cells a blowup carries no information beyond interpolation
# artifacts, so it is refused.
DEFAULT_R_MIN_CELLS = 2.0

DEFAULT_LATTICE_RESOLUTION = 33


@dataclass(eq=False)
class Ball:
    """Closed ball with the given center and radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if center.ndim != 1:
            raise ValueError("ball center must be a 1-d point")
        if not np.isfinite(center).all():
            raise ValueError("ball center must be finite")
        radius = float(self.radius)
        if not radius > 0:
            raise ValueError("ball radius must be positive")
        self.center = center
        self.radius = radius

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the (closed) ball."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.norm(pts - self.center, axis=-1) <= self.radius


@dataclass(eq=False)
class GridFunction:
    """Real (or extended-real) samples on a uniform n-d cell-center lattice.

    ``values`` is flat, row-major, length ``prod(shape)``.  The domain box
    extends half a cell beyond the outermost centers:
    ``[origin - h/2, origin + h*(shape-1) + h/2]`` per axis.
    """

    shape: tuple[int, ...]
    spacing: float
    origin: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        if not 1 <= len(shape) <= MAX_DIM:
            raise DimensionUnsupported(f"dim {len(shape)} not in 1..{MAX_DIM}")
        if any(s < 2 for s in shape):
            raise ValueError("all extents must be >= 2")
        spacing = float(self.spacing)
        if not spacing > 0:
            raise ValueError("spacing must be positive")
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        if origin.shape != (len(shape),):
            raise ValueError("origin length must match dim")
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != int(np.prod(shape)):
            raise ValueError(
                f"values length {values.size} != prod(shape) {int(np.prod(shape))}"
            )
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        origin.setflags(write=False)
        self.shape = shape
        self.spacing = spacing
        self.origin = origin
        self.values = values

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def box_lo(self) -> np.ndarray:
        return self.origin - 0.5 * self.spacing

    @property
    def box_hi(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.shape) - 1) + 0.5 * self.spacing

    @property
    def ndarray(self) -> np.ndarray:
        """Values reshaped to ``shape`` (read-only view)."""
        return self.values.reshape(self.shape)

    def boundary_distance(self, x: np.ndarray) -> float:
        """Distance from x to the boundary of the domain box (negative outside)."""
        x = np.asarray(x, dtype=float)
        return float(min((x - self.box_lo).min(), (self.box_hi - x).min()))

    def cell_centers(self) -> np.ndarray:
        """All cell centers as an (n_cells, dim) array, row-major order."""
        axes = [self.origin[k] + self.spacing * np.arange(self.shape[k])
                for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)


@dataclass(eq=False)
class UnitBallLattice:
    """Uniform lattice on [-1,1]^n restricted to the closed unit ball.

    Node coordinates are built from integer offsets so the lattice is exactly
    symmetric under y -> -y.  Weights are uniform.
    """

    resolution: int
    dim: int
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        m = int(self.resolution)
        if m < 3:
            raise ValueError("lattice resolution must be >= 3")
        if not 1 <= self.dim <= MAX_DIM:
            raise DimensionUnsupported(f"dim {self.dim} not in 1..{MAX_DIM}")
        half = (m - 1) / 2.0
        axis = (np.arange(m) - half) / half
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        pts = np.stack([g.reshape(-1) for g in mesh], axis=-1)
        inside = np.einsum("ij,ij->i", pts, pts) <= 1.0
        nodes = np.ascontiguousarray(pts[inside])
        if nodes.shape[0] == 0:
            raise ValueError("lattice has no nodes inside the unit ball")
        nodes.setflags(write=False)
        self.resolution = m
        self.nodes = nodes
        self.weights = np.ones(nodes.shape[0])
        self.weights.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def same_as(self, other: "UnitBallLattice") -> bool:
        return (
            self is other
            or (self.resolution == other.resolution and self.dim == other.dim)
        )

    def neighbor_pairs(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices (lo, hi) of adjacent in-ball node pairs along one axis.

        Used for finite-difference moments over the sample; pairs where either
        endpoint leaves the ball are simply absent.
        """
        if not hasattr(self, "_pair_cache"):
            object.__setattr__(self, "_pair_cache", {})
        if axis not in self._pair_cache:
            half = (self.resolution - 1) / 2.0
            coords = np.rint(self.nodes * half + half).astype(np.int64)
            key = np.zeros(self.n_nodes, dtype=np.int64)
            for k in range(self.dim):
                key = key * self.resolution + coords[:, k]
            lookup = {int(v): i for i, v in enumerate(key)}
            step = self.resolution ** (self.dim - 1 - axis)
            lo, hi = [], []
            for i, v in enumerate(key):
                if coords[i, axis] >= self.resolution - 1:
                    continue
                j = lookup.get(int(v) + step)
                if j is not None:
                    lo.append(i)
                    hi.append(j)
            self._pair_cache[axis] = (
                np.array(lo, dtype=np.int64),
                np.array(hi, dtype=np.int64),
            )
        return self._pair_cache[axis]


@lru_cache(maxsize=8)
def default_lattice(dim: int, resolution: int = DEFAULT_LATTICE_RESOLUTION) -> UnitBallLattice:
    return UnitBallLattice(resolution, dim)


@dataclass(eq=False)
class BlowupSample:
    """Values of u(x + r*y) on a unit-ball lattice: one zoom level at x."""

    x: np.ndarray
    r: float
    lattice: UnitBallLattice
    values: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.r = float(self.r)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size != self.lattice.n_nodes:
            raise ValueError("values length must equal lattice node count")
        self.values = values


def interpolate(u: GridFunction, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of u at physical points (vectorized).

    Points in the half-cell boundary strip are clamped onto the edge cells.
    Wherever any surrounding corner is non-finite (NaN or +/-inf) the value of
    the nearest cell center is returned instead, so undefined markers and
    infinities pass through instead of poisoning the blend.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != u.dim:
        raise ValueError("point dimension does not match grid")
    n = u.dim
    flat = u.values

    # per-axis cell index and fractional offset, clamped onto the grid,
    # folded into one flat base index so corners are scalar offsets away
    base = None
    fracs = []
    for k in range(n):
        t = (pts[:, k] - u.origin[k]) / u.spacing
        lo = np.floor(t)
        np.clip(lo, 0, u.shape[k] - 2, out=lo)
        frac = t - lo
        np.clip(frac, 0.0, 1.0, out=frac)
        fracs.append(frac)
        ilo = lo.astype(np.int64)
        base = ilo if base is None else base * u.shape[k] + ilo

    with np.errstate(invalid="ignore"):
        if n == 1:
            f0, f1 = flat.take(base), flat.take(base + 1)
            fi = fracs[0]
            finite = np.isfinite(f0) & np.isfinite(f1)
            blended = f0 + fi * (f1 - f0)
            nearest = np.where(fi > 0.5, f1, f0)
        elif n == 2:
            s1 = u.shape[1]
            f00 = flat.take(base)
            f01 = flat.take(base + 1)
            f10 = flat.take(base + s1)
            f11 = flat.take(base + (s1 + 1))
            fi, fj = fracs
            finite = (
                np.isfinite(f00) & np.isfinite(f01)
                & np.isfinite(f10) & np.isfinite(f11)
            )
            top = f00 + fi * (f10 - f00)
            bot = f01 + fi * (f11 - f01)
            blended = top + fj * (bot - top)
            nearest = np.where(
                fi > 0.5,
                np.where(fj > 0.5, f11, f10),
                np.where(fj > 0.5, f01, f00),
            )
        else:
            s2 = u.shape[2]
            s12 = u.shape[1] * u.shape[2]
            corners = {}
            for oi, oj, ok in itertools.product((0, 1), repeat=3):
                corners[(oi, oj, ok)] = flat.take(base + (oi * s12 + oj * s2 + ok))
            fi, fj, fk = fracs
            finite = np.ones(pts.shape[0], dtype=bool)
            for c in corners.values():
                finite &= np.isfinite(c)
            blended = np.zeros(pts.shape[0])
            for offs, c in corners.items():
                w = (
                    (fi if offs[0] else 1.0 - fi)
                    * (fj if offs[1] else 1.0 - fj)
                    * (fk if offs[2] else 1.0 - fk)
                )
                blended += np.where(np.isfinite(c), c, 0.0) * w
            sel = [f > 0.5 for f in fracs]
            nearest = np.zeros(pts.shape[0])
            for offs, c in corners.items():
                mask = (
                    (sel[0] == bool(offs[0]))
                    & (sel[1] == bool(offs[1]))
                    & (sel[2] == bool(offs[2]))
                )
                nearest[mask] = c[mask]

    if finite.all():
        return blended
    return np.where(finite, blended, nearest)


def aligned_blowup_batch(
    u: GridFunction,
    cell_idx: np.ndarray,
    radii: np.ndarray,
    lattice: UnitBallLattice,
) -> np.ndarray:
    """Blowup values for many base cells sharing one radius schedule.

    Returns an array of shape (n_cells, n_radii, n_nodes).  Because the base
    points are cell centers, the fractional interpolation offsets depend only
    on (radius, node) and are shared across all cells, which makes this far
    cheaper than pointwise resampling.

    Caller contract: the grid holds no NaN, and every sampled ball stays
    strictly inside the clamp-free core (boundary distance of each base cell
    exceeds the largest radius by more than half a cell).  Violations surface
    as IndexError rather than silent clamping.
    """
    flat = u.values
    nodes = lattice.nodes
    n = u.dim
    cell_idx = np.asarray(cell_idx, dtype=np.int64)
    out = np.empty((cell_idx.size, len(radii), nodes.shape[0]))
    for ri, r in enumerate(radii):
        offs = nodes * (float(r) / u.spacing)
        lo = np.floor(offs)
        frac = offs - lo
        ilo = lo.astype(np.int64)
        if n == 1:
            idx = cell_idx[:, None] + ilo[:, 0][None, :]
            f0 = flat.take(idx)
            f1 = flat.take(idx + 1)
            out[:, ri, :] = f0 + frac[:, 0][None, :] * (f1 - f0)
        elif n == 2:
            s1 = u.shape[1]
            pat = ilo[:, 0] * s1 + ilo[:, 1]
            idx = cell_idx[:, None] + pat[None, :]
            f00 = flat.take(idx)
            f01 = flat.take(idx + 1)
            f10 = flat.take(idx + s1)
            f11 = flat.take(idx + (s1 + 1))
            fi = frac[:, 0][None, :]
            fj = frac[:, 1][None, :]
            top = f00 + fi * (f10 - f00)
            bot = f01 + fi * (f11 - f01)
            out[:, ri, :] = top + fj * (bot - top)
        else:
            s2 = u.shape[2]
            s12 = u.shape[1] * s2
            pat = ilo[:, 0] * s12 + ilo[:, 1] * s2 + ilo[:, 2]
            idx = cell_idx[:, None] + pat[None, :]
            acc = np.zeros((cell_idx.size, nodes.shape[0]))
            for oi, oj, ok in itertools.product((0, 1), repeat=3):
                w = (
                    (frac[:, 0] if oi else 1.0 - frac[:, 0])
                    * (frac[:, 1] if oj else 1.0 - frac[:, 1])
                    * (frac[:, 2] if ok else 1.0 - frac[:, 2])
                )
                acc += w[None, :] * flat.take(idx + (oi * s12 + oj * s2 + ok))
            out[:, ri, :] = acc
    return out


def blowup_sample(
    u: GridFunction,
    x: np.ndarray,
    r: float,
    lattice: UnitBallLattice | None = None,
    r_min_cells: float = DEFAULT_R_MIN_CELLS,
) -> BlowupSample:
    """Resample u around x at scale r onto the unit-ball lattice.

    The node at y receives the interpolated value of u at x + r*y.  Requires
    the whole ball x + r*B1 to lie inside the domain box and r to be at least
    ``r_min_cells`` grid cells.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (u.dim,):
        raise ValueError("base point dimension does not match grid")
    if lattice is None:
        lattice = default_lattice(u.dim)
    if lattice.dim != u.dim:
        raise LatticeMismatch("lattice dimension does not match grid")
    r = float(r)
    r_min = r_min_cells * u.spacing
    if r < r_min * (1.0 - 1e-12):
        raise RadiusTooSmall(f"r = {r:g} below guard {r_min:g}")
    tol = 1e-9 * u.spacing
    if u.boundary_distance(x) < r - tol:
        raise OutOfDomain(f"ball of radius {r:g} at {x} leaves the domain box")
    values = interpolate(u, x + r * lattice.nodes)
    return BlowupSample(x=x, r=r, lattice=lattice, values=values)


def l1_distance(f: BlowupSample, g: BlowupSample) -> float:
    """Mean absolute difference over shared valid (non-NaN) nodes.

    Matching infinities count as zero difference; an infinity against a
    finite value makes the distance infinite.
    """
    if not f.lattice.same_as(g.lattice):
        raise LatticeMismatch("samples live on different lattices")
    fv, gv = f.values, g.values
    valid = ~np.isnan(fv) & ~np.isnan(gv)
    if not valid.any():
        raise AllUndefined("no valid node pairs")
    a, b = fv[valid], gv[valid]
    diff = np.where(a == b, 0.0, np.abs(a - b))
    return float(np.mean(diff))


# ---------------------------------------------------------------------------
# GF1 on-disk format: JSON header + raw little-endian float64 payload
# ---------------------------------------------------------------------------

GF1_VERSION = 1


def _payload_name(header_path: Path) -> str:
    return header_path.name + ".bin"


def write_grid(u: GridFunction, path: str | Path) -> Path:
    """Write u as a GF1 header at ``path`` plus a sibling binary payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload_name(path)
    header = {
        "gf1": GF1_VERSION,
        "dim": u.dim,
        "shape": list(u.shape),
        "spacing": u.spacing,
        "origin": [float(v) for v in u.origin],
        "payload": payload,
    }
    path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")
    (path.parent / payload).write_bytes(u.values.astype("<f8").tobytes())
    return path


def read_grid(path: str | Path) -> GridFunction:
    """Read a GF1 header + payload back into a GridFunction (bit-exact)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read header: {exc}", 0) from exc
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not valid JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(header, dict) or header.get("gf1") != GF1_VERSION:
        raise FormatError("missing or unsupported gf1 version tag", 0)
    for key in ("dim", "shape", "spacing", "origin", "payload"):
        if key not in header:
            raise FormatError(f"header missing key {key!r}", 0)
    dim = int(header["dim"])
    if not 1 <= dim <= MAX_DIM:
        raise DimensionUnsupported(f"dim {dim} not in 1..{MAX_DIM}")
    shape = tuple(int(s) for s in header["shape"])
    if len(shape) != dim:
        raise FormatError("shape length does not match dim", 0)
    payload_path = path.parent / str(header["payload"])
    try:
        raw = payload_path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read payload: {exc}", 0) from exc
    expected = 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise FormatError(
            f"payload has {len(raw)} bytes, expected {expected}",
            min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f8").astype(float)
    return GridFunction(
        shape=shape,
        spacing=float(header["spacing"]),
        origin=np.array([float(v) for v in header["origin"]]),
        values=values,
    )
