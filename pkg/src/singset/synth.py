"""Ground-truth corpus: functions with analytically known jump and singular sets.

Grids are origin-centered (a cell center sits exactly at 0) with spacing
``2/size``, so functions singular at the origin are probed at an actual grid
point.  Cells take the analytic value at their center; no anti-aliasing.  On
a dividing hyperplane the negative-side value is used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .grid import GridFunction

KINDS = (
    "halfplane",
    "disk",
    "polygon",
    "voronoi",
    "smooth",
    "homogeneous",
    "logspiral",
    "checkerboard",
    "extended_disk",
)

# Expected-class codes, shared with classify (kept numeric here so the synth
# module stays independent).  DONT_CARE marks band points where discrete
# classification is legitimately ambiguous.
CODE_APPROX_CONTINUOUS = 0
CODE_JUMP = 64
CODE_SINGULAR = 128
CODE_NON_CONVERGENT = 192
CODE_INSUFFICIENT = 255
CODE_DONT_CARE = 254

_DEFAULT_PARAMS: dict[str, dict] = {
    "halfplane": {"a": 1.0, "b": 0.0, "angle_deg": 0.0},
    "disk": {"radius": 0.3, "inside": 2.0, "outside": 0.0},
    "polygon": {"n_sides": 5, "circumradius": 0.45, "rot_deg": 10.0,
                "inside": 1.5, "outside": 0.25},
    "voronoi": {"n_seeds": 6},
    "smooth": {"amplitude": 1.0, "sigma": 0.3},
    "homogeneous": {},
    "logspiral": {},
    "checkerboard": {"period": 0.5},
    "extended_disk": {"radius": 0.3, "outside": 0.0},
}


@dataclass
class CorpusSpec:
    """Recipe for one corpus grid: kind, resolution, parameters, noise."""

    kind: str
    size: int = 128
    params: dict = field(default_factory=dict)
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown corpus kind {self.kind!r}")
        if self.size < 8:
            raise InvalidSpec("corpus size must be >= 8")
        if self.noise < 0:
            raise InvalidSpec("noise amplitude must be >= 0")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged

    @property
    def name(self) -> str:
        return f"{self.kind}_{self.size}"

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "size": self.size,
            "params": self.params,
            "seed": self.seed,
            "noise": self.noise,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CorpusSpec":
        return cls(
            kind=d["kind"],
            size=int(d["size"]),
            params=dict(d.get("params", {})),
            seed=int(d.get("seed", 0)),
            noise=float(d.get("noise", 0.0)),
        )


@dataclass(eq=False)
class GroundTruth:
    """Analytic truth for a corpus grid.

    ``jump_distance(points)`` is the distance to the jump interface (inf for
    kinds without one).  ``singular_points`` are isolated non-jump singular
    locations (wedge corners, junctions, scale-invariant centers).
    ``jump_normal``/``jump_values`` give (a, b, nu) at interface points, with
    nu pointing from the b-side to the a-side; the symmetric orientation
    (b, a, -nu) is equally valid.
    """

    spec: CorpusSpec
    h: float
    bounded: bool
    _dist_fn: object
    _normal_fn: object
    _values_fn: object
    singular_points: np.ndarray
    non_convergent_points: np.ndarray
    singular_band: float

    def jump_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._dist_fn is None:
            return np.full(pts.shape[0], np.inf)
        return np.asarray(self._dist_fn(pts), dtype=float)

    def jump_normal(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._normal_fn is None:
            raise InvalidSpec(f"kind {self.spec.kind!r} has no jump normals")
        return np.asarray(self._normal_fn(pts), dtype=float)

    def jump_values(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point (a, b) on the nu / -nu sides of the interface."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self._values_fn is None:
            raise InvalidSpec(f"kind {self.spec.kind!r} has no jump values")
        a, b = self._values_fn(pts)
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def _special_distance(self, pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
        if centers.size == 0:
            return np.full(pts.shape[0], np.inf)
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
        return d.min(axis=1)

    def expected_codes(self, points: np.ndarray) -> np.ndarray:
        """Expected class code per point, CODE_DONT_CARE inside ambiguity bands.

        Bands: jump within h/2 of the interface, approximately continuous
        beyond 3h; isolated singular/non-convergent points within h/2 of their
        center, with a surrounding don't-care band of ``singular_band``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.h
        codes = np.full(pts.shape[0], CODE_APPROX_CONTINUOUS, dtype=np.uint8)

        dj = self.jump_distance(pts)
        codes[dj <= 3.0 * h] = CODE_DONT_CARE
        codes[dj <= 0.5 * h] = CODE_JUMP

        for centers, code in (
            (self.singular_points, CODE_SINGULAR),
            (self.non_convergent_points, CODE_NON_CONVERGENT),
        ):
            ds = self._special_distance(pts, centers)
            codes[ds <= self.singular_band] = CODE_DONT_CARE
            codes[ds <= 0.5 * h] = code
        return codes

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec.to_json_dict(),
            "h": self.h,
            "bounded": self.bounded,
            "singular_points": self.singular_points.tolist(),
            "non_convergent_points": self.non_convergent_points.tolist(),
            "singular_band": self.singular_band,
            "bands": {"jump": 0.5 * self.h, "continuous_beyond": 3.0 * self.h},
        }


def _centered_grid(size: int) -> tuple[float, np.ndarray, np.ndarray]:
    h = 2.0 / size
    origin = np.full(2, -(size // 2) * h)
    idx = np.arange(size)
    ax = (idx - size // 2) * h
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=-1)
    return h, origin, pts


def _segment_distance(pts: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    seg = p1 - p0
    L2 = float(seg @ seg)
    t = np.clip((pts - p0) @ seg / L2, 0.0, 1.0)
    proj = p0 + t[:, None] * seg
    return np.linalg.norm(pts - proj, axis=-1)


def _polygon_geometry(params: dict) -> tuple[np.ndarray, np.ndarray]:
    n = int(params["n_sides"])
    R = float(params["circumradius"])
    rot = math.radians(float(params["rot_deg"]))
    angles = rot + 2.0 * math.pi * np.arange(n) / n
    verts = R * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    return verts, np.roll(verts, -1, axis=0)


def _polygon_inside(pts: np.ndarray, v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    # convex polygon with counterclockwise vertices: inside iff left of all edges
    inside = np.ones(pts.shape[0], dtype=bool)
    for a, b in zip(v0, v1):
        e = b - a
        cross = e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])
        inside &= cross > 0
    return inside


def _voronoi_seeds(params: dict, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed + 1000003)
    n = int(params["n_seeds"])
    seeds = rng.uniform(-0.7, 0.7, size=(n, 2))
    vals = rng.permutation(np.linspace(0.0, 1.5, n))
    return seeds, vals


def _voronoi_junctions(seeds: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Circumcenters of seed triples that are actual junctions in [-1,1]^2."""
    pts = []
    n = seeds.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b, c = seeds[i], seeds[j], seeds[k]
                d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
                if abs(d) < 1e-12:
                    continue
                ux = ((a @ a) * (b[1] - c[1]) + (b @ b) * (c[1] - a[1]) + (c @ c) * (a[1] - b[1])) / d
                uy = ((a @ a) * (c[0] - b[0]) + (b @ b) * (a[0] - c[0]) + (c @ c) * (b[0] - a[0])) / d
                center = np.array([ux, uy])
                if np.abs(center).max() > 1.0:
                    continue
                r = np.linalg.norm(center - a)
                others = np.delete(seeds, [i, j, k], axis=0)
                if others.size and np.linalg.norm(others - center, axis=1).min() <= r + 1e-9:
                    continue
                pts.append(center)
    return np.array(pts) if pts else np.zeros((0, 2))


def generate(spec: CorpusSpec) -> tuple[GridFunction, GroundTruth]:
    """Deterministically generate the grid and its analytic ground truth."""
    h, origin, pts = _centered_grid(spec.size)
    p = spec.params
    kind = spec.kind
    bounded = kind != "extended_disk"
    dist_fn = normal_fn = values_fn = None
    singular = np.zeros((0, 2))
    non_conv = np.zeros((0, 2))
    singular_band = 16.0 * h

    if kind == "halfplane":
        theta = math.radians(float(p["angle_deg"]))
        nu = np.array([math.cos(theta), math.sin(theta)])
        a, b = float(p["a"]), float(p["b"])
        values = np.where(pts @ nu > 0, a, b)
        dist_fn = lambda q: np.abs(q @ nu)
        normal_fn = lambda q: np.tile(nu, (q.shape[0], 1))
        values_fn = lambda q: (np.full(q.shape[0], a), np.full(q.shape[0], b))

    elif kind in ("disk", "extended_disk"):
        R = float(p["radius"])
        outside = float(p["outside"])
        inside = math.inf if kind == "extended_disk" else float(p["inside"])
        rad = np.linalg.norm(pts, axis=-1)
        values = np.where(rad < R, inside, outside)
        dist_fn = lambda q: np.abs(np.linalg.norm(q, axis=-1) - R)
        normal_fn = lambda q: q / np.maximum(np.linalg.norm(q, axis=-1, keepdims=True), 1e-300)
        # nu = outward radial, so a = outside, b = inside
        values_fn = lambda q: (
            np.full(q.shape[0], outside),
            np.full(q.shape[0], inside),
        )

    elif kind == "polygon":
        v0, v1 = _polygon_geometry(p)
        inside_v, outside_v = float(p["inside"]), float(p["outside"])
        values = np.where(_polygon_inside(pts, v0, v1), inside_v, outside_v)

        def dist_fn(q, v0=v0, v1=v1):
            d = np.stack([_segment_distance(q, a, b) for a, b in zip(v0, v1)])
            return d.min(axis=0)

        def normal_fn(q, v0=v0, v1=v1):
            d = np.stack([_segment_distance(q, a, b) for a, b in zip(v0, v1)])
            nearest = d.argmin(axis=0)
            edges = v1 - v0
            # outward normal of a counterclockwise edge
            nrm = np.stack([edges[:, 1], -edges[:, 0]], axis=-1)
            nrm /= np.linalg.norm(nrm, axis=-1, keepdims=True)
            return nrm[nearest]

        values_fn = lambda q: (
            np.full(q.shape[0], outside_v),
            np.full(q.shape[0], inside_v),
        )
        singular = v0.copy()

    elif kind == "voronoi":
        seeds, vals = _voronoi_seeds(p, spec.seed)
        d = np.linalg.norm(pts[:, None, :] - seeds[None, :, :], axis=-1)
        nearest = d.argmin(axis=1)
        values = vals[nearest]
        dsort = np.sort(d, axis=1)

        def dist_fn(q, seeds=seeds):
            dd = np.sort(np.linalg.norm(q[:, None, :] - seeds[None, :, :], axis=-1), axis=1)
            return 0.5 * (dd[:, 1] - dd[:, 0])

        def normal_fn(q, seeds=seeds):
            dd = np.linalg.norm(q[:, None, :] - seeds[None, :, :], axis=-1)
            o = np.argsort(dd, axis=1)
            n1, n2 = seeds[o[:, 0]], seeds[o[:, 1]]
            nrm = n2 - n1
            return nrm / np.maximum(np.linalg.norm(nrm, axis=-1, keepdims=True), 1e-300)

        def values_fn(q, seeds=seeds, vals=vals):
            dd = np.linalg.norm(q[:, None, :] - seeds[None, :, :], axis=-1)
            o = np.argsort(dd, axis=1)
            # nu points toward the second-nearest seed: a-side = across the wall
            return vals[o[:, 1]], vals[o[:, 0]]

        singular = _voronoi_junctions(seeds, vals)

    elif kind == "smooth":
        amp, sig = float(p["amplitude"]), float(p["sigma"])
        values = amp * np.exp(-np.einsum("ij,ij->i", pts, pts) / (2.0 * sig * sig))

    elif kind == "homogeneous":
        rad = np.linalg.norm(pts, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            values = np.abs(pts[:, 0]) / rad
        values[rad == 0] = 0.0
        singular = np.zeros((1, 2))

    elif kind == "logspiral":
        rad = np.linalg.norm(pts, axis=-1)
        with np.errstate(divide="ignore"):
            values = np.sin(np.log(rad))
        values[rad == 0] = 0.0
        non_conv = np.zeros((1, 2))

    elif kind == "checkerboard":
        period = float(p["period"])
        parity = (np.floor(pts[:, 0] / period) + np.floor(pts[:, 1] / period)) % 2
        values = np.where(parity == 0, 1.0, 0.0)

        def dist_fn(q, period=period):
            frac = q / period - np.round(q / period)
            return np.abs(frac * period).min(axis=1)

        def normal_fn(q, period=period):
            frac = q / period - np.round(q / period)
            ax = np.argmin(np.abs(frac), axis=1)
            nrm = np.zeros_like(q)
            nrm[np.arange(q.shape[0]), ax] = 1.0
            return nrm

        values_fn = None  # alternating colors; per-point values depend on the cell pair
        # corners: both coordinates at multiples of the period
        ks = np.arange(-math.floor(1.0 / period), math.floor(1.0 / period) + 1)
        cx, cy = np.meshgrid(ks * period, ks * period, indexing="ij")
        singular = np.stack([cx.reshape(-1), cy.reshape(-1)], axis=-1)
        singular_band = 3.0 * h + 0.5 * h

    else:  # pragma: no cover - guarded by CorpusSpec validation
        raise InvalidSpec(f"unknown corpus kind {kind!r}")

    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed + 77)
        finite = np.isfinite(values)
        noise = rng.uniform(-spec.noise, spec.noise, size=values.shape)
        values = np.where(finite, values + noise, values)

    u = GridFunction(shape=(spec.size, spec.size), spacing=h, origin=origin, values=values)
    truth = GroundTruth(
        spec=spec,
        h=h,
        bounded=bounded,
        _dist_fn=dist_fn,
        _normal_fn=normal_fn,
        _values_fn=values_fn,
        singular_points=singular,
        non_convergent_points=non_conv,
        singular_band=singular_band,
    )
    return u, truth


def list_corpus(sizes: tuple[int, ...] = (128, 256)) -> list[CorpusSpec]:
    """The fixed acceptance corpus: every kind at each of the given resolutions."""
    return [CorpusSpec(kind=k, size=s) for k in KINDS for s in sizes]


def write_truth(truth: GroundTruth, path) -> None:
    from pathlib import Path

    Path(path).write_text(
        json.dumps(truth.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
