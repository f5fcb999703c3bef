"""Discrete measures, balls, affine planes, flat-measure quadrature and the
localized Lipschitz distance F_B.

All balls are open: an atom at distance exactly ``r`` from the center is
outside ``B(z, r)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from flatscan import _lp
from flatscan.errors import DataError, ParseError, QuadratureCapExceeded

QUADRATURE_NODE_CAP = 200_000


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class DiscreteMeasure:
    """Finite weighted point set standing in for a Radon measure on R^d.

    Parameters
    ----------
    points : (N, d) array
    weights : (N,) array of strictly positive masses
    """

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DataError("a measure needs at least one atom given as an (N, d) array")
        if weights is None:
            weights = np.ones(len(pts))
        w = np.asarray(weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise DataError(f"{len(pts)} points but {len(w)} weights")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise DataError("non-finite coordinate or weight")
        if np.any(w <= 0):
            raise DataError("weights must be strictly positive")
        self.points = _frozen(pts)
        self.weights = _frozen(w)
        self._tree = None

    # basic attributes -------------------------------------------------
    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(math.fsum(self.weights))

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    def __repr__(self):
        return f"DiscreteMeasure(N={len(self)}, d={self.dim}, mass={self.total_mass:.6g})"

    # queries -----------------------------------------------------------
    def ball_indices(self, center, radius) -> np.ndarray:
        """Sorted indices of atoms strictly inside B(center, radius)."""
        z = np.asarray(center, dtype=float)
        if radius <= 0:
            return np.zeros(0, dtype=np.int64)
        cand = np.asarray(self.tree.query_ball_point(z, radius), dtype=np.int64)
        if len(cand) == 0:
            return cand
        d = np.linalg.norm(self.points[cand] - z, axis=1)
        return np.sort(cand[d < radius])

    def ball_mass(self, center, radius) -> float:
        idx = self.ball_indices(center, radius)
        return float(math.fsum(self.weights[idx])) if len(idx) else 0.0

    def ball_masses(self, centers, radius) -> np.ndarray:
        """Ball masses for many centers sharing a radius (or one radius per center)."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        radii = np.broadcast_to(np.asarray(radius, dtype=float), (len(centers),))
        out = np.zeros(len(centers))
        for i, (z, r) in enumerate(zip(centers, radii)):
            out[i] = self.ball_mass(z, r)
        return out

    def restrict(self, indices) -> "DiscreteMeasure":
        idx = np.asarray(indices, dtype=np.int64)
        return DiscreteMeasure(self.points[idx], self.weights[idx])

    def scaled(self, k: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * k)

    def transformed(self, rotation=None, translation=None, dilation=1.0) -> "DiscreteMeasure":
        pts = self.points
        if rotation is not None:
            pts = pts @ np.asarray(rotation, dtype=float).T
        pts = pts * dilation
        if translation is not None:
            pts = pts + np.asarray(translation, dtype=float)
        return DiscreteMeasure(pts, self.weights)

    def nn_distances(self) -> np.ndarray:
        """Distance from each atom to its nearest distinct neighbour (inf for one atom)."""
        if len(self) == 1:
            return np.array([np.inf])
        d, _ = self.tree.query(self.points, k=2)
        return d[:, 1]

    def resolution(self) -> float:
        """Median nearest-neighbour distance, the finest meaningful length scale."""
        nn = self.nn_distances()
        nn = nn[np.isfinite(nn) & (nn > 0)]
        return float(np.median(nn)) if len(nn) else 0.0

    def diameter_bound(self) -> float:
        """Diagonal of the bounding box (an upper bound for the diameter)."""
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))

    def diameter(self) -> float:
        """Exact diameter (chunked all-pairs scan over the convex hull candidates)."""
        pts = self.points
        if len(pts) == 1:
            return 0.0
        best = 0.0
        for s in range(0, len(pts), 2048):
            blk = pts[s:s + 2048]
            d2 = ((blk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
            best = max(best, float(d2.max()))
        return math.sqrt(best)

    # io ------------------------------------------------------------------
    def to_csv(self, path=None, header_lines: list[str] | None = None) -> str:
        buf = io.StringIO()
        for line in header_lines or []:
            buf.write(f"# {line}\n")
        cols = [f"x{i + 1}" for i in range(self.dim)] + ["w"]
        buf.write(",".join(cols) + "\n")
        for p, w in zip(self.points, self.weights):
            buf.write(",".join(_fmt(v) for v in p) + "," + _fmt(w) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_json(self, path=None, extra: dict | None = None) -> str:
        obj = dict(extra or {})
        obj["dim"] = self.dim
        obj["atoms"] = [{"p": [float(v) for v in p], "w": float(w)}
                        for p, w in zip(self.points, self.weights)]
        text = json.dumps(obj, indent=1, sort_keys=True, allow_nan=False,
                          default=float) + "\n"
        # json uses repr for floats, which round-trips exactly
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def read_csv(path_or_text, *, is_text: bool = False) -> DiscreteMeasure:
    """Read the ``x1,...,xd,w`` schema. Lines starting with ``#`` are ignored."""
    text = path_or_text if is_text else Path(path_or_text).read_text()
    rows, header, hline = [], None, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        if header is None:
            header, hline = [f.strip() for f in fields], lineno
            d = len(header) - 1
            if d < 1 or header[-1] != "w" or header[:-1] != [f"x{i + 1}" for i in range(d)]:
                raise ParseError(f"bad header {header!r}, expected x1,...,xd,w", lineno)
            continue
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno)
        if vals[-1] <= 0:
            raise ParseError("weight must be positive", lineno)
        rows.append(vals)
    if header is None:
        raise ParseError("missing header", hline)
    if not rows:
        raise DataError("no atoms in input")
    arr = np.array(rows)
    return DiscreteMeasure(arr[:, :-1], arr[:, -1])


def read_json(path_or_text, *, is_text: bool = False) -> DiscreteMeasure:
    text = path_or_text if is_text else Path(path_or_text).read_text()
    try:
        obj = json.loads(text)
        d = int(obj["dim"])
        pts = np.array([a["p"] for a in obj["atoms"]], dtype=float).reshape(-1, d)
        w = np.array([a["w"] for a in obj["atoms"]], dtype=float)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ParseError(f"invalid measure JSON: {exc}") from None
    if len(w) == 0:
        raise DataError("no atoms in input")
    return DiscreteMeasure(pts, w)


def read_measure(path) -> DiscreteMeasure:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    if p.stat().st_size == 0:
        raise DataError(f"empty input file: {p}")
    if p.suffix.lower() == ".json":
        return read_json(p)
    return read_csv(p)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(np.atleast_1d(self.center)))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise DataError("ball radius must be positive")

    def scaled(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts - self.center, axis=1) < self.radius

    def to_dict(self):
        return {"center": [float(v) for v in self.center], "radius": self.radius}


def ball_mass(mu: DiscreteMeasure, B: Ball) -> float:
    return mu.ball_mass(B.center, B.radius)


def density(mu: DiscreteMeasure, B: Ball, n: int) -> float:
    """n-dimensional density mu(B) / r(B)^n."""
    return ball_mass(mu, B) / B.radius ** n


def _orthonormal_rows(frame) -> np.ndarray:
    F = np.atleast_2d(np.asarray(frame, dtype=float))
    q, _ = np.linalg.qr(F.T)
    q = q[:, :F.shape[0]].T
    # keep orientation of the supplied vectors
    signs = np.sign(np.sum(q * F, axis=1))
    signs[signs == 0] = 1.0
    return q * signs[:, None]


def canonical_sign(frame: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude entry is positive."""
    out = np.array(frame, dtype=float)
    for i, v in enumerate(out):
        k = int(np.argmax(np.abs(v)))
        if v[k] < 0:
            out[i] = -v
    return out


class AffinePlane:
    """n-plane ``base + span(frame)``; frame rows are orthonormal."""

    def __init__(self, base, frame, *, orthonormalize: bool = True):
        b = np.asarray(base, dtype=float).reshape(-1)
        F = np.atleast_2d(np.asarray(frame, dtype=float))
        if F.shape[1] != len(b):
            raise DataError("frame vectors must live in the ambient space of the base point")
        if F.shape[0] < 1 or F.shape[0] > len(b):
            raise DataError("plane dimension must satisfy 1 <= n <= d")
        if orthonormalize:
            F = _orthonormal_rows(F)
        self.base = _frozen(b)
        self.frame = _frozen(F)

    @property
    def n(self) -> int:
        return self.frame.shape[0]

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    def projector(self) -> np.ndarray:
        return self.frame.T @ self.frame

    def normal_frame(self) -> np.ndarray:
        """Orthonormal basis (rows) of the orthogonal complement."""
        if self.n == self.d:
            return np.zeros((0, self.d))
        u, _, _ = np.linalg.svd(self.frame.T, full_matrices=True)
        N = u[:, self.n:].T
        return canonical_sign(N)

    def coords(self, y) -> np.ndarray:
        return (np.atleast_2d(y) - self.base) @ self.frame.T

    def embed(self, t) -> np.ndarray:
        return self.base + np.atleast_2d(t) @ self.frame

    def project(self, y) -> np.ndarray:
        return self.embed(self.coords(y))

    def residual(self, y) -> np.ndarray:
        y = np.atleast_2d(y)
        return y - self.project(y)

    def dist(self, y) -> np.ndarray:
        return np.linalg.norm(self.residual(y), axis=1)

    def shifted(self, v) -> "AffinePlane":
        return AffinePlane(self.base + np.asarray(v, dtype=float), self.frame, orthonormalize=False)

    def to_dict(self):
        return {"base": [float(v) for v in self.base],
                "frame": [[float(v) for v in row] for row in self.frame]}

    @classmethod
    def from_dict(cls, obj) -> "AffinePlane":
        return cls(obj["base"], obj["frame"])

    def __repr__(self):
        return f"AffinePlane(n={self.n}, d={self.d}, base={self.base.tolist()})"


def plane_angle(L1: AffinePlane, L2: AffinePlane) -> float:
    """Hausdorff distance between the unit balls of the parallel planes through 0.

    Equals the spectral norm of the difference of the orthogonal projectors,
    i.e. the sine of the largest principal angle.
    """
    if L1.n != L2.n or L1.d != L2.d:
        raise DataError("planes must have equal dimension and ambient dimension")
    s = np.linalg.svd(L1.frame @ L2.frame.T, compute_uv=False)
    cmin = float(np.clip(s.min(), 0.0, 1.0))
    return math.sqrt(max(0.0, 1.0 - cmin * cmin))


@dataclass(frozen=True)
class PlaneQuadrature:
    """Regular-grid quadrature of H^n restricted to ``plane``; every node has weight spacing^n."""

    plane: AffinePlane
    nodes: np.ndarray
    weights: np.ndarray
    spacing: float
    coords: np.ndarray = field(repr=False, default=None)

    @property
    def total_weight(self) -> float:
        return float(math.fsum(self.weights))

    def inside(self, B: Ball) -> "PlaneQuadrature":
        keep = B.contains(self.nodes) if len(self.nodes) else np.zeros(0, bool)
        return PlaneQuadrature(self.plane, self.nodes[keep], self.weights[keep],
                               self.spacing, None if self.coords is None else self.coords[keep])


def flat_quadrature(L: AffinePlane, B: Ball, spacing: float, *, extent: float = 3.0,
                    cap: int = QUADRATURE_NODE_CAP) -> PlaneQuadrature:
    """Grid of spacing ``spacing`` on L, clipped to the open ball ``extent * B``.

    The grid is the cell-centre lattice ``delta * (Z + 1/2)^n`` in plane
    coordinates centred at the projection of the ball centre, so it is
    symmetric under the reflections of the frame.
    """
    if not spacing > 0:
        raise DataError("quadrature spacing must be positive")
    R = extent * B.radius
    h = float(L.dist(B.center)[0])
    if h >= R:
        return PlaneQuadrature(L, np.zeros((0, L.d)), np.zeros(0), spacing, np.zeros((0, L.n)))
    rho = math.sqrt(R * R - h * h)
    m = int(math.ceil(rho / spacing))
    est = (2 * m) ** L.n
    if est > cap:
        raise QuadratureCapExceeded(f"quadrature would need about {est} nodes (cap {cap})")
    t1 = (np.arange(-m, m) + 0.5) * spacing
    grids = np.meshgrid(*([t1] * L.n), indexing="ij")
    T = np.stack([g.reshape(-1) for g in grids], axis=1)
    T = T[np.sum(T * T, axis=1) < rho * rho]
    c0 = L.coords(B.center)[0]
    pts = L.embed(T + c0)
    keep = np.linalg.norm(pts - B.center, axis=1) < R
    T, pts = T[keep], pts[keep]
    order = np.lexsort(T.T[::-1])
    T, pts = T[order], pts[order]
    w = np.full(len(pts), spacing ** L.n)
    return PlaneQuadrature(L, pts, w, spacing, T)


def nball_volume(n: int, r: float) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r ** n


# ----------------------------------------------------------------------
# localized Lipschitz distance


@dataclass
class FBResult:
    value: float
    potentials: np.ndarray
    nodes: np.ndarray
    iterations: int = 0
    approximate: bool = False
    residual: float = 0.0


def _nodes_in_ball(points, weights, B: Ball):
    if len(points) == 0:
        return np.zeros((0, len(B.center))), np.zeros(0)
    keep = B.contains(points)
    return np.asarray(points)[keep], np.asarray(weights)[keep]


def f_b_distance(mu: DiscreteMeasure | tuple, nu: DiscreteMeasure | tuple | None, B: Ball) -> FBResult:
    """sup over 1-Lipschitz phi supported in B of |int phi dmu - int phi dnu|.

    ``mu`` and ``nu`` may be DiscreteMeasure objects or ``(points, weights)``
    pairs (weights may be zero), and ``nu`` may be None for the zero measure.
    Only atoms strictly inside B take part. The result is the exact optimum of
    the node-potential linear program, obtained by constraint generation over
    the pairwise Lipschitz constraints.
    """
    pa, wa = _as_pair(mu, B.center)
    pb, wb = _as_pair(nu, B.center)
    pa, wa = _nodes_in_ball(pa, wa, B)
    pb, wb = _nodes_in_ball(pb, wb, B)
    pts = np.vstack([pa, pb])
    s = np.concatenate([wa, -wb])
    if len(pts) == 0:
        return FBResult(0.0, np.zeros(0), pts)
    rho = B.radius - np.linalg.norm(pts - B.center, axis=1)
    # the feasible set is symmetric under phi -> -phi, so the supremum of the
    # absolute value equals the supremum of the signed functional
    res = _lp.lipschitz_potential(pts, s, rho, center=B.center, scale=B.radius)
    return FBResult(max(res.value, 0.0), res.potentials, pts, res.iterations,
                    residual=res.residual)


def _as_pair(m, center):
    if m is None:
        return np.zeros((0, len(center))), np.zeros(0)
    if isinstance(m, DiscreteMeasure):
        return m.points, m.weights
    p, w = m
    return np.atleast_2d(np.asarray(p, dtype=float)).reshape(-1, len(center)), np.asarray(w, dtype=float)
