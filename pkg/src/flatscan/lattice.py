"""Constructive dyadic-cube lattice on the support of a discrete measure.

Level k uses a greedy maximal net with separation ``s_k = 10 A0^-k`` (in
units of the bounding-box diameter). Nets are nested: the centers of level
k are kept at level k + 1. Every new center is attached to the nearest
center one level up, and every atom belongs to the cube of its nearest
finest-level center, so cubes are unions of their descendants. The radius of
a cube is the largest value in ``[A0^-k, C0 A0^-k]`` that keeps B(Q) inside
Q and the balls 5B(Q) disjoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from flatscan.errors import AxiomViolation, ParameterInfeasible, RootReached
from flatscan.measure import DiscreteMeasure

SEPARATION = 10.0


@dataclass
class Cube:
    id: int
    level: int
    atoms: np.ndarray
    center_index: int
    center: np.ndarray
    r: float
    ell: float
    parent: int | None = None
    children: list = field(default_factory=list)
    doubling: bool | None = None
    strongly_doubling: bool | None = None

    @property
    def r_big(self) -> float:
        """Radius of B_Q = 28 B(Q)."""
        return 28.0 * self.r

    @property
    def diam_BQ(self) -> float:
        return 56.0 * self.r

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "center": [float(v) for v in self.center],
            "center_index": int(self.center_index),
            "r": float(self.r),
            "ell": float(self.ell),
            "parent": self.parent,
            "children": list(self.children),
            "atom_ids": [int(a) for a in self.atoms],
            "flags": {"doubling": self.doubling, "strongly_doubling": self.strongly_doubling},
        }


@dataclass
class CubeLattice:
    cubes: list
    levels: list
    A0: float
    C0: float
    depth: int
    unit: float
    n_atoms: int
    atom_cube: np.ndarray = None  # (depth + 1, N) cube id of every atom per level

    def cube(self, cid: int) -> Cube:
        return self.cubes[cid]

    def level(self, k: int) -> list:
        return [self.cubes[i] for i in self.levels[k]]

    def descendants(self, cid: int, include_self: bool = True) -> list:
        out = [cid] if include_self else []
        stack = list(self.cubes[cid].children)
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.cubes[c].children)
        return sorted(out)

    def ancestors(self, cid: int) -> list:
        out = []
        p = self.cubes[cid].parent
        while p is not None:
            out.append(p)
            p = self.cubes[p].parent
        return out

    def scale(self, k: int) -> float:
        """A0^-k in data units."""
        return self.unit * self.A0 ** (-k)

    def to_json(self, path=None, extra: dict | None = None) -> str:
        obj = dict(extra or {})
        obj.update({"A0": self.A0, "C0": self.C0, "depth": self.depth, "unit": self.unit,
                    "cubes": [c.to_dict() for c in self.cubes]})
        text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _greedy_net(pts, order, sep, seeds):
    """Maximal sep-separated subset: ``seeds`` first, then ``order``."""
    tree = cKDTree(pts)
    blocked = np.zeros(len(pts), dtype=bool)
    chosen = []

    def accept(i):
        chosen.append(i)
        nb = np.asarray(tree.query_ball_point(pts[i], sep), dtype=np.int64)
        if len(nb):
            d = np.linalg.norm(pts[nb] - pts[i], axis=1)
            blocked[nb[d < sep]] = True

    for i in seeds:
        accept(i)
    for i in order:
        if not blocked[i]:
            accept(i)
    return chosen


def build_lattice(mu: DiscreteMeasure, A0: float = 4.0, C0: float = 7.0,
                  depth: int | None = None, check: bool = True) -> CubeLattice:
    """Build a nested cube hierarchy satisfying the six lattice axioms."""
    if A0 < 2 or C0 < 1:
        raise ParameterInfeasible("need A0 >= 2 and C0 >= 1")
    # descendants drift at most s_k A0 / (A0 - 1) from their level-k center,
    # which must stay inside the outer ball 28 B(Q) with r(Q) >= A0^-k
    if SEPARATION * A0 / (A0 - 1) >= 28.0:
        raise ParameterInfeasible(f"A0 = {A0} too small for separated nets with 28-fold outer balls")
    N = len(mu)
    if depth is None:
        depth = max(1, int(math.ceil(math.log(max(N, 2)) / math.log(A0))))
    if depth < 1:
        raise ParameterInfeasible("depth must be >= 1")
    pts = mu.points
    unit = mu.diameter_bound()
    if unit <= 0:
        unit = 1.0
    # deterministic candidate order: descending weight, then lexicographic
    keys = [pts[:, k] for k in range(pts.shape[1] - 1, -1, -1)] + [-mu.weights]
    order = np.lexsort(keys)

    centers = []  # per level list of atom indices
    parent_center = []  # per level dict: center atom -> parent center atom
    prev, prev_set = [], set()
    for k in range(depth + 1):
        sep = SEPARATION * unit * A0 ** (-k)
        Z = _greedy_net(pts, order, sep, prev)
        par = {}
        if k > 0:
            prev_arr = np.asarray(prev)
            ptree = cKDTree(pts[prev_arr])
            for z in Z:
                if z in prev_set:
                    par[z] = z
                else:
                    _, j = ptree.query(pts[z])
                    par[z] = int(prev_arr[j])
        centers.append(Z)
        parent_center.append(par)
        prev = Z
        prev_set = set(Z)

    # finest assignment
    fin = np.asarray(centers[depth])
    _, j = cKDTree(pts[fin]).query(pts)
    owner = np.empty((depth + 1, N), dtype=np.int64)
    owner[depth] = fin[np.asarray(j)]
    for k in range(depth, 0, -1):
        par = parent_center[k]
        lut = {z: par[z] for z in centers[k]}
        owner[k - 1] = np.fromiter((lut[z] for z in owner[k]), dtype=np.int64, count=N)

    cubes: list[Cube] = []
    levels: list[list[int]] = []
    atom_cube = np.empty((depth + 1, N), dtype=np.int64)
    center_to_id: list[dict] = []
    tree_all = mu.tree
    for k in range(depth + 1):
        Zk = sorted(centers[k], key=lambda z: tuple(pts[z]))
        ids = {}
        zpts = pts[np.asarray(Zk)]
        if len(Zk) > 1:
            dd, _ = cKDTree(zpts).query(zpts, k=2)
            dnear = dd[:, 1]
        else:
            dnear = np.array([np.inf])
        rmax = C0 * unit * A0 ** (-k)
        rmin = unit * A0 ** (-k)
        members_of = {}
        srt = np.argsort(owner[k], kind="stable")
        vals, starts = np.unique(owner[k][srt], return_index=True)
        bounds = list(starts) + [N]
        for v, a, b in zip(vals, bounds[:-1], bounds[1:]):
            members_of[int(v)] = np.sort(srt[a:b])
        level_ids = []
        for zi, z in enumerate(Zk):
            mem = members_of[z]
            memset = np.zeros(N, dtype=bool)
            memset[mem] = True
            # strict margin so that touching 5B balls stay disjoint after rounding
            r = min(rmax, dnear[zi] / 10.0 * (1 - 1e-9))
            near = np.asarray(tree_all.query_ball_point(pts[z], r), dtype=np.int64)
            if len(near):
                outside = near[~memset[near]]
                if len(outside):
                    dout = np.linalg.norm(pts[outside] - pts[z], axis=1).min()
                    r = min(r, dout)
            if r < rmin * (1 - 1e-12):
                raise AxiomViolation(f"level {k}: radius {r:.4g} below A0^-k = {rmin:.4g}")
            cid = len(cubes)
            cubes.append(Cube(cid, k, mem, int(z), pts[z].copy(), float(r),
                              56.0 * C0 * unit * A0 ** (-k)))
            ids[z] = cid
            level_ids.append(cid)
            atom_cube[k, mem] = cid
        levels.append(level_ids)
        center_to_id.append(ids)
    for k in range(1, depth + 1):
        for z, cid in center_to_id[k].items():
            pid = center_to_id[k - 1][parent_center[k][z]]
            cubes[cid].parent = pid
            cubes[pid].children.append(cid)
    for c in cubes:
        c.children.sort()
    lat = CubeLattice(cubes, levels, float(A0), float(C0), depth, unit, N, atom_cube)
    if check:
        report = check_axioms(lat, mu)
        if report:
            raise AxiomViolation(f"{len(report)} axiom violations, first: {report[0]}",
                                 dump={"violations": report[:20]})
    return lat


def check_axioms(lat: CubeLattice, mu: DiscreteMeasure, rtol: float = 1e-12) -> list:
    """Direct check of the six axioms by linear scans (no spatial index).

    Returns a list of violation records (empty when every axiom holds).
    """
    pts = mu.points
    N = len(pts)
    out = []
    for k in range(lat.depth + 1):
        cubes = lat.level(k)
        count = np.zeros(N, dtype=np.int64)
        for Q in cubes:
            count[Q.atoms] += 1
        if np.any(count != 1):
            out.append({"axiom": "partition", "level": k,
                        "atoms": np.nonzero(count != 1)[0][:10].tolist()})
        lo, hi = lat.scale(k), lat.C0 * lat.scale(k)
        for Q in cubes:
            inQ = np.zeros(N, dtype=bool)
            inQ[Q.atoms] = True
            if not inQ[Q.center_index] or not np.array_equal(pts[Q.center_index], Q.center):
                out.append({"axiom": "center_in_cube", "cube": Q.id})
            if not (lo * (1 - rtol) <= Q.r <= hi * (1 + rtol)):
                out.append({"axiom": "radius", "cube": Q.id, "r": Q.r, "bounds": [lo, hi]})
            dist = np.sqrt(np.sum((pts - Q.center) ** 2, axis=1))
            if np.any((dist < Q.r) & ~inQ):
                out.append({"axiom": "inner_ball", "cube": Q.id})
            if np.any(inQ & ~(dist < 28.0 * Q.r)):
                out.append({"axiom": "outer_ball", "cube": Q.id})
            if Q.parent is not None:
                P = lat.cubes[Q.parent]
                inP = np.zeros(N, dtype=bool)
                inP[P.atoms] = True
                if np.any(inQ & ~inP):
                    out.append({"axiom": "nesting", "cube": Q.id, "parent": P.id})
        Z = np.array([Q.center for Q in cubes])
        R = np.array([Q.r for Q in cubes])
        for s in range(0, len(cubes), 512):
            dz = np.sqrt(np.sum((Z[s:s + 512, None, :] - Z[None, :, :]) ** 2, axis=-1))
            bad = dz < 5.0 * (R[s:s + 512, None] + R[None, :])
            ii, jj = np.nonzero(bad)
            for i, j in zip(ii + s, jj):
                if i < j:
                    out.append({"axiom": "disjoint_5B", "cubes": [cubes[i].id, cubes[j].id]})
    return out


def detect_doubling(lat: CubeLattice, mu: DiscreteMeasure, C0: float | None = None) -> np.ndarray:
    """Flag mu(100 B(Q)) <= C0 mu(B(Q)) for every cube (stored on the cubes too)."""
    C0 = lat.C0 if C0 is None else C0
    flags = np.zeros(len(lat.cubes), dtype=bool)
    for Q in lat.cubes:
        flags[Q.id] = mu.ball_mass(Q.center, 100 * Q.r) <= C0 * mu.ball_mass(Q.center, Q.r)
        Q.doubling = bool(flags[Q.id])
    return flags


def detect_strongly_doubling(lat: CubeLattice, mu: DiscreteMeasure, C: float = 1e4) -> np.ndarray:
    """Flag mu(100 B_Q) = mu(2800 B(Q)) <= C mu(B(Q))."""
    flags = np.zeros(len(lat.cubes), dtype=bool)
    for Q in lat.cubes:
        flags[Q.id] = mu.ball_mass(Q.center, 2800 * Q.r) <= C * mu.ball_mass(Q.center, Q.r)
        Q.strongly_doubling = bool(flags[Q.id])
    return flags


@dataclass
class RadiusScan:
    radii: np.ndarray
    qualifying: np.ndarray
    ratios: np.ndarray
    smallest_scanned: float


def doubling_radius_scan(mu: DiscreteMeasure, x, alpha: float, radii=None,
                         num: int = 40) -> RadiusScan:
    """Radii r on a geometric grid with mu(B(x, alpha r)) <= 2 alpha^d mu(B(x, r))."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    x = np.asarray(x, dtype=float)
    if radii is None:
        diam = mu.diameter_bound() or 1.0
        res = mu.resolution() or diam / max(len(mu), 1)
        radii = np.geomspace(res / 4, diam, num)
    radii = np.asarray(radii, dtype=float)
    d = mu.dim
    small = np.array([mu.ball_mass(x, r) for r in radii])
    big = np.array([mu.ball_mass(x, alpha * r) for r in radii])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(small > 0, big / small, np.inf)
    ok = big <= 2 * alpha ** d * small
    return RadiusScan(radii, radii[ok], ratios, float(radii.min()))


def ancestor_at_gap(lat: CubeLattice, Q: Cube | int, k: int) -> Cube:
    cid = Q.id if isinstance(Q, Cube) else int(Q)
    for _ in range(k):
        p = lat.cubes[cid].parent
        if p is None:
            raise RootReached(f"cube {cid} has fewer than {k} ancestors")
        cid = p
    return lat.cubes[cid]


def density_drop_report(lat: CubeLattice, mu: DiscreteMeasure) -> list:
    """For each non-doubling cube Q and its nearest doubling ancestor R, compare
    mu(100B(Q)) with A0^(-2d(J(Q)-J(R)-1)) mu(100B(R)). Reported, not asserted."""
    if any(c.doubling is None for c in lat.cubes):
        detect_doubling(lat, mu)
    d = mu.dim
    out = []
    for Q in lat.cubes:
        if Q.doubling or Q.parent is None:
            continue
        R = lat.cubes[Q.parent]
        while not R.doubling and R.parent is not None:
            R = lat.cubes[R.parent]
        gap = Q.level - R.level
        lhs = mu.ball_mass(Q.center, 100 * Q.r)
        rhs = lat.A0 ** (-2 * d * (gap - 1)) * mu.ball_mass(R.center, 100 * R.r)
        out.append({"cube": Q.id, "ancestor": R.id, "gap": gap, "lhs": lhs, "rhs": rhs,
                    "holds": bool(lhs <= rhs)})
    return out
