"""Stopping-time decomposition over a root cube, the Lipschitz graph built
from it, and the approximating measure nu.

Pipeline::

    lat = build_lattice(mu)
    R0 = select_root(mu, lat)
    hyp = check_main_lemma_hypothesis(mu, lat, R0, eps0, grid)
    tree = build_tree(mu, lat, R0, params, grid, good=hyp.good)
    graph = build_graph(mu, tree, params)
    nu = build_nu(mu, graph, tree, params)

All stopping conditions are evaluated on the normalized measure
``mu / Theta_mu(3 B_R0)``, whose density on 3B_R0 is one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from flatscan.coefficients import (
    GOOD_SET_SEARCH,
    GoodSet,
    PlaneSearchConfig,
    ScaleGrid,
    alpha,
    beta_p,
    good_set,
)
from flatscan.errors import DegenerateBase, ParameterInfeasible
from flatscan.lattice import Cube, CubeLattice, detect_strongly_doubling
from flatscan.measure import AffinePlane, Ball, DiscreteMeasure, plane_angle

LABELS = ("HD", "LD", "BS", "BA", "F")


@dataclass(frozen=True)
class StoppingParams:
    A: float = 10.0
    tau: float = 0.01
    theta: float = 0.1
    eps0: float = 0.01
    gamma: float = 0.1
    rho1: float = 0.25
    rho2: float = 0.01
    eta: float = 0.1

    def __post_init__(self):
        if not (self.A > 1 > self.tau > 0):
            raise ParameterInfeasible("need A > 1 > tau > 0")
        if not (0 < self.theta < 1 and 0 < self.eps0 < 1):
            raise ParameterInfeasible("need theta, eps0 in (0, 1)")
        if not (0 < self.eta < 0.5):
            raise ParameterInfeasible("need eta in (0, 1/2)")

    def to_dict(self):
        return dict(self.__dict__)


# ----------------------------------------------------------------------
# root selection and the hypothesis check


def select_root(mu: DiscreteMeasure, lat: CubeLattice, C_sdb: float = 1e4,
                level: int | None = None, reach: float = 84.0, max_fraction: float = 0.25) -> Cube:
    """Pick a strongly doubling root cube.

    The level is the shallowest one whose cubes satisfy ``reach * r(Q) <=
    max_fraction * diameter``, so that 3B_Q (radius 84 r(Q)) sits well inside
    the sample; within it, the strongly doubling cube whose center is closest
    to the weighted median of the atoms is chosen.
    """
    flags = detect_strongly_doubling(lat, mu, C_sdb)
    if level is None:
        level = lat.depth
        for k in range(lat.depth + 1):
            if max(Q.r for Q in lat.level(k)) * reach <= max_fraction * lat.unit:
                level = k
                break
    cands = [Q for Q in lat.level(level) if flags[Q.id]] or lat.level(level)
    med = np.array([_weighted_median(mu.points[:, k], mu.weights) for k in range(mu.dim)])
    d = [float(np.linalg.norm(Q.center - med)) for Q in cands]
    return cands[int(np.argmin(d))]


def _weighted_median(v, w):
    o = np.argsort(v, kind="stable")
    cw = np.cumsum(w[o])
    return float(v[o][np.searchsorted(cw, 0.5 * cw[-1])])


def normalization(mu: DiscreteMeasure, R0: Cube, n: int) -> float:
    """Theta_mu(3 B_R0) = mu(3 B_R0) / (3 r(B_R0))^n."""
    r0 = R0.r_big
    return mu.ball_mass(R0.center, 3 * r0) / (3 * r0) ** n


def pipeline_grid(mu: DiscreteMeasure, nn_factor: float = 16.0, extent_fraction: float = 0.25,
                  q: float = 2 ** -0.5) -> ScaleGrid:
    """Scale grid used by the good-set evaluation inside the pipeline."""
    res = mu.resolution()
    diam = mu.diameter_bound()
    r_max = extent_fraction * diam
    return ScaleGrid(min(nn_factor * res, r_max), r_max, q)


@dataclass
class HypothesisReport:
    holds: bool
    bad_mass: float
    budget: float
    theta: float
    strongly_doubling: bool
    good: GoodSet
    normalized_mass_3B0: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {"holds": self.holds, "bad_mass": self.bad_mass, "budget": self.budget,
                "normalization_theta": self.theta, "strongly_doubling": self.strongly_doubling,
                "normalized_density_3B0": self.normalized_mass_3B0, **self.metadata}


def check_main_lemma_hypothesis(mu: DiscreteMeasure, lat: CubeLattice, R0: Cube, eps0: float,
                                grid: ScaleGrid, n: int = 1, C_sdb: float = 1e4,
                                search: PlaneSearchConfig | None = None) -> HypothesisReport:
    """mu(R0 minus G) <= eps0 mu(3 B_R0), measured on the normalized measure."""
    theta = normalization(mu, R0, n)
    if theta <= 0:
        raise DegenerateBase("3B_R0 carries no mass")
    mun = mu.scaled(1.0 / theta)
    gs = good_set(mun, eps0, R0.r, grid, n, atoms=R0.atoms, search=search or GOOD_SET_SEARCH)
    bad = gs.atoms[~gs.good]
    bad_mass = float(np.sum(mun.weights[bad]))
    m3 = mun.ball_mass(R0.center, 3 * R0.r_big)
    sdb = mu.ball_mass(R0.center, 2800 * R0.r) <= C_sdb * mu.ball_mass(R0.center, R0.r)
    dens = m3 / (3 * R0.r_big) ** n
    return HypothesisReport(bad_mass <= eps0 * m3, bad_mass, eps0 * m3, theta, bool(sdb), gs, dens,
                            metadata={"good_fraction": float(np.mean(gs.good)),
                                      "r_lo": gs.metadata["r_lo"], "r_hi": gs.metadata["r_hi"]})


# ----------------------------------------------------------------------
# stopping-time tree


@dataclass
class TreeDecomposition:
    root: Cube
    lattice: CubeLattice
    mu: DiscreteMeasure  # normalized measure
    theta: float
    n: int
    params: StoppingParams
    cubes: list
    labels: dict  # cube id -> "Tree" | stop label | "below" (strictly inside a Stop cube)
    stop_families: dict  # cube id -> list of families the cube belongs to
    tree: list
    stop: list
    tree0: list
    stop0: list
    planes: dict
    constants: dict
    r_far: np.ndarray
    good_atoms: np.ndarray
    budgets: dict
    diagnostics: dict
    empty: bool
    L0: AffinePlane
    c0: float

    @property
    def r0(self) -> float:
        return self.root.r_big

    @property
    def z0(self) -> np.ndarray:
        return self.root.center

    def check_invariants(self) -> list:
        """Post-hoc checks: Stop maximal and disjoint, Tree cubes violate all conditions."""
        out = []
        lat, mu, p, n = self.lattice, self.mu, self.params, self.n
        stop = set(self.stop)
        for s in self.stop:
            if any(a in stop for a in lat.ancestors(s)):
                out.append({"check": "stop_maximal", "cube": s})
            for a in lat.ancestors(s):
                if a in set(self.cubes) and self.labels.get(a) != "Tree":
                    out.append({"check": "ancestor_in_tree", "cube": s, "ancestor": a})
        good = np.zeros(len(mu), dtype=bool)
        good[self.good_atoms] = True
        far = np.zeros(len(mu), dtype=bool)
        far[self.r_far] = True
        for q in self.tree:
            Q = lat.cubes[q]
            ell = Q.ell
            m3 = mu.ball_mass(Q.center, 3 * Q.r_big)
            if not m3 <= p.A * ell ** n:
                out.append({"check": "notHD", "cube": q})
            if not mu.ball_mass(Q.center, 1.5 * Q.r_big) >= p.tau * ell ** n:
                out.append({"check": "notLD", "cube": q})
            if not float(np.sum(mu.weights[Q.atoms][~good[Q.atoms]])) <= 0.5 * float(np.sum(mu.weights[Q.atoms])):
                out.append({"check": "notBS", "cube": q})
            if not plane_angle(self.planes[q], self.L0) <= p.theta:
                out.append({"check": "notBA", "cube": q})
            idx = mu.ball_indices(Q.center, 3 * Q.r_big)
            if not float(np.sum(mu.weights[idx][far[idx]])) <= p.eps0 ** 0.25 * m3:
                out.append({"check": "notF", "cube": q})
        return out

    def to_dict(self) -> dict:
        cubes = {}
        for q in self.cubes:
            Q = self.lattice.cubes[q]
            rec = {"level": Q.level, "label": self.labels[q], "r": Q.r, "ell": Q.ell,
                   "center": [float(v) for v in Q.center]}
            if q in self.stop_families:
                rec["families"] = self.stop_families[q]
            if q in self.planes:
                rec["L_Q"] = self.planes[q].to_dict()
            if q in self.constants:
                rec["c_Q"] = self.constants[q]
            cubes[str(q)] = rec
        return {"root": self.root.id, "root_level": self.root.level, "empty_tree": self.empty,
                "normalization_theta": self.theta, "params": self.params.to_dict(),
                "n_tree": len(self.tree), "n_stop": len(self.stop),
                "budgets": self.budgets, "diagnostics": self.diagnostics,
                "r_far": [int(i) for i in self.r_far], "cubes": cubes}


def build_tree(mu: DiscreteMeasure, lat: CubeLattice, R0: Cube, params: StoppingParams | None = None,
               grid: ScaleGrid | None = None, n: int = 1, good: GoodSet | None = None,
               search: PlaneSearchConfig | None = None) -> TreeDecomposition:
    """Two-pass stopping-time construction below R0."""
    p = params or StoppingParams()
    theta = normalization(mu, R0, n)
    if theta <= 0:
        raise DegenerateBase("3B_R0 carries no mass")
    mun = mu.scaled(1.0 / theta)
    if good is None:
        grid = grid or pipeline_grid(mu)
        good = good_set(mun, p.eps0, R0.r, grid, n, atoms=R0.atoms, search=search or GOOD_SET_SEARCH)
    good_mask = np.zeros(len(mu), dtype=bool)
    good_mask[good.good_indices()] = True
    cubes = lat.descendants(R0.id)
    cset = set(cubes)
    w = mun.weights

    fam0 = {}
    for q in cubes:
        Q = lat.cubes[q]
        fl = []
        if mun.ball_mass(Q.center, 3 * Q.r_big) > p.A * Q.ell ** n:
            fl.append("HD")
        if mun.ball_mass(Q.center, 1.5 * Q.r_big) < p.tau * Q.ell ** n:
            fl.append("LD")
        mQ = float(np.sum(w[Q.atoms]))
        if float(np.sum(w[Q.atoms][~good_mask[Q.atoms]])) > 0.5 * mQ:
            fl.append("BS")
        if fl:
            fam0[q] = fl

    def maximal(flagged):
        return sorted(q for q in flagged
                      if not any(a in flagged for a in lat.ancestors(q) if a in cset))

    stop0 = maximal(set(fam0))
    below0 = _covered(lat, stop0, cubes)
    tree0 = [q for q in cubes if q not in below0]

    planes, consts = {}, {}
    cfg = search or PlaneSearchConfig(K=0, spacing_factor=1 / 48, atom_cap=160)
    for q in sorted(set(tree0) | set(stop0)):
        Q = lat.cubes[q]
        b = beta_p(mun, Q.center, 3 * Q.r_big, 2, n)
        if b.defined:
            planes[q] = b.plane
    if R0.id not in planes:
        raise DegenerateBase("no plane for the root cube")
    L0 = planes[R0.id]
    for q in tree0:
        Q = lat.cubes[q]
        a = alpha(mun, Ball(Q.center, 3 * Q.r_big), n, cfg, planes=[planes[q]])
        consts[q] = float(a.constant)
    c0 = consts.get(R0.id)
    if c0 is None:
        a = alpha(mun, Ball(R0.center, 3 * R0.r_big), n, cfg, planes=[L0])
        c0 = float(a.constant)
        consts[R0.id] = c0

    # R_Far from Tree0
    far = np.zeros(len(mu), dtype=bool)
    for q in tree0:
        Q = lat.cubes[q]
        idx = mun.ball_indices(Q.center, 3 * Q.r_big)
        if len(idx):
            far[idx[planes[q].dist(mun.points[idx]) >= math.sqrt(p.eps0) * Q.ell]] = True
    r_far = np.nonzero(far)[0]

    fam = {q: list(v) for q, v in fam0.items() if q in set(stop0)}
    for q in tree0:
        Q = lat.cubes[q]
        if plane_angle(planes[q], L0) > p.theta:
            fam.setdefault(q, []).append("BA")
            continue
        idx = mun.ball_indices(Q.center, 3 * Q.r_big)
        m3 = float(np.sum(w[idx]))
        if float(np.sum(w[idx][far[idx]])) > p.eps0 ** 0.25 * m3:
            fam.setdefault(q, []).append("F")
    stop = maximal(set(fam))
    below = _covered(lat, stop, cubes)
    tree = [q for q in cubes if q not in below]
    labels = {}
    for q in cubes:
        if q in set(stop):
            labels[q] = fam[q][0]
        elif q in below:
            labels[q] = "below"
        else:
            labels[q] = "Tree"
    stop_fams = {q: fam[q] for q in stop}

    budgets = {}
    for lab in LABELS:
        ids = [q for q in stop if stop_fams[q][0] == lab]
        budgets[lab] = float(sum(float(np.sum(w[lat.cubes[q].atoms])) for q in ids))
    budgets["R_Far"] = float(np.sum(w[r_far]))
    mR0 = float(np.sum(w[R0.atoms]))
    budgets["R0"] = mR0
    diag = {
        "BS_vs_eps0_muR0": budgets["BS"] / (p.eps0 * mR0) if mR0 else math.nan,
        "RFar_vs_sqrt_eps0_muR0": budgets["R_Far"] / (math.sqrt(p.eps0) * mR0) if mR0 else math.nan,
        "HD_fraction": budgets["HD"] / mR0 if mR0 else math.nan,
        "LD_fraction": budgets["LD"] / mR0 if mR0 else math.nan,
    }
    return TreeDecomposition(R0, lat, mun, theta, n, p, cubes, labels, stop_fams, tree, stop,
                             tree0, stop0, planes, consts, r_far, good.good_indices(), budgets,
                             diag, R0.id in set(stop), L0, float(c0))


def _covered(lat, stop, cubes):
    out = set()
    for s in stop:
        out.update(lat.descendants(s))
    return out


# ----------------------------------------------------------------------
# balanced balls


@dataclass
class BalancedBallResult:
    alternative: str  # "a", "b" or "inconclusive"
    points: np.ndarray
    spreads: list
    required: list
    balls: list
    lift: list
    mass_fraction: float
    rigorous: bool
    report: dict = field(default_factory=dict)


def balanced_ball_test(mu: DiscreteMeasure, B: Ball, gamma: float = 0.1, rho1: float = 0.25,
                       rho2: float = 0.01, n: int = 1, lift_constant: float | None = None,
                       mass_constant: float = 0.5) -> BalancedBallResult:
    """Certify one of the two alternatives for a ball.

    (a) points x_0..x_n in B, each with mu(B(x_k, rho1 r) & B) >= rho2 mu(B),
        and dist(x_k, span(x_0..x_{k-1})) >= gamma r + (k + 1) rho1 r, which
        accounts for moving every point by up to rho1 r (rigorous for n = 1);
    (b) balls B_i of radius 4 gamma r centred in B, with 10 B_i pairwise
        disjoint, Theta(B_i) >= lift_constant Theta(B) / gamma and
        sum mu(B_i) >= mass_constant mu(B).
    """
    r = B.radius
    idx = mu.ball_indices(B.center, r)
    if len(idx) == 0:
        return BalancedBallResult("inconclusive", np.zeros((0, mu.dim)), [], [], [], [], 0.0, n == 1,
                                  {"reason": "empty ball"})
    pts, w = mu.points[idx], mu.weights[idx]
    mB = float(np.sum(w))
    tree = cKDTree(pts)
    local = np.array([float(np.sum(w[[j for j in tree.query_ball_point(x, rho1 * r)
                                      if np.linalg.norm(pts[j] - x) < rho1 * r]]))
                      for x in pts])
    x0 = int(np.argmax(local))
    chosen = [x0]
    spreads, required = [], []
    ok_a = True
    heavy = local >= rho2 * mB
    for k in range(1, n + 1):
        S = pts[chosen]
        base = S[0]
        if len(S) > 1:
            Qm, _ = np.linalg.qr((S[1:] - base).T)
            Y = pts - base
            dist = np.linalg.norm(Y - (Y @ Qm) @ Qm.T, axis=1)
        else:
            dist = np.linalg.norm(pts - base, axis=1)
        dist = np.where(heavy, dist, -np.inf)
        xk = int(np.argmax(dist))
        spreads.append(float(dist[xk]))
        need = gamma * r + (k + 1) * rho1 * r
        required.append(need)
        chosen.append(xk)
        if dist[xk] < need:
            ok_a = False
    if ok_a:
        return BalancedBallResult("a", pts[chosen], spreads, required, [], [], 1.0, n == 1)

    # alternative (b)
    lam = 4 ** (-n) if lift_constant is None else lift_constant
    rb = 4 * gamma * r
    thetaB = mB / r ** n
    dens = np.array([float(np.sum(w[[j for j in tree.query_ball_point(x, rb)
                                     if np.linalg.norm(pts[j] - x) < rb]])) for x in pts]) / rb ** n
    order = np.lexsort((np.arange(len(pts)), -dens))
    centers, lifts = [], []
    for i in order:
        if dens[i] < lam * thetaB / gamma:
            break
        if all(np.linalg.norm(pts[i] - pts[j]) >= 20 * rb for j in centers):
            centers.append(int(i))
            lifts.append(float(dens[i] / thetaB))
    mass = sum(mu.ball_mass(pts[i], rb) for i in centers) / mB if mB else 0.0
    balls = [Ball(pts[i], rb) for i in centers]
    if centers and mass >= mass_constant:
        return BalancedBallResult("b", pts[chosen], spreads, required, balls, lifts, mass, n == 1)
    return BalancedBallResult("inconclusive", pts[chosen], spreads, required, balls, lifts, mass, n == 1,
                              {"a_shortfall": [s - q for s, q in zip(spreads, required)],
                               "b_mass_fraction": mass})


# ----------------------------------------------------------------------
# Lipschitz graph


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


def bump_1d(t):
    """1 for t <= 2, 0 for t >= 3, quintic smoothstep in between."""
    return 1.0 - _smoothstep(np.asarray(t, dtype=float) - 2.0)


@dataclass
class WhitneyCell:
    level: int
    index: tuple
    lo: np.ndarray
    side: float
    accepted: bool
    in_I0: bool = False
    companion: int | None = None
    A: np.ndarray | None = None  # affine piece F_i(u) = A u + b
    b: np.ndarray | None = None

    @property
    def center(self):
        return self.lo + 0.5 * self.side

    @property
    def half(self):
        return 0.5 * self.side

    def diam(self, n):
        return self.side * math.sqrt(n)


class GraphSurface:
    """Graph of a map F: L0 -> L0^perp, with L0 = b0 + span(U0), normals N0."""

    def __init__(self, b0, U0, N0):
        self.b0 = np.asarray(b0, dtype=float)
        self.U0 = np.asarray(U0, dtype=float)
        self.N0 = np.asarray(N0, dtype=float)

    @property
    def n(self):
        return self.U0.shape[0]

    @property
    def d(self):
        return self.U0.shape[1]

    def evaluate(self, u):
        raise NotImplementedError

    def lift(self, u):
        """f(u) = b0 + U0 u + N0 F(u) in ambient coordinates."""
        u = np.atleast_2d(u)
        return self.b0 + u @ self.U0 + self.evaluate(u) @ self.N0

    def area_element(self, u, step):
        u = np.atleast_2d(u)
        n = self.n
        G = np.zeros((len(u), self.d - n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            G[:, :, k] = (self.evaluate(u + e) - self.evaluate(u - e)) / (2 * step)
        M = np.eye(n)[None] + np.einsum("mki,mkj->mij", G, G)
        return np.sqrt(np.linalg.det(M))


class ExplicitGraph(GraphSurface):
    """Graph of an explicit function over a box of the base plane."""

    def __init__(self, func, lo, hi, h_grid, b0=None, U0=None, N0=None):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = len(lo)
        if U0 is None:
            d = n + 1
            b0 = np.zeros(d)
            U0 = np.eye(d)[:n]
            N0 = np.eye(d)[n:]
        super().__init__(b0, U0, N0)
        self.func = func
        self.lo, self.hi = lo, hi
        self.h_grid = float(h_grid)
        m = np.maximum(np.round((hi - lo) / h_grid).astype(int), 1)
        axes = [np.linspace(lo[k], hi[k], m[k] + 1) for k in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.grid_shape = tuple(m + 1)
        self.nodes = np.stack([g.reshape(-1) for g in mesh], axis=1)
        self.values = self.evaluate(self.nodes)

    def evaluate(self, u):
        u = np.atleast_2d(u)
        v = np.asarray(self.func(u), dtype=float)
        return v.reshape(len(u), -1)


class GraphModel(GraphSurface):
    """The map F over L0 assembled from Whitney cells and the R_G interpolant."""

    def __init__(self, tree: TreeDecomposition, b0, U0, N0, lo, side, m, cells, rg_cell_mask,
                 d_atoms, D_nodes, d_tol, rg_atoms, rg_u, rg_v, conflicts):
        super().__init__(b0, U0, N0)
        self.tree = tree
        self.lo = np.asarray(lo, dtype=float)
        self.side = float(side)
        self.m = int(m)
        self.h_grid = side / 2 ** m
        self.cells = cells
        self.rg_cell_mask = rg_cell_mask
        self.d_atoms = d_atoms
        self.D_nodes = D_nodes
        self.d_tol = d_tol
        self.rg_atoms = rg_atoms
        self.rg_u = rg_u
        self.rg_v = rg_v
        self.conflicts = conflicts
        n = self.n
        axes = [self.lo[k] + self.h_grid * np.arange(2 ** m + 1) for k in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.grid_shape = (2 ** m + 1,) * n
        self.nodes = np.stack([g.reshape(-1) for g in mesh], axis=1)
        self._centers = np.array([c.center for c in cells]) if cells else np.zeros((0, n))
        self._halves = np.array([c.half for c in cells]) if cells else np.zeros(0)
        self._i0 = np.array([c.in_I0 for c in cells], dtype=bool) if cells else np.zeros(0, bool)
        self._A = np.array([c.A if c.A is not None else np.zeros((self.d - n, n)) for c in cells]) \
            if cells else np.zeros((0, self.d - n, n))
        self._b = np.array([c.b if c.b is not None else np.zeros(self.d - n) for c in cells]) \
            if cells else np.zeros((0, self.d - n))
        self._interp = _make_interpolator(rg_u, rg_v, n, self.d - n)
        self.values = self.evaluate(self.nodes)
        self.metadata = {}

    # evaluation ---------------------------------------------------------
    def _in_rg_region(self, u):
        n = self.n
        if not np.any(self.rg_cell_mask):
            return np.zeros(len(u), dtype=bool)
        k = np.floor((u - self.lo) / self.h_grid).astype(np.int64)
        inside = np.all((k >= 0) & (k < 2 ** self.m), axis=1)
        k = np.clip(k, 0, 2 ** self.m - 1)
        flag = self.rg_cell_mask[tuple(k[:, j] for j in range(n))]
        return flag & inside

    def partition_weights(self, u):
        """(points x cells) matrix of unnormalized bumps phi~_i(u)."""
        u = np.atleast_2d(u)
        if len(self.cells) == 0:
            return np.zeros((len(u), 0))
        t = np.abs(u[:, None, :] - self._centers[None, :, :]) / self._halves[None, :, None]
        return np.prod(bump_1d(t), axis=2)

    def evaluate(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        k = self.d - self.n
        out = np.zeros((len(u), k))
        rg = self._in_rg_region(u)
        for s in range(0, len(u), 2048):
            uu = u[s:s + 2048]
            W = self.partition_weights(uu)
            S = W.sum(axis=1)
            if np.any(self._i0):
                Wi = W[:, self._i0]
                Fi = np.einsum("ckn,mn->mck", self._A[self._i0], uu) + self._b[self._i0][None]
                num = np.einsum("mc,mck->mk", Wi, Fi)
            else:
                num = np.zeros((len(uu), k))
            with np.errstate(invalid="ignore", divide="ignore"):
                val = np.where(S[:, None] > 0, num / np.where(S > 0, S, 1.0)[:, None], 0.0)
            use_interp = rg[s:s + 2048] | (S <= 0)
            if np.any(use_interp) and self._interp is not None:
                val[use_interp] = self._interp(uu[use_interp])
            out[s:s + 2048] = val
        return out

    # diagnostics --------------------------------------------------------
    def lipschitz_constant(self):
        return _pairwise_lipschitz(self.nodes, self.values)

    def to_grid_csv(self, header_lines=()):
        lines = [f"# {h}" for h in header_lines]
        n, k = self.n, self.d - self.n
        lines.append(",".join([f"u{i + 1}" for i in range(n)] + [f"F{i + 1}" for i in range(k)] + ["D"]))
        for u, v, D in zip(self.nodes, self.values, self.D_nodes):
            lines.append(",".join(format(float(a), ".17g") for a in list(u) + list(v) + [D]))
        return "\n".join(lines) + "\n"

    def summary(self):
        return dict(self.metadata)


def _make_interpolator(u, v, n, k):
    if len(u) == 0:
        return None
    if n == 1:
        x = u[:, 0]

        def f(q):
            q = np.atleast_2d(q)[:, 0]
            return np.stack([np.interp(q, x, v[:, j]) for j in range(k)], axis=1)
        return f
    from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
    if len(u) <= n:
        near = NearestNDInterpolator(u, v)
        return lambda q: np.asarray(near(np.atleast_2d(q))).reshape(-1, k)
    lin = LinearNDInterpolator(u, v)
    near = NearestNDInterpolator(u, v)

    def f(q):
        q = np.atleast_2d(q)
        out = np.asarray(lin(q)).reshape(len(q), k)
        bad = ~np.all(np.isfinite(out), axis=1)
        if np.any(bad):
            out[bad] = np.asarray(near(q[bad])).reshape(-1, k)
        return out
    return f


def _pairwise_lipschitz(U, V):
    best = 0.0
    for s in range(0, len(U), 1024):
        du = np.sqrt(np.sum((U[s:s + 1024, None, :] - U[None, :, :]) ** 2, axis=-1))
        dv = np.sqrt(np.sum((V[s:s + 1024, None, :] - V[None, :, :]) ** 2, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(du > 0, dv / du, 0.0)
        best = max(best, float(ratio.max()))
    return best


def _distance_to_sets(points_list, queries):
    """For each query, distances to each point set (list of arrays)."""
    out = np.empty((len(points_list), len(queries)))
    for i, P in enumerate(points_list):
        d, _ = cKDTree(P).query(queries)
        out[i] = d
    return out


def build_graph(mu: DiscreteMeasure, tree: TreeDecomposition, params: StoppingParams | None = None,
                h_grid: float | None = None, max_level: int | None = None,
                extent: float = 2.5) -> GraphModel:
    """Assemble F over the grid L0 & 2.5 B0 from the Tree cubes."""
    p = params or tree.params
    if tree.empty or not tree.tree:
        raise DegenerateBase("empty tree: the root cube itself stops")
    lat, mun, n = tree.lattice, tree.mu, tree.n
    L0 = tree.L0
    b0, U0 = L0.base, L0.frame
    N0 = L0.normal_frame()
    z0, r0 = tree.z0, tree.r0
    tree_cubes = [lat.cubes[q] for q in tree.tree]
    pts = mun.points

    # d(x) for every atom
    d_atoms = np.full(len(mun), np.inf)
    for Q in tree_cubes:
        dist, _ = cKDTree(pts[Q.atoms]).query(pts)
        d_atoms = np.minimum(d_atoms, dist + Q.diam_BQ)
    finest = [lat.cubes[q] for q in tree.cubes if lat.cubes[q].level == lat.depth]
    res = max(4.0 * mun.resolution(), 0.0)
    # grid
    if max_level is None:
        max_level = 11 if n == 1 else (7 if n == 2 else 4)
    side = 2 * extent * r0
    target = h_grid if h_grid is not None else max(res / 2, 1e-12)
    m = int(min(max_level, max(1, math.ceil(math.log2(side / target)))))
    h = side / 2 ** m
    d_tol = max([Q.diam_BQ for Q in finest], default=0.0) + 2 * max(res, h)
    u0 = L0.coords(z0)[0]
    lo = u0 - extent * r0

    axes = [lo[k] + h * np.arange(2 ** m + 1) for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in mesh], axis=1)
    proj = [L0.coords(pts[Q.atoms]) for Q in tree_cubes]
    Dall = _distance_to_sets(proj, nodes) + np.array([Q.diam_BQ for Q in tree_cubes])[:, None]
    D_nodes = Dall.min(axis=0)
    D_eff = np.maximum(D_nodes - d_tol, 0.0)

    # R_G and its interpolant
    inR0 = np.zeros(len(mun), dtype=bool)
    inR0[tree.root.atoms] = True
    rg = np.nonzero(inR0 & (d_atoms <= d_tol))[0]
    rg_u = L0.coords(pts[rg])
    rg_v = (pts[rg] - b0) @ N0.T
    order = np.lexsort(tuple(pts[rg][:, k] for k in range(pts.shape[1] - 1, -1, -1))
                       + (-mun.weights[rg],) + tuple(rg_u[:, k] for k in range(n - 1, -1, -1)))
    rg_u, rg_v = rg_u[order], rg_v[order]
    key = np.round((rg_u - lo) / (1e-9 * h)).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    conflicts = len(rg_u) - len(first)
    first = np.sort(first)
    rg_u, rg_v = rg_u[first], rg_v[first]

    # Whitney cells via a min-pyramid over the closed cells
    Dg = D_eff.reshape((2 ** m + 1,) * n)
    mins = [None] * (m + 1)
    cur = Dg
    for k in range(n):
        sl0 = [slice(None)] * n
        sl1 = [slice(None)] * n
        sl0[k] = slice(0, -1)
        sl1[k] = slice(1, None)
        cur = np.minimum(cur[tuple(sl0)], cur[tuple(sl1)])
    mins[m] = cur
    for j in range(m - 1, -1, -1):
        c = mins[j + 1]
        for k in range(n):
            sl0 = [slice(None)] * n
            sl1 = [slice(None)] * n
            sl0[k] = slice(0, None, 2)
            sl1[k] = slice(1, None, 2)
            c = np.minimum(c[tuple(sl0)], c[tuple(sl1)])
        mins[j] = c
    slack = h * math.sqrt(n) / 2
    cells = []
    rg_mask = np.zeros((2 ** m,) * n, dtype=bool)
    stack = [(0, (0,) * n)]
    while stack:
        j, idx = stack.pop()
        sidej = side / 2 ** j
        diam = sidej * math.sqrt(n)
        mn = mins[j][idx]
        if 20 * diam <= mn - slack:
            cells.append(WhitneyCell(j, idx, lo + sidej * np.array(idx), sidej, True))
        elif j < m:
            for off in np.ndindex(*(2,) * n):
                stack.append((j + 1, tuple(2 * a + b for a, b in zip(idx, off))))
        elif mn <= 0:
            rg_mask[idx] = True
        else:
            cells.append(WhitneyCell(j, idx, lo + sidej * np.array(idx), sidej, False))
    cells.sort(key=lambda c: (c.level, c.index))

    # I0, companions, affine pieces
    dz0 = float(np.linalg.norm(L0.residual(z0)[0]))
    tree_ids = list(tree.tree)
    for c in cells:
        gap = _box_distance(u0, c.lo, c.side)
        c.in_I0 = math.hypot(dz0, gap) < 1.5 * r0
        if not c.in_I0:
            continue
        Dc = _distance_to_sets(proj, c.center[None, :])[:, 0] + np.array([Q.diam_BQ for Q in tree_cubes])
        q = tree_ids[int(np.argmin(Dc))]
        P = lat.cubes[q]
        while P.diam_BQ < c.diam(n) and P.id != tree.root.id and P.parent is not None:
            P = lat.cubes[P.parent]
        c.companion = P.id
        c.A, c.b = _affine_piece(tree.planes[P.id], b0, U0, N0)
    model = GraphModel(tree, b0, U0, N0, lo, side, m, cells, rg_mask, d_atoms, D_nodes, d_tol, rg,
                       rg_u, rg_v, conflicts)
    model.metadata.update(_graph_checks(model, mun, tree, p))
    return model


def _box_distance(u, lo, side):
    gap = np.maximum(np.maximum(lo - u, u - (lo + side)), 0.0)
    return float(np.linalg.norm(gap))


def _affine_piece(L: AffinePlane, b0, U0, N0):
    """F_i(u) = A u + b whose graph over L0 is the plane L."""
    M = U0 @ L.frame.T  # n x n
    Minv = np.linalg.inv(M)
    # point of L over u: y = bL + UL^T v with U0 (y - b0) = u
    # v = Minv (u - U0 (bL - b0)); F = N0 (y - b0)
    NU = N0 @ L.frame.T
    A = NU @ Minv
    b = N0 @ (L.base - b0) - A @ (U0 @ (L.base - b0))
    return A, b


def _graph_checks(model: GraphModel, mun: DiscreteMeasure, tree: TreeDecomposition, p: StoppingParams):
    n = model.n
    z0, r0 = tree.z0, tree.r0
    out = {}
    out["lipschitz"] = model.lipschitz_constant()
    out["lipschitz_over_theta"] = out["lipschitz"] / p.theta
    # support in 1.9 B0
    amb = model.b0 + model.nodes @ model.U0
    outside = np.linalg.norm(amb - z0, axis=1) >= 1.9 * r0
    out["support_violation"] = float(np.abs(model.values[outside]).max()) if np.any(outside) else 0.0
    # interpolation of R_G atoms
    if len(model.rg_atoms):
        u = tree.L0.coords(mun.points[model.rg_atoms])
        v = (mun.points[model.rg_atoms] - model.b0) @ model.N0.T
        out["rg_interpolation_error"] = float(np.abs(model.evaluate(u) - v).max())
    else:
        out["rg_interpolation_error"] = 0.0
    out["rg_conflicts"] = int(model.conflicts)
    w = mun.weights
    mR0 = float(np.sum(w[tree.root.atoms]))
    out["mass_RG"] = float(np.sum(w[model.rg_atoms]))
    out["mass_R0"] = mR0
    out["RG_fraction"] = out["mass_RG"] / mR0 if mR0 else 0.0
    out["d_tol"] = model.d_tol
    out["h_grid"] = model.h_grid
    out["n_cells"] = len(model.cells)
    out["n_I0"] = int(sum(c.in_I0 for c in model.cells))
    out["n_resolution_limited"] = int(sum(not c.accepted for c in model.cells))
    # Whitney property on accepted cells: 5 diam <= D <= 50 diam on 15 J
    D_eff = np.maximum(model.D_nodes - model.d_tol, 0.0)
    tol = model.h_grid * math.sqrt(n)
    worst_lo, worst_hi = math.inf, 0.0
    for c in model.cells:
        if not c.accepted:
            continue
        sel = np.all(np.abs(model.nodes - c.center) <= 7.5 * c.side, axis=1)
        if not np.any(sel):
            continue
        dm = c.diam(n)
        worst_lo = min(worst_lo, float((D_eff[sel].min() + tol) / dm))
        worst_hi = max(worst_hi, float((D_eff[sel].max() - tol) / dm))
    out["whitney_min_ratio"] = worst_lo if worst_lo < math.inf else None
    out["whitney_max_ratio"] = worst_hi
    out["whitney_ok"] = bool((worst_lo >= 5 or worst_lo == math.inf) and worst_hi <= 50)
    # I0 cells: diam <= 0.2 r0 and 3J inside 1.9 B0
    dz0 = float(np.linalg.norm(tree.L0.residual(z0)[0]))
    u0 = tree.L0.coords(z0)[0]
    ok = True
    for c in model.cells:
        if not c.in_I0:
            continue
        far = np.linalg.norm(np.maximum(np.abs(c.center - 1.5 * c.side - u0), np.abs(c.center + 1.5 * c.side - u0)))
        if c.diam(n) > 0.2 * r0 or math.hypot(dz0, far) >= 1.9 * r0:
            ok = False
    out["I0_ok"] = ok
    # Lipschitz-with-d property on atom pairs of R0
    idx = tree.root.atoms
    if len(idx) > 1:
        P = mun.points[idx]
        pu = tree.L0.coords(P)
        pv = (P - model.b0) @ model.N0.T
        dd = model.d_atoms[idx]
        worst = 0.0
        for s in range(0, len(idx), 512):
            du = np.linalg.norm(pu[s:s + 512, None] - pu[None], axis=-1)
            dv = np.linalg.norm(pv[s:s + 512, None] - pv[None], axis=-1)
            den = p.theta * du + dd[s:s + 512, None] + dd[None]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(den > 0, dv / den, 0.0)
            worst = max(worst, float(ratio.max()))
        out["graph_distance_constant"] = worst
    return out


# ----------------------------------------------------------------------
# approximating measure nu


@dataclass
class ApproximantNu:
    measure: DiscreteMeasure
    centers: np.ndarray
    radii: np.ndarray
    coefficients: np.ndarray
    in_K0: np.ndarray
    sigma_nodes: np.ndarray
    sigma_weights: np.ndarray
    rg_atoms: np.ndarray
    ck_bound: float
    metadata: dict = field(default_factory=dict)

    def h_tilde(self, y):
        """(points x balls) unnormalized bumps: 1 on 2B_k, 0 off 3B_k."""
        y = np.atleast_2d(y)
        d = np.linalg.norm(y[:, None, :] - self.centers[None], axis=-1)
        return 1.0 - _smoothstep(d / self.radii[None] - 2.0)

    def h(self, y):
        H = self.h_tilde(y)
        return H / np.maximum(1.0, H.sum(axis=1))[:, None]

    def ad_scan(self, n, samples=1000, r_lo=None, r_hi=None, centers=None, seed=0):
        rng = np.random.default_rng(seed)
        pts = self.measure.points if centers is None else centers
        xi = rng.integers(0, len(pts), samples)
        lr = rng.uniform(math.log(r_lo), math.log(r_hi), samples)
        ratios = np.array([self.measure.ball_mass(pts[i], math.exp(l)) / math.exp(l) ** n
                           for i, l in zip(xi, lr)])
        return ratios


def build_nu(mu: DiscreteMeasure, graph: GraphModel, tree: TreeDecomposition,
             params: StoppingParams | None = None, ad_samples: int = 1000, ad_bound: float = 100.0,
             seed: int = 0) -> ApproximantNu:
    """nu = mu|R_G + sum_k c_k h_k sigma, realized as a discrete measure."""
    p = params or tree.params
    mun = tree.mu
    n, d = graph.n, graph.d
    eta = p.eta
    # covering points and sigma quadrature, cell by cell
    zs, rks, k0 = [], [], []
    su, sw = [], []
    per = max(1, int(round(1.0 / (0.5 * eta))))
    sub = max(1, int(round(2.0 / eta)))
    for c in graph.cells:
        sp = c.side / per
        g1 = (np.arange(per) + 0.5) * sp
        Z = c.lo + np.stack([a.reshape(-1) for a in np.meshgrid(*([g1] * n), indexing="ij")], axis=1)
        zs.append(Z)
        rks.append(np.full(len(Z), eta * c.side))
        k0.append(np.full(len(Z), c.in_I0))
        ss = c.side / sub
        g2 = (np.arange(sub) + 0.5) * ss
        S = c.lo + np.stack([a.reshape(-1) for a in np.meshgrid(*([g2] * n), indexing="ij")], axis=1)
        su.append(S)
        sw.append(np.full(len(S), ss ** n))
    h = graph.h_grid
    for idx in zip(*np.nonzero(graph.rg_cell_mask)):
        lo = graph.lo + h * np.array(idx)
        ss = h / sub
        g2 = (np.arange(sub) + 0.5) * ss
        S = lo + np.stack([a.reshape(-1) for a in np.meshgrid(*([g2] * n), indexing="ij")], axis=1)
        su.append(S)
        sw.append(np.full(len(S), ss ** n))
    if zs:
        Zp = np.vstack(zs)
        rk = np.concatenate(rks)
        inK0 = np.concatenate(k0).astype(bool)
    else:
        Zp, rk, inK0 = np.zeros((0, n)), np.zeros(0), np.zeros(0, bool)
    Su = np.vstack(su) if su else np.zeros((0, n))
    Sw = np.concatenate(sw) if sw else np.zeros(0)
    step = max(float(Sw.min() ** (1 / n)) / 2 if len(Sw) else h, 1e-12)
    Sx = graph.lift(Su) if len(Su) else np.zeros((0, d))
    if len(Su):
        Sw = Sw * graph.area_element(Su, step)
    zk = graph.lift(Zp) if len(Zp) else np.zeros((0, d))

    # h_k on sigma nodes and on atoms of mu (sparse via kd-trees)
    K = len(zk)
    sig_tree = cKDTree(Sx) if len(Sx) else None
    H_sigma = _sparse_bumps(zk, rk, Sx, sig_tree)
    H_mu = _sparse_bumps(zk, rk, mun.points, mun.tree)
    tot_sigma = _row_totals(H_sigma, len(Sx))
    tot_mu = _row_totals(H_mu, len(mun))
    ck = np.full(K, tree.c0)
    r_floor = 2.0 * mun.resolution()
    int_sigma = np.zeros(K)
    int_mu = np.zeros(K)
    for k in range(K):
        js, vs = H_sigma[k]
        vs = vs / np.maximum(1.0, tot_sigma[js])
        int_sigma[k] = float(np.sum(vs * Sw[js]))
        jm, vm = H_mu[k]
        vm = vm / np.maximum(1.0, tot_mu[jm])
        int_mu[k] = float(np.sum(vm * mun.weights[jm]))
        if inK0[k]:
            if rk[k] < r_floor:
                # below the sampling resolution: compare masses at the floor radius
                rad = 3 * r_floor
                ms = _ball_sum(sig_tree, Sx, Sw, zk[k], rad)
                ck[k] = mun.ball_mass(zk[k], rad) / ms if ms > 0 else 0.0
            else:
                ck[k] = int_mu[k] / int_sigma[k] if int_sigma[k] > 0 else 0.0
    # nu weights on sigma nodes
    wn = np.zeros(len(Sx))
    for k in range(K):
        js, vs = H_sigma[k]
        vs = vs / np.maximum(1.0, tot_sigma[js])
        wn[js] += ck[k] * vs * Sw[js]
    keep = wn > 0
    rg = graph.rg_atoms
    P = np.vstack([mun.points[rg], Sx[keep]])
    W = np.concatenate([mun.weights[rg], wn[keep]])
    nu = DiscreteMeasure(P, W) if len(W) else None
    pos = ck[inK0]
    pos = pos[pos > 0]
    C = float(max(pos.max(), 1.0 / pos.min())) if len(pos) else 1.0
    model = ApproximantNu(nu, zk, rk, ck, inK0, Sx, Sw, rg, C)
    model.metadata.update({"n_balls": K, "n_K0": int(inK0.sum()), "n_sigma": len(Sx),
                           "ck_bound": C, "ck_zero": int(np.sum(ck[inK0] <= 0)),
                           "eta": eta, "ck_resolution_floor": r_floor})
    if nu is not None and ad_samples:
        r0 = tree.r0
        amb = nu.points
        sel = np.linalg.norm(amb - tree.z0, axis=1) < 1.5 * r0
        centers = amb[sel] if np.any(sel) else amb
        r_lo = max(4 * graph.h_grid, 4 * mun.resolution())
        ratios = model.ad_scan(n, ad_samples, r_lo, r0, centers, seed)
        lo_, hi_ = float(ratios.min()), float(ratios.max())
        model.metadata.update({"ad_min": lo_, "ad_max": hi_,
                               "ad_ratio": hi_ / lo_ if lo_ > 0 else math.inf,
                               "ad_r_range": [r_lo, r0], "ad_bound": ad_bound,
                               "ad_ok": bool(lo_ > 0 and math.isfinite(hi_) and hi_ / lo_ <= ad_bound)})
    return model


def _sparse_bumps(centers, radii, pts, tree):
    out = []
    for z, r in zip(centers, radii):
        if tree is None:
            out.append((np.zeros(0, np.int64), np.zeros(0)))
            continue
        js = np.asarray(tree.query_ball_point(z, 3 * r), dtype=np.int64)
        if len(js):
            dist = np.linalg.norm(pts[js] - z, axis=1)
            v = 1.0 - _smoothstep(dist / r - 2.0)
            k = v > 0
            js, v = js[k], v[k]
        else:
            v = np.zeros(0)
        out.append((js, v))
    return out


def _ball_sum(tree, pts, w, z, rad):
    if tree is None:
        return 0.0
    js = np.asarray(tree.query_ball_point(z, rad), dtype=np.int64)
    if len(js) == 0:
        return 0.0
    js = js[np.linalg.norm(pts[js] - z, axis=1) < rad]
    return float(np.sum(w[js]))


def _row_totals(H, N):
    tot = np.zeros(N)
    for js, vs in H:
        np.add.at(tot, js, vs)
    return tot


# ----------------------------------------------------------------------
# Dorronsoro comparison


@dataclass
class DorronsoroResult:
    lhs: float
    rhs: float
    ratio: float
    metadata: dict = field(default_factory=dict)


def dorronsoro_check(graph: GraphSurface, grid: ScaleGrid | None = None, window=None,
                     spacing: float | None = None, center_stride: int = 1,
                     normalization: str = "homogeneous") -> DorronsoroResult:
    """Compare int int beta_{sigma,1}(x, r)^2 dr/r dsigma with ||grad F||^2_{L^2}.

    sigma is the graph quadrature over ``window`` (a (lo, hi) box in base
    coordinates, default the graph's own box). With ``normalization=
    "homogeneous"`` the coefficient is divided by r^n, otherwise by
    sigma(B(x, 3r)); both sums are always reported. The right side uses
    central differences of half-step offsets, which are exact on affine
    pieces and so lose nothing at kinks of F.
    """
    if normalization not in ("homogeneous", "mass"):
        raise ValueError("normalization must be 'homogeneous' or 'mass'")
    n = graph.n
    h = graph.h_grid if spacing is None else spacing
    if window is None:
        lo = np.asarray(graph.lo, dtype=float)
        hi = np.asarray(graph.hi, dtype=float) if hasattr(graph, "hi") else lo + graph.side
    else:
        lo, hi = (np.atleast_1d(np.asarray(a, dtype=float)) for a in window)
    m = np.maximum(np.round((hi - lo) / h).astype(int), 1)
    steps = (hi - lo) / m
    axes = [lo[k] + (np.arange(m[k]) + 0.5) * steps[k] for k in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    U = np.stack([g.reshape(-1) for g in mesh], axis=1)
    cell = float(np.prod(steps))
    G2 = np.zeros(len(U))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 0.5 * steps[k]
        g = (graph.evaluate(U + e) - graph.evaluate(U - e)) / steps[k]
        G2 += np.sum(g ** 2, axis=1)
    rhs = float(np.sum(G2) * cell)
    Sw = cell * graph.area_element(U, float(np.min(steps)) / 2)
    X = graph.lift(U)
    sigma = DiscreteMeasure(X, Sw)
    if grid is None:
        ext = float(np.min(hi - lo))
        grid = ScaleGrid(4 * float(np.max(steps)), ext / 2)
    radii = grid.radii
    centers = np.arange(0, len(U), max(1, center_stride))
    lhs_h = lhs_m = 0.0
    for i in centers:
        sh = sm = 0.0
        for r in radii:
            b = beta_p(sigma, X[i], r, 1, n)
            if not b.defined:
                continue
            sm += b.value ** 2
            sh += (b.value * b.metadata["mass_3B"] / r ** n) ** 2
        wgt = Sw[i] * max(1, center_stride) * grid.weight
        lhs_h += sh * wgt
        lhs_m += sm * wgt
    lhs = lhs_h if normalization == "homogeneous" else lhs_m
    ratio = lhs / rhs if rhs > 0 else (math.nan if lhs > 0 else 0.0)
    return DorronsoroResult(lhs, rhs, ratio, {"nodes": len(U), "centers": len(centers),
                                              "radii": len(radii), "spacing": float(np.max(steps)),
                                              "normalization": normalization,
                                              "lhs_homogeneous": lhs_h, "lhs_mass_normalized": lhs_m,
                                              "grid": grid.to_dict()})


# ----------------------------------------------------------------------
# full pipeline


@dataclass
class PipelineResult:
    lattice: CubeLattice
    root: Cube
    hypothesis: HypothesisReport
    tree: TreeDecomposition
    graph: GraphModel | None
    nu: ApproximantNu | None
    warnings: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {"root": self.root.id, "root_level": self.root.level,
               "hypothesis": self.hypothesis.to_dict(),
               "n_tree": len(self.tree.tree), "n_stop": len(self.tree.stop),
               "empty_tree": self.tree.empty, "budgets": self.tree.budgets,
               "diagnostics": self.tree.diagnostics, "warnings": list(self.warnings)}
        if self.graph is not None:
            out["graph"] = self.graph.summary()
        if self.nu is not None:
            out["nu"] = {k: v for k, v in self.nu.metadata.items()}
        return out


def run_pipeline(mu: DiscreteMeasure, params: StoppingParams | None = None, n: int = 1,
                 A0: float = 4.0, C0: float = 7.0, depth: int | None = None,
                 grid: ScaleGrid | None = None, root_level: int | None = None,
                 C_sdb: float = 1e4, h_grid: float | None = None, with_nu: bool = True,
                 ad_samples: int = 1000, lattice: CubeLattice | None = None) -> PipelineResult:
    from flatscan.lattice import build_lattice
    p = params or StoppingParams()
    lat = lattice or build_lattice(mu, A0, C0, depth)
    R0 = select_root(mu, lat, C_sdb, root_level)
    grid = grid or pipeline_grid(mu)
    hyp = check_main_lemma_hypothesis(mu, lat, R0, p.eps0, grid, n, C_sdb)
    warnings = []
    if not hyp.holds:
        warnings.append("hypothesis fails: mu(R0 minus G) exceeds eps0 mu(3B_R0)")
    if not hyp.strongly_doubling:
        warnings.append("root cube is not strongly doubling")
    tree = build_tree(mu, lat, R0, p, grid, n, good=hyp.good)
    graph = nu = None
    if tree.empty:
        warnings.append("empty tree: the root cube stops")
    else:
        graph = build_graph(mu, tree, p, h_grid)
        if with_nu:
            nu = build_nu(mu, graph, tree, p, ad_samples=ad_samples)
    return PipelineResult(lat, R0, hyp, tree, graph, nu, warnings)
