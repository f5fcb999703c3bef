"""Flatness coefficients beta_p, alpha and alpha_p, square functions over a
geometric scale grid, and the good-point set.

Normalized coefficients whose normalizing ball ``B(x, 3r)`` carries no mass
are returned with ``defined=False`` and ``value = nan``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from flatscan import _lp
from flatscan.measure import AffinePlane, Ball, DiscreteMeasure, canonical_sign, flat_quadrature
from flatscan.transport import wasserstein

KINDS = ("beta_p", "beta_h_p", "alpha", "alpha_h", "alpha_p")


@dataclass
class CoefficientResult:
    kind: str
    value: float
    ball: Ball
    plane: AffinePlane | None = None
    constant: float = 0.0
    p: float | None = None
    residual: float = 0.0
    defined: bool = True
    approximate: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    plan: object = None
    potentials: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "x": [float(v) for v in self.ball.center],
            "r": self.ball.radius,
            "value": None if not self.defined else float(self.value),
            "defined": self.defined,
            "witness": {
                "plane": None if self.plane is None else self.plane.to_dict(),
                "constant": float(self.constant),
            },
            "residuals": float(self.residual),
            "approximate": dict(self.approximate),
        }
        if self.p is not None:
            out["p"] = self.p
        out["metadata"] = {k: v for k, v in self.metadata.items()
                           if isinstance(v, (int, float, str, bool))}
        return out


def _undefined(kind, B, p=None) -> CoefficientResult:
    return CoefficientResult(kind, math.nan, B, p=p, defined=False,
                             metadata={"error": "EMPTY_BALL"})


# ----------------------------------------------------------------------
# cutoff profile and scale grid


class CutoffProfile:
    """phi(x) = min(1, (3 - |x|)_+^2): equal to 1 on B(0, 2), supported in B(0, 3)."""

    @staticmethod
    def radial(s):
        s = np.asarray(s, dtype=float)
        return np.minimum(1.0, np.maximum(3.0 - s, 0.0) ** 2)

    @staticmethod
    def radial_slope(s):
        s = np.asarray(s, dtype=float)
        t = np.maximum(3.0 - s, 0.0)
        return np.where(t < 1.0, 2.0 * t, 0.0)

    def __call__(self, x):
        x = np.atleast_2d(x)
        return self.radial(np.linalg.norm(x, axis=1))

    def on_ball(self, pts, B: Ball):
        """phi_B(y) = phi((y - z(B)) / r(B))."""
        pts = np.atleast_2d(pts)
        return self.radial(np.linalg.norm(pts - B.center, axis=1) / B.radius)


CUTOFF = CutoffProfile()


@dataclass(frozen=True)
class ScaleGrid:
    """Radii r_j = r_max q^j, j = 0..J, with r_J >= r_min."""

    r_min: float
    r_max: float
    q: float = 2 ** -0.5

    def __post_init__(self):
        if not (0 < self.q < 1):
            raise ValueError("ratio q must lie in (0, 1)")
        if not (0 < self.r_min <= self.r_max):
            raise ValueError("need 0 < r_min <= r_max")

    @property
    def radii(self) -> np.ndarray:
        J = int(math.floor(math.log(self.r_max / self.r_min) / math.log(1 / self.q) + 1e-12))
        return self.r_max * self.q ** np.arange(J + 1)

    @property
    def weight(self) -> float:
        return math.log(1 / self.q)

    def integrate(self, values) -> float:
        return float(math.fsum(np.asarray(values, dtype=float))) * self.weight

    def truncated(self, upper: float) -> "ScaleGrid":
        """Same ratio, largest radius capped at ``upper`` (kept on the original lattice)."""
        r = self.radii
        keep = r[r <= upper * (1 + 1e-12)]
        if len(keep) == 0:
            return ScaleGrid(self.r_min, self.r_min, self.q)
        return ScaleGrid(self.r_min, float(keep[0]), self.q)

    @classmethod
    def for_measure(cls, mu: DiscreteMeasure, q: float = 2 ** -0.5, nn_factor: float = 4.0,
                    r_max: float | None = None) -> "ScaleGrid":
        res = mu.resolution()
        diam = mu.diameter_bound() if r_max is None else r_max
        if res <= 0 or diam <= 0:
            return cls(1.0, 1.0, q)
        r_min = min(nn_factor * res, diam)
        return cls(r_min, diam, q)

    def to_dict(self):
        return {"r_min": self.r_min, "r_max": self.r_max, "q": self.q}


# ----------------------------------------------------------------------
# plane fitting


def _ball_atoms(mu: DiscreteMeasure, x, r):
    idx = mu.ball_indices(x, r)
    return mu.points[idx], mu.weights[idx]


def weighted_pca(pts, w, n, fallback_center, tie_pts=None, tie_w=None):
    """Eigen-decomposition of the weighted covariance.

    Returns (centroid, eigenvectors as rows sorted by decreasing eigenvalue).
    Eigenvalues that tie (for instance in a ball holding one or two atoms)
    leave the basis of their eigenspace arbitrary; each tied cluster is then
    re-diagonalized by the second moment of the secondary set ``tie_pts``
    about the same centroid, which keeps every downstream choice (plane,
    tilt directions, bin frame) covariant under rigid motions.
    """
    d = len(fallback_center)
    if len(pts) == 0:
        return np.asarray(fallback_center, dtype=float), np.eye(d)
    W = float(np.sum(w))
    c = (w @ pts) / W
    Y = pts - c
    S = (Y * w[:, None]).T @ Y / W
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(-vals, kind="stable")
    vals, V = vals[order], vecs[:, order].T
    if tie_pts is not None and len(tie_pts) and d > 1:
        # relative tie, plus an absolute floor for rounding noise in c
        tol = 1e-10 * max(float(vals[0]), 0.0) + (1e-12 * (1.0 + float(np.abs(c).max()))) ** 2
        Zall = np.asarray(tie_pts) - c
        tw = np.asarray(tie_w, dtype=float)
        tw = tw / max(float(np.sum(tw)), 1e-300)
        start = 0
        while start < d:
            stop = start + 1
            while stop < d and vals[start] - vals[stop] <= tol:
                stop += 1
            if stop - start > 1:
                G = V[start:stop]
                Z = Zall @ G.T
                v2, e2 = np.linalg.eigh((Z * tw[:, None]).T @ Z)
                V[start:stop] = e2[:, np.argsort(-v2, kind="stable")].T @ G
            start = stop
    return c, canonical_sign(V)


def _residual_sq(plane: AffinePlane, pts, w):
    if len(pts) == 0:
        return 0.0
    d = plane.dist(pts)
    return float(np.sum(w * d * d))


def _clamp_to_ball(plane: AffinePlane, B: Ball, frac: float = 0.999) -> AffinePlane:
    """Translate the plane (along its normal) so that it meets the open ball."""
    res = plane.residual(B.center)[0]
    dist = float(np.linalg.norm(res))
    if dist < B.radius:
        return plane
    return plane.shifted(res * (1.0 - frac * B.radius / dist))


def _l1_refine(plane: AffinePlane, pts, w, n, iters=60):
    """Iteratively reweighted PCA: monotone descent for sum w dist(y, L)."""
    best = plane
    best_val = float(np.sum(w * plane.dist(pts))) if len(pts) else 0.0
    if len(pts) <= n:
        return best, best_val
    cur = plane
    floor = 1e-12 * (1.0 + float(np.max(np.abs(pts))))
    for _ in range(iters):
        dist = cur.dist(pts)
        ww = w / np.maximum(dist, floor)
        c, V = weighted_pca(pts, ww, n, plane.base)
        cand = AffinePlane(c, V[:n], orthonormalize=False)
        val = float(np.sum(w * cand.dist(pts)))
        if val < best_val * (1 - 1e-13):
            best, best_val, cur = cand, val, cand
        else:
            break
    return best, best_val


def _beta_core(mu, x, r, p, n):
    x = np.asarray(x, dtype=float)
    B = Ball(x, r)
    pts, w = _ball_atoms(mu, x, r)
    c, V = weighted_pca(pts, w, n, x, *_ball_atoms(mu, x, 3 * r))
    plane = AffinePlane(c, V[:n], orthonormalize=False)
    plane = _clamp_to_ball(plane, B)
    if p == 2:
        num = _residual_sq(plane, pts, w) / r ** 2
        return B, plane, num, {}
    plane, val = _l1_refine(plane, pts, w, n)
    return B, plane, val / r, {"plane_search": "reweighted descent from the p=2 plane"}


def beta_p(mu: DiscreteMeasure, x, r: float, p: int = 2, n: int = 1) -> CoefficientResult:
    """beta_{mu,p}(x, r): L^p mean distance in B(x, r) to the best n-plane,
    normalized by mu(B(x, 3r))."""
    if p not in (1, 2):
        raise ValueError("only p = 1 and p = 2 are implemented")
    x = np.asarray(x, dtype=float)
    m3 = mu.ball_mass(x, 3 * r)
    if m3 == 0:
        return _undefined("beta_p", Ball(x, r), p)
    B, plane, num, approx = _beta_core(mu, x, r, p, n)
    value = (num / m3) ** (1.0 / p)
    return CoefficientResult("beta_p", value, B, plane, p=p, approximate=approx,
                             metadata={"mass_3B": m3})


def beta_homogeneous(mu: DiscreteMeasure, x, r: float, p: int = 2, n: int = 1) -> CoefficientResult:
    """beta^h_{mu,p}(x, r): same numerator, normalized by r^n."""
    if p not in (1, 2):
        raise ValueError("only p = 1 and p = 2 are implemented")
    x = np.asarray(x, dtype=float)
    B, plane, num, approx = _beta_core(mu, x, r, p, n)
    value = (num / r ** n) ** (1.0 / p)
    m3 = mu.ball_mass(x, 3 * r)
    if m3 > 0:
        rel = (num / m3) ** (1.0 / p) * (m3 / r ** n) ** (1.0 / p)
        assert abs(rel - value) <= 1e-10 * max(1.0, value), "homogeneous rescaling identity"
    return CoefficientResult("beta_h_p", value, B, plane, p=p, approximate=approx,
                             metadata={"mass_3B": m3})


# ----------------------------------------------------------------------
# alpha


@dataclass(frozen=True)
class PlaneSearchConfig:
    """Candidate planes for alpha and alpha_p.

    K : number of perturbations of the principal plane (taken in +/- pairs)
    spacing_factor : quadrature spacing delta = spacing_factor * r(B)
    atom_cap : above this many atoms in the ball, atoms are aggregated into
        mass-centroid bins of side ``delta`` (result flagged approximate)
    """

    K: int = 12
    spacing_factor: float = 1 / 24
    atom_cap: int = 300
    min_tilt: float = 0.01
    max_tilt: float = 0.5


def _candidate_planes(c, V, n, beta2, r, cfg: PlaneSearchConfig):
    base = AffinePlane(c, V[:n], orthonormalize=False)
    out = [base]
    d = V.shape[0]
    if cfg.K <= 0 or n == d:
        return out
    t = float(np.clip(beta2, cfg.min_tilt, cfg.max_tilt))
    cands = []
    for s in (1.0, 0.5, 2.0, 0.25, 4.0):
        for a in range(n):
            for b in range(n, d):
                for sign in (1.0, -1.0):
                    F = np.array(V[:n])
                    F[a] = F[a] + sign * s * t * V[b]
                    cands.append(AffinePlane(c, F))
        for b in range(n, d):
            for sign in (1.0, -1.0):
                cands.append(AffinePlane(c + sign * s * t * r * 0.5 * V[b], V[:n],
                                         orthonormalize=False))
    return out + cands[:cfg.K]


def _aggregate(pts, w, center, V, size, n):
    """Mass-centroid binning in the eigenbasis frame centred at ``center``.

    Along the first ``n`` (tangent) axes the bins are the cells
    [k size, (k + 1) size), the same cells whose midpoints carry the flat
    quadrature nodes; along the normal axes they are centred on zero.
    """
    coords = (pts - center) @ V.T
    keys = np.empty(coords.shape, dtype=np.int64)
    keys[:, :n] = np.floor(coords[:, :n] / size)
    keys[:, n:] = np.round(coords[:, n:] / size)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    nb = inv.max() + 1
    W = np.bincount(inv, weights=w, minlength=nb)
    P = np.stack([np.bincount(inv, weights=w * pts[:, k], minlength=nb) for k in range(pts.shape[1])], 1)
    return P / W[:, None], W


def _prepare_atoms(pts, w, center, V, r, cfg, approx, n=1):
    """Return (points, weights, spacing); the spacing grows with the bins."""
    size = cfg.spacing_factor * r
    if len(pts) <= cfg.atom_cap:
        return pts, w, size
    P, W = _aggregate(pts, w, center, V, size, n)
    while len(W) > cfg.atom_cap:
        size *= 2.0
        P, W = _aggregate(pts, w, center, V, size, n)
    approx["aggregated"] = f"{len(pts)} atoms binned to {len(W)} (bin {size:.3g})"
    return P, W, size


def alpha(mu: DiscreteMeasure, B: Ball, n: int = 1, search: PlaneSearchConfig | None = None,
          planes: list[AffinePlane] | None = None) -> CoefficientResult:
    """alpha_mu(B) = inf over c >= 0 and n-planes L of F_B(mu, c H^n|L) / (r mu(3B)).

    The minimum over c is solved exactly inside one linear program; the
    minimum over planes is taken over a finite candidate family (or over the
    explicit ``planes``), so the value is an upper bound for the infimum.
    """
    cfg = search or PlaneSearchConfig()
    x, r = B.center, B.radius
    m3 = mu.ball_mass(x, 3 * r)
    if m3 == 0:
        return _undefined("alpha", B)
    pts, w = _ball_atoms(mu, x, r)
    c, V = weighted_pca(pts, w, n, x, *_ball_atoms(mu, x, 3 * r))
    if planes is None:
        beta2 = math.sqrt(_residual_sq(AffinePlane(c, V[:n], orthonormalize=False), pts, w)
                          / (r * r * m3)) if len(pts) else 0.0
        planes = _candidate_planes(c, V, n, beta2, r, cfg)
    if len(pts) == 0:
        return CoefficientResult("alpha", 0.0, B, planes[0], 0.0, metadata={"mass_3B": m3})
    approx = {}
    P, W, delta = _prepare_atoms(pts, w, x, V, r, cfg, approx, n)
    best = None
    for L in planes:
        Q = flat_quadrature(L, B, delta, extent=1.0)
        nodes = np.vstack([P, Q.nodes])
        m = np.concatenate([W, np.zeros(len(Q.nodes))])
        q = np.concatenate([np.zeros(len(P)), Q.weights])
        rho = r - np.linalg.norm(nodes - x, axis=1)
        lp = _lp.flat_minimum(nodes, m, q, rho, center=x, scale=r)
        if best is None or lp.value < best[0].value * (1 - 1e-12):
            best = (lp, L, len(Q.nodes))
    lp, L, nq = best
    value = lp.value / (r * m3)
    return CoefficientResult("alpha", value, B, L, lp.c, residual=lp.residual,
                             approximate=approx,
                             metadata={"mass_3B": m3, "spacing": delta, "quadrature_nodes": nq,
                                       "candidates": len(planes), "lp_rounds": lp.iterations},
                             potentials=lp.potentials)


def alpha_homogeneous(mu: DiscreteMeasure, x, r: float, n: int = 1,
                      search: PlaneSearchConfig | None = None) -> CoefficientResult:
    """alpha^h(x, r) = (mu(B(x, 3r)) / r^n) * alpha(B(x, r))."""
    B = Ball(x, r)
    res = alpha(mu, B, n, search)
    if not res.defined:
        res.kind = "alpha_h"
        return res
    theta = res.metadata["mass_3B"] / r ** n
    return replace(res, kind="alpha_h", value=theta * res.value,
                   metadata={**res.metadata, "alpha": res.value, "density_3B": theta})


def alpha_p(mu: DiscreteMeasure, B: Ball, p: int = 2, n: int = 1,
            search: PlaneSearchConfig | None = None, spacing: float | None = None,
            planes: list[AffinePlane] | None = None) -> CoefficientResult:
    """alpha_{mu,p}(B) = inf_L W_p(phi_B mu, a phi_B H^n|L) / (r mu(3B)^(1/p)),
    over planes L meeting B, with a = int phi_B dmu / int phi_B dH^n|L."""
    if p not in (1, 2):
        raise ValueError("only p = 1 and p = 2 are implemented")
    cfg = search or PlaneSearchConfig()
    x, r = B.center, B.radius
    m3 = mu.ball_mass(x, 3 * r)
    if m3 == 0:
        return _undefined("alpha_p", B, p)
    idx3 = mu.ball_indices(x, 3 * r)
    pts3, w3 = mu.points[idx3], mu.weights[idx3]
    phi_mu = w3 * CUTOFF.on_ball(pts3, B)
    keep = phi_mu > 0
    pts3, phi_mu = pts3[keep], phi_mu[keep]
    if len(phi_mu) == 0:
        return _undefined("alpha_p", B, p)
    pts, w = _ball_atoms(mu, x, r)
    c, V = weighted_pca(pts, w, n, x, pts3, phi_mu)
    if planes is None:
        beta2 = math.sqrt(_residual_sq(AffinePlane(c, V[:n], orthonormalize=False), pts, w)
                          / (r * r * m3)) if len(pts) else 0.0
        planes = _candidate_planes(c, V, n, beta2, r, cfg)
    planes = [_clamp_to_ball(L, B) for L in planes]
    approx = {}
    S, Sw, size = _prepare_atoms(pts3, phi_mu, x, V, r, cfg, approx, n)
    delta = spacing if spacing is not None else size
    best = None
    for L in planes:
        Q = flat_quadrature(L, B, delta)
        tw = Q.weights * CUTOFF.on_ball(Q.nodes, B)
        k = tw > 0
        T, tw = Q.nodes[k], tw[k]
        a_BL = float(np.sum(phi_mu)) / float(np.sum(tw))
        tgt = tw * a_BL
        tgt *= float(np.sum(Sw)) / float(np.sum(tgt))
        res = wasserstein((S, Sw), (T, tgt), p)
        if best is None or res.value < best[0].value * (1 - 1e-12):
            best = (res, L, a_BL, T, tgt)
    res, L, a_BL, T, tgt = best
    value = res.value / (r * m3 ** (1.0 / p))
    return CoefficientResult("alpha_p", value, B, L, a_BL, p=p,
                             residual=res.metadata.get("marginal_error", 0.0),
                             approximate=approx, plan=res.plan,
                             metadata={"mass_3B": m3, "spacing": delta, "candidates": len(planes),
                                       "transport_cost": res.cost, "source_points": S,
                                       "target_points": T})


# ----------------------------------------------------------------------
# square functions and the good set


def coefficient(mu, x, r, kind: str, n: int = 1, p: int = 2,
                search: PlaneSearchConfig | None = None) -> CoefficientResult:
    if kind == "beta_p":
        return beta_p(mu, x, r, p, n)
    if kind == "beta_h_p":
        return beta_homogeneous(mu, x, r, p, n)
    if kind == "alpha":
        return alpha(mu, Ball(x, r), n, search)
    if kind == "alpha_h":
        return alpha_homogeneous(mu, x, r, n, search)
    if kind == "alpha_p":
        return alpha_p(mu, Ball(x, r), p, n, search)
    raise ValueError(f"unknown coefficient kind {kind!r}")


@dataclass
class SquareFunction:
    value: float
    radii: np.ndarray
    trace: np.ndarray
    undefined: int


def square_function(mu: DiscreteMeasure, x, grid: ScaleGrid, coef_kind: str = "beta_p",
                    n: int = 1, p: int = 2, search: PlaneSearchConfig | None = None) -> SquareFunction:
    """sum_j coef(x, r_j)^2 ln(1/q); undefined scales contribute 0 and are counted."""
    radii = grid.radii
    trace = np.zeros(len(radii))
    undefined = 0
    for j, r in enumerate(radii):
        res = coefficient(mu, x, r, coef_kind, n, p, search)
        if res.defined:
            trace[j] = res.value
        else:
            undefined += 1
    return SquareFunction(grid.integrate(trace ** 2), radii, trace, undefined)


GOOD_SET_SEARCH = PlaneSearchConfig(K=0, spacing_factor=1 / 48, atom_cap=96)


@dataclass
class GoodSet:
    """Per-atom alpha^2 + beta_2^2 traces over a scale grid and the induced good set."""

    atoms: np.ndarray
    radii: np.ndarray
    alpha_sq: np.ndarray
    beta_sq: np.ndarray
    weight: float
    eps: float
    r: float
    upper_factor: float = 1000.0
    metadata: dict = field(default_factory=dict)

    def square_values(self, r: float | None = None) -> np.ndarray:
        r = self.r if r is None else r
        cols = self.radii <= self.upper_factor * r * (1 + 1e-12)
        return (self.alpha_sq[:, cols] + self.beta_sq[:, cols]).sum(axis=1) * self.weight

    def members(self, r: float | None = None, eps: float | None = None) -> np.ndarray:
        eps = self.eps if eps is None else eps
        return self.square_values(r) < eps * eps

    @property
    def good(self) -> np.ndarray:
        return self.members()

    def good_indices(self) -> np.ndarray:
        return self.atoms[self.good]

    def check_monotone(self, radii) -> bool:
        """G_s contains G_r whenever s < r."""
        radii = sorted(radii)
        sets = [self.members(r) for r in radii]
        for small, big in zip(sets, sets[1:]):
            if np.any(big & ~small):
                return False
        return True


def good_set(mu: DiscreteMeasure, eps: float, r: float, grid: ScaleGrid, n: int = 1,
             atoms=None, search: PlaneSearchConfig | None = None,
             upper_factor: float = 1000.0) -> GoodSet:
    """Good points: int_0^{1000 r} (alpha^2 + beta_2^2) ds/s < eps^2, evaluated
    on the grid radii between r_min (the resolution cut-off) and
    min(1000 r, r_max) (the data extent)."""
    cfg = search or GOOD_SET_SEARCH
    atoms = np.arange(len(mu)) if atoms is None else np.asarray(atoms, dtype=np.int64)
    g = grid.truncated(upper_factor * r)
    radii = g.radii
    A = np.zeros((len(atoms), len(radii)))
    Bt = np.zeros((len(atoms), len(radii)))
    undefined = 0
    for i, a in enumerate(atoms):
        x = mu.points[a]
        for j, s in enumerate(radii):
            b = beta_p(mu, x, s, 2, n)
            al = alpha(mu, Ball(x, s), n, cfg)
            if b.defined:
                Bt[i, j] = b.value ** 2
            else:
                undefined += 1
            if al.defined:
                A[i, j] = al.value ** 2
    gs = GoodSet(atoms, radii, A, Bt, g.weight, eps, r, upper_factor,
                 metadata={"r_lo": g.r_min, "r_hi": float(radii[0]) if len(radii) else g.r_min,
                           "truncated_at_extent": bool(upper_factor * r > grid.r_max),
                           "undefined": undefined, "spacing_factor": cfg.spacing_factor})
    assert gs.check_monotone([r / 4, r / 2, r]), "good set must shrink as r grows"
    return gs


@dataclass
class ChainCheck:
    """Plane-fixed comparison of the distances behind alpha, alpha_1 and alpha_2."""

    rms_dist: float  # (int_B dist(y, L)^2 dmu)^(1/2)
    w2_cost_root: float  # (int |x - y|^2 dpi)^(1/2) for the optimal W_2 plan
    fb: float  # F_B(mu, a H^n|L) evaluated on the quadrature nodes
    w1: float
    w2: float
    slack: float
    metadata: dict = field(default_factory=dict)

    @property
    def holds(self) -> dict:
        tol = 1e-6 * (1.0 + max(self.w1, self.w2, self.fb)) + self.slack
        return {"rms_le_w2_cost": self.rms_dist <= self.w2_cost_root + tol,
                "fb_le_w1": self.fb <= self.w1 + tol,
                "w1_le_w2": self.w1 <= self.w2 + tol}


def plane_fixed_chain(mu: DiscreteMeasure, B: Ball, plane: AffinePlane | None = None, n: int = 1,
                      spacing: float | None = None) -> ChainCheck:
    """Evaluate the three inequalities at one fixed plane L with its a_{B,L}.

    Both transport problems use the unbinned source phi_B mu on 3B and the
    same phi_B-weighted quadrature of a_{B,L} H^n|L, rescaled to equal mass;
    F_B is evaluated against the measure whose phi_B-weighting is that
    target, so all three quantities refer to the same pair of measures.
    ``slack`` is the relative mass rescaling times the ball radius.
    """
    from flatscan.measure import f_b_distance

    x, r = B.center, B.radius
    idx3 = mu.ball_indices(x, 3 * r)
    pts3, w3 = mu.points[idx3], mu.weights[idx3]
    phi = CUTOFF.on_ball(pts3, B)
    keep = phi > 0
    S, Sw = pts3[keep], (w3 * phi)[keep]
    if plane is None:
        plane = beta_p(mu, x, r, 2, n).plane
    plane = _clamp_to_ball(plane, B)
    delta = spacing if spacing is not None else r / 8
    Q = flat_quadrature(plane, B, delta)
    tphi = CUTOFF.on_ball(Q.nodes, B)
    k = tphi > 0
    T, tw, tphi = Q.nodes[k], (Q.weights * tphi)[k], tphi[k]
    a = float(np.sum(Sw)) / float(np.sum(tw))
    tgt = tw * a
    scale = float(np.sum(Sw)) / float(np.sum(tgt))
    tgt = tgt * scale
    w1 = wasserstein((S, Sw), (T, tgt), 1)
    w2 = wasserstein((S, Sw), (T, tgt), 2)
    inB = mu.ball_indices(x, r)
    rms = math.sqrt(float(np.sum(mu.weights[inB] * plane.dist(mu.points[inB]) ** 2)))
    fb = f_b_distance(mu, (T, tgt / tphi), B)
    m = float(np.sum(Sw))
    return ChainCheck(rms, math.sqrt(w2.cost), fb.value, w1.value * 1.0, w2.value * math.sqrt(m),
                      abs(scale - 1.0) * r * m,
                      metadata={"a_BL": a, "mass": m, "target_nodes": len(T), "spacing": delta,
                                "w2_normalized": w2.value})
