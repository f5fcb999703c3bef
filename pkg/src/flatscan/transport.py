"""Wasserstein distances between discrete measures.

``wasserstein`` solves the transportation linear program exactly (HiGHS dual
simplex). ``wasserstein_entropic`` runs log-domain Sinkhorn iterations and
reports its marginal residual. ``w1_duality_gap`` compares the primal
transport value with an independently solved Lipschitz-potential dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from flatscan import _lp
from flatscan.errors import DataError, MassMismatch
from flatscan.measure import DiscreteMeasure

MASS_RTOL = 1e-9


@dataclass
class TransportPlan:
    matrix: np.ndarray
    p: float
    source_weights: np.ndarray
    target_weights: np.ndarray

    def marginal_error(self) -> float:
        r = np.abs(self.matrix.sum(axis=1) - self.source_weights).max()
        c = np.abs(self.matrix.sum(axis=0) - self.target_weights).max()
        scale = max(self.source_weights.sum(), 1e-300)
        return float(max(r, c) / scale)


@dataclass
class TransportResult:
    value: float
    plan: TransportPlan | None
    cost: float
    metadata: dict = field(default_factory=dict)
    approximate: bool = False


def _pairs(m):
    if isinstance(m, DiscreteMeasure):
        return np.asarray(m.points), np.asarray(m.weights, dtype=float)
    p, w = m
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    return p, np.asarray(w, dtype=float)


def cost_matrix(x, y, p: float) -> np.ndarray:
    """|x_i - y_j|^p with the squared distances accumulated in extended precision."""
    xl = np.asarray(x, dtype=np.longdouble)
    yl = np.asarray(y, dtype=np.longdouble)
    d2 = np.zeros((len(xl), len(yl)), dtype=np.longdouble)
    for k in range(xl.shape[1]):
        diff = xl[:, k][:, None] - yl[:, k][None, :]
        d2 += diff * diff
    if p == 2:
        return np.asarray(d2, dtype=float)
    return np.asarray(np.sqrt(d2) ** p, dtype=float)


def _balance(a, b):
    """Check masses and renormalize the smaller side when the mismatch is tiny."""
    sa, sb = math.fsum(a), math.fsum(b)
    if sa <= 0 or sb <= 0:
        raise DataError("both measures must carry positive mass")
    rel = abs(sa - sb) / max(sa, sb)
    meta = {"mass_source": sa, "mass_target": sb, "renormalized": False}
    if rel > MASS_RTOL:
        raise MassMismatch(f"total masses differ: {sa!r} vs {sb!r} (relative {rel:.3e})")
    if sa != sb:
        meta["renormalized"] = "source" if sa < sb else "target"
        if sa < sb:
            a = a * (sb / sa)
        else:
            b = b * (sa / sb)
    return a, b, meta


def wasserstein(mu, nu, p: float = 1.0) -> TransportResult:
    """Exact W_p and an optimal plan."""
    if p < 1:
        raise DataError("p must be >= 1")
    x, a = _pairs(mu)
    y, b = _pairs(nu)
    if len(a) == 0 or len(b) == 0:
        raise DataError("both measures must be nonempty")
    a, b, meta = _balance(a, b)
    C = cost_matrix(x, y, p)
    M = math.fsum(a)
    cmax = float(C.max())
    if cmax == 0.0:
        P = np.outer(a, b) / M
        return TransportResult(0.0, TransportPlan(P, p, a, b), 0.0, meta)
    fun, P = _lp.transport_lp(a / M, b / M, C / cmax)
    P = np.where(P < 0, 0.0, P) * M
    cost = max(float(np.sum(P * C)), 0.0)
    meta["lp_objective"] = fun * M * cmax
    plan = TransportPlan(P, p, a, b)
    meta["marginal_error"] = plan.marginal_error()
    return TransportResult(cost ** (1.0 / p), plan, cost, meta)


def wasserstein_entropic(mu, nu, p: float = 1.0, eps: float = 1e-3, max_iter: int = 5000,
                         tol: float = 1e-6) -> TransportResult:
    """Entropic transport value <C, P_eps>^(1/p) by log-domain Sinkhorn."""
    x, a = _pairs(mu)
    y, b = _pairs(nu)
    a, b, meta = _balance(a, b)
    M = math.fsum(a)
    a, b = a / M, b / M
    C = cost_matrix(x, y, p)
    la, lb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))

    def sweep(e, n_iter, stop):
        nonlocal f, g
        err, k = np.inf, 0
        for k in range(1, n_iter + 1):
            f = e * (la - logsumexp((g[None, :] - C) / e, axis=1))
            g = e * (lb - logsumexp((f[:, None] - C) / e, axis=0))
            if k % 10 == 0 or k == n_iter:
                logP = (f[:, None] + g[None, :] - C) / e
                err = float(np.abs(np.exp(logsumexp(logP, axis=1)) - a).sum())
                if err < stop:
                    break
        return err, k

    # epsilon scaling: warm-start the potentials from coarser regularizations
    e = max(float(C.max()), eps)
    total = 0
    while e > eps * 1.0001:
        _, k = sweep(e, 500, 1e-6)
        total += k
        e = max(e * 0.5, eps)
    err, k = sweep(eps, max_iter, tol)
    it = total + k
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    cost = float(np.sum(P * C)) * M
    meta.update({"iterations": it, "marginal_residual": err, "eps": eps,
                 "dual_value": float(f @ a + g @ b) * M})
    return TransportResult(cost ** (1.0 / p), TransportPlan(P * M, p, a * M, b * M), cost,
                           meta, approximate=err >= tol)


def w1_duality_gap(mu, nu) -> dict:
    """|primal W1 - dual Lipschitz-potential value| on the union of supports."""
    x, a = _pairs(mu)
    y, b = _pairs(nu)
    a, b, _ = _balance(a, b)
    primal = wasserstein((x, a), (y, b), 1.0)
    pts = np.vstack([x, y])
    s = np.concatenate([a, -b])
    dual, _ = _lp.w1_potential_lp(pts, s)
    return {"primal": primal.value, "dual": dual, "gap": abs(primal.value - dual)}
