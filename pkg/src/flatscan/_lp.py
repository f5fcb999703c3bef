"""Linear programs behind F_B, the flat-measure minimization and transport.

The Lipschitz-potential programs are solved through their min-cost-flow
duals with constraint generation: only a k-nearest-neighbour set of pairwise
constraints is present at first, violated pairs are added until the node
potentials (read off the equality duals) satisfy every pairwise constraint.
At that point the potentials are feasible for the full program and optimal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, csr_matrix
from scipy.spatial import cKDTree

from flatscan.errors import LPFailure

HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}
VIOLATION_TOL = 1e-10
MAX_ROUNDS = 60


@dataclass
class PotentialLP:
    value: float
    potentials: np.ndarray
    c: float = 0.0
    iterations: int = 0
    edges: int = 0
    residual: float = 0.0


def _pairwise(x):
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    return np.sqrt(np.maximum(d2, 0.0))


def _initial_edges(x, k=8):
    N = len(x)
    if N < 2:
        return np.zeros((0, 2), dtype=np.int64)
    kk = min(k + 1, N)
    _, nb = cKDTree(x).query(x, k=kk)
    nb = np.asarray(nb).reshape(N, kk)
    i = np.repeat(np.arange(N), kk - 1)
    j = nb[:, 1:].reshape(-1)
    E = np.concatenate([np.stack([i, j], 1), np.stack([j, i], 1)])
    E = E[E[:, 0] != E[:, 1]]
    return np.unique(E, axis=0)


def _solve_flow(x, D, s, rho, q, E):
    """min sum D_e f_e + sum rho (u+v)  s.t.  out-in + u - v (+ c q) = s."""
    N = len(x)
    ne = len(E)
    with_c = q is not None
    rows = [E[:, 0], E[:, 1], np.arange(N), np.arange(N)]
    cols = [np.arange(ne), np.arange(ne), ne + np.arange(N), ne + N + np.arange(N)]
    vals = [np.ones(ne), -np.ones(ne), np.ones(N), -np.ones(N)]
    nvar = ne + 2 * N
    if with_c:
        nz = np.nonzero(q)[0]
        rows.append(nz)
        cols.append(np.full(len(nz), nvar))
        vals.append(q[nz])
        nvar += 1
    A = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(N, nvar)).tocsr()
    cost = np.concatenate([D[E[:, 0], E[:, 1]], rho, rho] + ([np.zeros(1)] if with_c else []))
    res = linprog(cost, A_eq=A, b_eq=s, bounds=(0, None), method="highs-ds",
                  options=HIGHS_OPTIONS)
    if res.status != 0:
        raise LPFailure(f"HiGHS status {res.status}: {res.message}",
                        dump={"points": x.tolist(), "mass": s.tolist(), "bound": rho.tolist()})
    phi = np.asarray(res.eqlin.marginals, dtype=float)
    c = float(res.x[-1]) if with_c else 0.0
    return float(res.fun), phi, c


def _generate(x, s, rho, q=None):
    D = _pairwise(x)
    E = _initial_edges(x)
    for it in range(1, MAX_ROUNDS + 1):
        if len(E) == 0:
            E = np.zeros((0, 2), dtype=np.int64)
        fun, phi, c = _solve_flow(x, D, s, rho, q, E)
        viol = phi[:, None] - phi[None, :] - D
        np.fill_diagonal(viol, -np.inf)
        bad = np.argwhere(viol > VIOLATION_TOL)
        if len(bad) == 0:
            return fun, phi, c, it, len(E)
        E = np.unique(np.concatenate([E, bad]), axis=0)
    raise LPFailure("constraint generation did not converge",
                    dump={"points": x.tolist(), "mass": s.tolist()})


def lipschitz_potential(points, signed_mass, bound, *, center=None, scale=1.0) -> PotentialLP:
    """max sum phi_i s_i  s.t. |phi_i - phi_j| <= |x_i - x_j|, |phi_i| <= bound_i.

    Solved in normalized units (lengths / scale, masses / total variation).
    Returned values are in the caller's units.
    """
    x = np.asarray(points, dtype=float)
    s = np.asarray(signed_mass, dtype=float)
    rho = np.maximum(np.asarray(bound, dtype=float), 0.0)
    M = float(np.sum(np.abs(s)))
    if len(x) == 0 or M == 0.0:
        return PotentialLP(0.0, np.zeros(len(x)))
    c0 = np.zeros(x.shape[1]) if center is None else np.asarray(center, dtype=float)
    xs = (x - c0) / scale
    fun, phi, _, it, ne = _generate(xs, s / M, rho / scale)
    phi = np.clip(phi, -rho / scale, rho / scale)
    resid = abs(fun - float(phi @ (s / M)))
    return PotentialLP(fun * M * scale, phi * scale, 0.0, it, ne, resid * M * scale)


def flat_minimum(points, mu_mass, flat_mass, bound, *, center=None, scale=1.0) -> PotentialLP:
    """min over c >= 0 of max sum phi_i (m_i - c q_i) under the same constraints.

    The constant ``c`` enters the flow formulation as one extra column, so
    the minimization over c is exact.
    """
    x = np.asarray(points, dtype=float)
    m = np.asarray(mu_mass, dtype=float)
    q = np.asarray(flat_mass, dtype=float)
    rho = np.maximum(np.asarray(bound, dtype=float), 0.0)
    M = float(np.sum(m))
    if len(x) == 0 or M == 0.0:
        return PotentialLP(0.0, np.zeros(len(x)), 0.0)
    Q = float(np.sum(q))
    c0 = np.zeros(x.shape[1]) if center is None else np.asarray(center, dtype=float)
    xs = (x - c0) / scale
    if Q == 0.0:
        fun, phi, _, it, ne = _generate(xs, m / M, rho / scale)
        return PotentialLP(fun * M * scale, phi * scale, 0.0, it, ne)
    # masses normalized by M, flat weights by Q: c' = c Q / M
    fun, phi, cn, it, ne = _generate(xs, m / M, rho / scale, q=q / Q)
    return PotentialLP(fun * M * scale, phi * scale, cn * M / Q, it, ne)


# ----------------------------------------------------------------------
# transport


def transport_lp(a, b, C):
    """Exact transportation LP: min <C, P> with row sums a, column sums b."""
    m, n = C.shape
    rows_r = np.repeat(np.arange(m), n)
    cols = np.arange(m * n)
    rows_c = m + np.tile(np.arange(n), m)
    A = csr_matrix((np.ones(2 * m * n), (np.concatenate([rows_r, rows_c]), np.concatenate([cols, cols]))),
                   shape=(m + n, m * n))
    res = linprog(C.reshape(-1), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs-ds", options=HIGHS_OPTIONS)
    if res.status != 0:
        raise LPFailure(f"HiGHS status {res.status}: {res.message}",
                        dump={"a": a.tolist(), "b": b.tolist()})
    P = np.asarray(res.x).reshape(m, n)
    return float(res.fun), P


def w1_potential_lp(x, s):
    """Dual of W1: max sum f_i s_i over all 1-Lipschitz node values (full pairwise)."""
    N = len(x)
    D = _pairwise(x)
    iu, ju = np.nonzero(~np.eye(N, dtype=bool))
    k = len(iu)
    A = csr_matrix((np.concatenate([np.ones(k), -np.ones(k)]),
                    (np.concatenate([np.arange(k), np.arange(k)]), np.concatenate([iu, ju]))),
                   shape=(k, N))
    # pin the additive constant: f_0 = 0 (sum s = 0 makes it irrelevant)
    bounds = [(0.0, 0.0)] + [(None, None)] * (N - 1)
    res = linprog(-s, A_ub=A, b_ub=D[iu, ju], bounds=bounds, method="highs-ds",
                  options=HIGHS_OPTIONS)
    if res.status != 0:
        raise LPFailure(f"HiGHS status {res.status}: {res.message}")
    return -float(res.fun), np.asarray(res.x)
