"""Independent brute-force oracles shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def permutation_oracle(x, y, p):
    """Uniform equal-size measures: W_p^p is the best matching cost over N,
    by enumerating every permutation."""
    N = len(x)
    C = np.linalg.norm(x[:, None] - y[None], axis=-1) ** p
    perms = np.array(list(itertools.permutations(range(N))))
    best = C[np.arange(N)[None, :], perms].sum(axis=1).min()
    return (best / N) ** (1.0 / p)


def beta2_grid_search(pts, w, x, r, m3, angles=10_000, offsets=100, zooms=4):
    """min over lines through B(x, r) of (1/m3) sum w (dist/r)^2, by an
    angle x offset grid refined ``zooms`` times around its best cell.

    The objective has long narrow valleys (an offset between two grid rows
    moves the best angle by many columns), so each zoom window spans 16
    angle steps and 2 offset steps on either side."""
    inside = np.linalg.norm(pts - x, axis=1) < r
    P, W = pts[inside] - x, w[inside]

    def evaluate(th, off):
        nrm = np.stack([-np.sin(th), np.cos(th)], axis=-1)  # (A, 2)
        proj = P @ nrm.T  # (k, A)
        res = proj[:, :, None] - off[None, None, :]
        return np.einsum("k,kao->ao", W, res ** 2) / (r * r * m3)

    th = np.linspace(0, math.pi, angles, endpoint=False)
    off = np.linspace(-r, r, offsets + 2)[1:-1]
    V = evaluate(th, off)
    best = V.min()
    dth, doff = th[1] - th[0], off[1] - off[0]
    for _ in range(zooms):
        a, o = np.unravel_index(np.argmin(V), V.shape)
        th = th[a] + np.linspace(-16 * dth, 16 * dth, 321)
        off = np.clip(off[o] + np.linspace(-2 * doff, 2 * doff, 201), -0.999 * r, 0.999 * r)
        V = evaluate(th, off)
        best = min(best, V.min())
        dth, doff = th[1] - th[0], off[1] - off[0]
    return math.sqrt(best)
