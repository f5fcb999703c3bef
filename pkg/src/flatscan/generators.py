"""Synthetic measures with known geometry.

Every generator is a pure function of its ``GeneratorSpec``; random choices
(Fourier phases, rotations) come from ``numpy.random.default_rng(seed)``
and grid-based kinds carry exact weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from flatscan.errors import UsageError
from flatscan.measure import DiscreteMeasure

KINDS = ("flat_plane", "lipschitz_graph", "circle_arc", "cantor4", "two_lines",
         "plane_plus_spike", "rescaled")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    atoms: int = 1000
    depth: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown generator kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.atoms < 1:
            raise UsageError("atoms must be positive")
        if self.depth < 0:
            raise UsageError("depth must be non-negative")

    def get(self, key, default):
        return self.params.get(key, default)

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed,
                "atoms": self.atoms, "depth": self.depth}


def generate(spec: GeneratorSpec) -> DiscreteMeasure:
    return _DISPATCH[spec.kind](spec)


def _embed(u, d):
    """Place base coordinates u (m x n) in the first n axes of R^d."""
    out = np.zeros((len(u), d))
    out[:, :u.shape[1]] = u
    return out


def _side_counts(atoms, n):
    k = max(1, int(round(atoms ** (1.0 / n))))
    return k


def _cell_grid(k, n, length=1.0):
    """Cell-centred grid with k points per side on [0, length]^n."""
    h = length / k
    g = (np.arange(k) + 0.5) * h
    mesh = np.meshgrid(*([g] * n), indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1), h


def _flat_plane(spec: GeneratorSpec) -> DiscreteMeasure:
    n = int(spec.get("n", 1))
    d = int(spec.get("d", n + 1))
    length = float(spec.get("length", 1.0))
    if not (1 <= n < d):
        raise UsageError("flat_plane needs 1 <= n < d")
    k = _side_counts(spec.atoms, n)
    u, h = _cell_grid(k, n, length)
    return DiscreteMeasure(_embed(u, d), np.full(len(u), h ** n))


class FourierGraph:
    """f(u) = sum_j a_j sin(2 pi <k_j, u> + phi_j), scaled so that the
    rigorous bound sum_j |a_j| 2 pi |k_j| equals ``lip``.

    For ``shape="sine"`` a single mode of the given amplitude and frequency
    along the first axis is used instead.
    """

    def __init__(self, n, lip=0.05, modes=4, rng=None, shape="fourier", amplitude=None,
                 frequency=1.0):
        self.n = n
        if shape == "sine":
            self.k = np.zeros((1, n))
            self.k[0, 0] = frequency
            self.phi = np.zeros(1)
            amp = amplitude if amplitude is not None else lip / (2 * math.pi * frequency)
            self.a = np.array([amp])
        elif shape == "fourier":
            rng = rng or np.random.default_rng(0)
            self.k = rng.integers(1, 4, size=(modes, n)).astype(float) * rng.choice([-1.0, 1.0], size=(modes, n))
            self.phi = rng.uniform(0, 2 * math.pi, modes)
            a = rng.uniform(0.5, 1.0, modes) / np.arange(1, modes + 1)
            bound = float(np.sum(a * 2 * math.pi * np.linalg.norm(self.k, axis=1)))
            self.a = a * (lip / bound)
        else:
            raise UsageError(f"unknown graph shape {shape!r}")

    @property
    def lipschitz_bound(self) -> float:
        return float(np.sum(np.abs(self.a) * 2 * math.pi * np.linalg.norm(self.k, axis=1)))

    def __call__(self, u):
        u = np.atleast_2d(u)
        return np.sin(2 * math.pi * u @ self.k.T + self.phi) @ self.a

    def gradient(self, u):
        u = np.atleast_2d(u)
        c = np.cos(2 * math.pi * u @ self.k.T + self.phi) * self.a
        return (2 * math.pi) * c @ self.k

    def gradient_sq_integral(self, lo=0.0, hi=1.0, samples=4096) -> float:
        """int |grad f|^2 over [lo, hi]^n by the midpoint rule."""
        k = samples if self.n == 1 else int(round(samples ** (1 / self.n)))
        g, h = _cell_grid(k, self.n, hi - lo)
        g = g + lo
        return float(np.sum(self.gradient(g) ** 2) * h ** self.n)


def graph_function(spec: GeneratorSpec) -> FourierGraph:
    n = int(spec.get("n", 1))
    rng = np.random.default_rng(spec.seed)
    return FourierGraph(n, float(spec.get("lip", 0.05)), int(spec.get("modes", 4)), rng,
                        str(spec.get("shape", "fourier")),
                        None if spec.get("amplitude", None) is None else float(spec.get("amplitude", 0)),
                        float(spec.get("frequency", 1.0)))


def _lipschitz_graph(spec: GeneratorSpec) -> DiscreteMeasure:
    n = int(spec.get("n", 1))
    d = int(spec.get("d", n + 1))
    if d != n + 1:
        raise UsageError("lipschitz_graph supports codimension one (d = n + 1)")
    f = graph_function(spec)
    k = _side_counts(spec.atoms, n)
    if n == 1:
        # nodes at cell centres; weights from the trapezoid rule on the polygon
        u, h = _cell_grid(k, 1)
        edges = np.concatenate([[0.0], (u[:-1, 0] + u[1:, 0]) / 2, [1.0]])
        ue = edges[:, None]
        ys = np.concatenate([f(ue)[:, None]], axis=1)[:, 0]
        yc = f(u)
        left = np.hypot(u[:, 0] - edges[:-1], yc - ys[:-1])
        right = np.hypot(edges[1:] - u[:, 0], ys[1:] - yc)
        w = left + right
    else:
        u, h = _cell_grid(k, n)
        g = f.gradient(u)
        w = h ** n * np.sqrt(1.0 + np.sum(g * g, axis=1))
        yc = f(u)
    pts = np.hstack([u, yc[:, None]])
    return DiscreteMeasure(pts, w)


def _circle_arc(spec: GeneratorSpec) -> DiscreteMeasure:
    R = float(spec.get("radius", 1.0))
    span = float(spec.get("span", math.pi / 2))
    d = int(spec.get("d", 2))
    k = spec.atoms
    dt = span / k
    t = (np.arange(k) + 0.5) * dt
    u = np.stack([R * np.cos(t), R * np.sin(t)], axis=1)
    return DiscreteMeasure(_embed(u, d), np.full(k, R * dt))


def cantor_centers(depth: int) -> np.ndarray:
    """Centres of the 4^depth squares of the four-corner Cantor construction in [0, 1]^2."""
    pts = np.array([[0.5, 0.5]])
    offs = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
    for j in range(1, depth + 1):
        side = 4.0 ** (-j)
        shift = 1.5 * side
        pts = (pts[:, None, :] + shift * offs[None]).reshape(-1, 2)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return pts[order]


def _cantor4(spec: GeneratorSpec) -> DiscreteMeasure:
    c = cantor_centers(spec.depth)
    return DiscreteMeasure(c, np.full(len(c), 4.0 ** (-spec.depth)))


def _two_lines(spec: GeneratorSpec) -> DiscreteMeasure:
    angle = float(spec.get("angle", math.pi / 2))
    d = int(spec.get("d", 2))
    k = max(1, spec.atoms // 2)
    h = 1.0 / k
    s = (np.arange(k) + 0.5) * h - 0.5
    a = np.stack([s, np.zeros(k)], axis=1)
    b = np.stack([s * math.cos(angle), s * math.sin(angle)], axis=1)
    pts = _embed(np.vstack([a, b]), d)
    return DiscreteMeasure(pts, np.full(2 * k, h))


def _plane_plus_spike(spec: GeneratorSpec) -> DiscreteMeasure:
    base = _flat_plane(spec)
    n = int(spec.get("n", 1))
    height = float(spec.get("height", 0.1))
    mass = float(spec.get("mass", 0.1))
    spike = np.zeros(base.dim)
    spike[:n] = 0.5 * float(spec.get("length", 1.0))
    spike[n] = height
    return DiscreteMeasure(np.vstack([base.points, spike]), np.concatenate([base.weights, [mass]]))


def random_rotation(d: int, rng) -> np.ndarray:
    """Haar-distributed rotation (determinant +1)."""
    Q, R = np.linalg.qr(rng.normal(size=(d, d)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def _rescaled(spec: GeneratorSpec) -> DiscreteMeasure:
    inner = spec.get("base", None)
    if inner is None:
        raise UsageError("rescaled needs a 'base' generator spec")
    if isinstance(inner, dict):
        inner = GeneratorSpec(**inner)
    mu = generate(inner)
    rng = np.random.default_rng(spec.seed)
    if spec.get("rotate", True):
        Rm = random_rotation(mu.dim, rng)
    else:
        Rm = np.eye(mu.dim)
    t = np.asarray(spec.get("translation", rng.normal(size=mu.dim)), dtype=float)
    s = float(spec.get("dilation", 1.0))
    k = float(spec.get("mass_scale", 1.0))
    return mu.transformed(Rm, t, s).scaled(k)


def perturbed_plane(atoms: int = 4096, height: float = 0.01, frequency: float = 1.0,
                    seed: int = 0) -> DiscreteMeasure:
    """Segment [0, 1] x {0} perturbed by height * sin(2 pi frequency t)."""
    spec = GeneratorSpec("lipschitz_graph", {"shape": "sine", "amplitude": height,
                                             "frequency": frequency}, seed=seed, atoms=atoms)
    return generate(spec)


_DISPATCH = {
    "flat_plane": _flat_plane,
    "lipschitz_graph": _lipschitz_graph,
    "circle_arc": _circle_arc,
    "cantor4": _cantor4,
    "two_lines": _two_lines,
    "plane_plus_spike": _plane_plus_spike,
    "rescaled": _rescaled,
}
