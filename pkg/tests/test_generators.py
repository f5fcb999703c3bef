from __future__ import annotations

import math

import numpy as np
import pytest

from flatscan.coefficients import beta_p
from flatscan.errors import UsageError
from flatscan.generators import (
    KINDS,
    GeneratorSpec,
    cantor_centers,
    generate,
    graph_function,
    perturbed_plane,
    random_rotation,
)


def spec_for(kind):
    if kind == "rescaled":
        return GeneratorSpec(kind, {"base": {"kind": "flat_plane", "atoms": 50}, "dilation": 2.0,
                                    "mass_scale": 3.0}, seed=4)
    return GeneratorSpec(kind, seed=4, atoms=200, depth=3)


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    a, b = generate(spec_for(kind)), generate(spec_for(kind))
    assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)
    assert np.all(a.weights > 0)


def test_seed_changes_random_kinds():
    a = generate(GeneratorSpec("lipschitz_graph", seed=1))
    b = generate(GeneratorSpec("lipschitz_graph", seed=2))
    assert not np.allclose(a.points, b.points)


def test_unknown_kind_and_bad_sizes():
    with pytest.raises(UsageError):
        GeneratorSpec("spiral")
    with pytest.raises(UsageError):
        GeneratorSpec("flat_plane", atoms=0)
    with pytest.raises(UsageError):
        generate(GeneratorSpec("flat_plane", {"n": 2, "d": 2}))
    with pytest.raises(UsageError):
        generate(GeneratorSpec("rescaled"))


def test_flat_plane_is_flat():
    mu = generate(GeneratorSpec("flat_plane", {"n": 2, "d": 3}, atoms=400))
    assert mu.total_mass == pytest.approx(1.0)
    assert np.all(mu.points[:, 2] == 0)
    for x in mu.points[::37]:
        assert beta_p(mu, x, 0.3, 2, 2).value == pytest.approx(0.0, abs=1e-12)


def test_cantor_structure():
    for depth in range(5):
        c = cantor_centers(depth)
        assert len(c) == 4 ** depth
        assert len(np.unique(c, axis=0)) == 4 ** depth
    mu = generate(GeneratorSpec("cantor4", depth=4))
    assert mu.total_mass == pytest.approx(1.0)
    # self-similarity: each quadrant is a 1/4 copy of the whole
    c3 = cantor_centers(3)
    quad = mu.points[(mu.points[:, 0] < 0.5) & (mu.points[:, 1] < 0.5)]
    rebuilt = (quad - 0.125) * 4 + 0.5
    a = rebuilt[np.lexsort((rebuilt[:, 1], rebuilt[:, 0]))]
    assert np.allclose(a, c3)


def test_lipschitz_graph_slope():
    for seed in range(5):
        spec = GeneratorSpec("lipschitz_graph", {"lip": 0.05}, seed=seed, atoms=200)
        mu = generate(spec)
        f = graph_function(spec)
        assert f.lipschitz_bound == pytest.approx(0.05)
        x, y = mu.points[:, 0], mu.points[:, 1]
        assert np.abs(np.diff(y) / np.diff(x)).max() <= 0.05 + 1e-12
        assert np.allclose(y, f(x[:, None]))
        # arc-length weights sum to the curve length, at least the base length
        assert 1.0 <= mu.total_mass <= math.sqrt(1 + 0.05 ** 2)


def test_lipschitz_graph_two_dimensional_base():
    mu = generate(GeneratorSpec("lipschitz_graph", {"n": 2, "lip": 0.1}, seed=1, atoms=400))
    assert mu.dim == 3
    assert 1.0 <= mu.total_mass <= math.sqrt(1 + 0.1 ** 2)


def test_circle_arc_length():
    mu = generate(GeneratorSpec("circle_arc", {"radius": 2.0, "span": 1.0}, atoms=300))
    assert mu.total_mass == pytest.approx(2.0)
    assert np.allclose(np.linalg.norm(mu.points, axis=1), 2.0)


def test_two_lines_angle():
    mu = generate(GeneratorSpec("two_lines", {"angle": 0.7}, atoms=100))
    second = mu.points[50:]
    assert np.allclose(np.arctan2(second[:, 1], second[:, 0]) % math.pi, 0.7)


def test_spike():
    mu = generate(GeneratorSpec("plane_plus_spike", {"height": 0.2, "mass": 0.5}, atoms=100))
    assert np.allclose(mu.points[-1], [0.5, 0.2])
    assert mu.weights[-1] == 0.5


def test_rescaled_is_rigid_copy():
    base = generate(GeneratorSpec("flat_plane", atoms=50))
    mu = generate(spec_for("rescaled"))
    D0 = np.linalg.norm(base.points[:, None] - base.points[None], axis=-1)
    D1 = np.linalg.norm(mu.points[:, None] - mu.points[None], axis=-1)
    assert np.allclose(D1, 2.0 * D0)
    assert mu.total_mass == pytest.approx(3.0 * base.total_mass)


def test_random_rotation_is_special_orthogonal(rng):
    for d in (2, 3, 4):
        R = random_rotation(d, rng)
        assert np.allclose(R @ R.T, np.eye(d))
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_perturbed_plane_height():
    mu = perturbed_plane(atoms=512, height=0.01)
    assert np.abs(mu.points[:, 1]).max() <= 0.01
    assert np.abs(mu.points[:, 1]).max() >= 0.0099
