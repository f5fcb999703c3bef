from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wasserstein_distance

from flatscan.errors import MassMismatch
from flatscan.transport import w1_duality_gap, wasserstein, wasserstein_entropic
from oracles import permutation_oracle


def test_identity_is_zero(rng):
    x = rng.normal(size=(6, 2))
    w = rng.uniform(0.5, 1, 6)
    for p in (1, 2):
        assert wasserstein((x, w), (x, w), p).value == pytest.approx(0.0, abs=1e-9)


def test_single_route():
    a, b = np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])
    for p in (1, 2, 3):
        assert wasserstein((a, [1.0]), (b, [1.0]), p).value == pytest.approx(5.0, rel=1e-12)


@pytest.mark.parametrize("p", [1, 2])
def test_four_atoms_match_permutations(p, rng):
    for _ in range(5):
        x, y = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        got = wasserstein((x, np.full(4, 0.25)), (y, np.full(4, 0.25)), p).value
        assert got == pytest.approx(permutation_oracle(x, y, p), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_one_dimensional_w1_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=7), rng.normal(size=9)
    a, b = rng.uniform(0.1, 1, 7), rng.uniform(0.1, 1, 9)
    a, b = a / a.sum(), b / b.sum()
    got = wasserstein((x[:, None], a), (y[:, None], b), 1).value
    assert got == pytest.approx(wasserstein_distance(x, y, a, b), abs=1e-9)


def test_plan_marginals(rng):
    x, y = rng.normal(size=(10, 3)), rng.normal(size=(12, 3))
    a, b = rng.uniform(0.1, 1, 10), rng.uniform(0.1, 1, 12)
    b *= a.sum() / b.sum()
    res = wasserstein((x, a), (y, b), 2)
    assert res.plan.marginal_error() <= 1e-10
    assert np.all(res.plan.matrix >= 0)


def test_mass_mismatch_is_error():
    with pytest.raises(MassMismatch):
        wasserstein((np.zeros((1, 1)), [1.0]), (np.ones((1, 1)), [1.1]), 1)


def test_tiny_mismatch_renormalized():
    res = wasserstein((np.zeros((1, 1)), [1.0]), (np.ones((1, 1)), [1.0 + 1e-12]), 1)
    assert res.metadata["renormalized"] == "source"
    assert res.value == pytest.approx(1.0)


def test_metric_properties(rng):
    for _ in range(20):
        ms = []
        for _ in range(3):
            w = rng.uniform(0.1, 1, 6)
            ms.append((rng.normal(size=(6, 2)), w / w.sum()))
        for p in (1, 2):
            ab = wasserstein(ms[0], ms[1], p).value
            assert ab == pytest.approx(wasserstein(ms[1], ms[0], p).value, abs=1e-9)
            assert wasserstein(ms[0], ms[2], p).value <= ab + wasserstein(ms[1], ms[2], p).value + 1e-8
        assert wasserstein(ms[0], ms[1], 1).value <= wasserstein(ms[0], ms[1], 2).value + 1e-8


def test_translation_invariance(rng):
    x, y = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    w = np.full(7, 1 / 7)
    v = rng.normal(size=2)
    for p in (1, 2):
        assert wasserstein((x + v, w), (y + v, w), p).value == pytest.approx(
            wasserstein((x, w), (y, w), p).value, abs=1e-10)


def test_entropic_forced_plan():
    a, b = np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]])
    assert wasserstein_entropic((a, [1.0]), (b, [1.0]), 1, eps=0.5).value == pytest.approx(np.sqrt(2))


def test_entropic_close_to_exact(rng):
    x, y = rng.uniform(size=(50, 2)), rng.uniform(size=(50, 2))
    a = np.full(50, 1 / 50)
    exact = wasserstein((x, a), (y, a), 1).value
    diam = np.sqrt(2)
    approx = wasserstein_entropic((x, a), (y, a), 1, eps=1e-3 * diam ** 2).value
    assert abs(approx - exact) <= 0.01 * exact


def test_entropic_monotone_in_eps(rng):
    x, y = rng.uniform(size=(20, 2)), rng.uniform(size=(20, 2))
    a = np.full(20, 1 / 20)
    vals = [wasserstein_entropic((x, a), (y, a), 2, eps=e).value for e in (0.04, 0.02, 0.01)]
    assert vals[0] >= vals[1] - 1e-6 >= vals[2] - 2e-6


def test_duality_gap_point_masses():
    g = w1_duality_gap((np.zeros((1, 2)), [1.0]), (np.ones((1, 2)), [1.0]))
    assert g["gap"] == pytest.approx(0.0, abs=1e-12)


def test_duality_gap_random(rng):
    for _ in range(100):
        x, y = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
        a, b = rng.uniform(0.1, 1, 10), rng.uniform(0.1, 1, 10)
        g = w1_duality_gap((x, a / a.sum()), (y, b / b.sum()))
        assert g["gap"] <= 1e-7 * (1 + g["primal"])
