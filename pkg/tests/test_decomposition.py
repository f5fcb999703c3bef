from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from flatscan.coefficients import GoodSet, PlaneSearchConfig, ScaleGrid, alpha
from flatscan.decomposition import (
    ExplicitGraph,
    StoppingParams,
    _affine_piece,
    balanced_ball_test,
    build_tree,
    bump_1d,
    check_main_lemma_hypothesis,
    dorronsoro_check,
    pipeline_grid,
    run_pipeline,
    select_root,
)
from flatscan.errors import ParameterInfeasible
from flatscan.generators import GeneratorSpec, generate, perturbed_plane
from flatscan.lattice import build_lattice
from flatscan.measure import AffinePlane, Ball, DiscreteMeasure, plane_angle

N_LINE = 1024
T = (np.arange(N_LINE) + 0.5) / N_LINE
LINE = np.c_[T, np.zeros(N_LINE)]
W = np.full(N_LINE, 1 / N_LINE)


def all_good(N, bad=()):
    """Good set stub: zero square function except at ``bad`` atoms."""
    a = np.zeros((N, 1))
    a[list(bad)] = 1.0
    return GoodSet(np.arange(N), np.array([1.0]), a, np.zeros((N, 1)), 1.0, 0.01, 1.0)


def tree_at(mu, level, bad=()):
    lat = build_lattice(mu)
    R0 = min(lat.level(level), key=lambda Q: np.linalg.norm(Q.center - [0.5, 0.0]))
    return build_tree(mu, lat, R0, StoppingParams(), n=1, good=all_good(len(mu), bad))


def families(tree):
    return {lab for fam in tree.stop_families.values() for lab in fam}


def test_params_validation():
    StoppingParams()
    for bad in ({"A": 0.5}, {"tau": 0.0}, {"theta": 1.0}, {"eps0": 0.0}, {"eta": 0.5}):
        with pytest.raises(ParameterInfeasible):
            StoppingParams(**bad)


def test_flat_plane_has_no_stopping_cubes(flat_run):
    tree = flat_run.tree
    assert tree.stop == []
    assert not tree.empty
    assert np.all(flat_run.graph.values == 0.0)
    assert flat_run.graph.metadata["lipschitz"] == 0.0
    assert tree.check_invariants() == []
    assert flat_run.warnings == []


def test_perturbed_plane_graph(perturbed_run):
    g = perturbed_run.graph
    meta = g.metadata
    # slope oracle straight from the grid values
    slope = np.abs(np.diff(g.values[:, 0]) / np.diff(g.nodes[:, 0])).max()
    assert meta["lipschitz"] == pytest.approx(slope, rel=1e-9)
    assert meta["lipschitz"] <= 0.5
    assert meta["RG_fraction"] >= 0.5
    assert meta["rg_interpolation_error"] <= 1e-12
    assert meta["support_violation"] == 0.0
    assert perturbed_run.tree.check_invariants() == []
    # R_G mass recomputed from the atom list
    mun = perturbed_run.tree.mu
    root = perturbed_run.tree.root
    assert set(g.rg_atoms.tolist()) <= set(root.atoms.tolist())
    frac = mun.weights[g.rg_atoms].sum() / mun.weights[root.atoms].sum()
    assert frac == pytest.approx(meta["RG_fraction"], rel=1e-12)


def test_perturbed_plane_stable_under_resolution(perturbed_run):
    coarse = run_pipeline(perturbed_plane(atoms=2048, height=0.01), StoppingParams(), n=1,
                          with_nu=False)
    a = perturbed_run.graph.metadata["RG_fraction"]
    b = coarse.graph.metadata["RG_fraction"]
    assert abs(a - b) <= 0.05 * a


def test_partition_of_unity(perturbed_run):
    nu = perturbed_run.nu
    rng = np.random.default_rng(7)
    k = rng.integers(0, len(nu.centers), 1000)
    v = rng.normal(size=(1000, 2))
    v /= np.linalg.norm(v, axis=1)[:, None]
    probes = nu.centers[k] + v * (2 * nu.radii[k] * rng.uniform(0, 1, 1000) ** 0.5)[:, None]
    assert np.abs(nu.h(probes).sum(axis=1) - 1).max() <= 1e-8
    far = nu.centers.max(axis=0) + 10 * nu.radii.max()
    assert nu.h(far[None]).sum() == 0.0


def test_nu_is_ahlfors_regular(perturbed_run):
    meta = perturbed_run.nu.metadata
    assert meta["ad_min"] > 0 and math.isfinite(meta["ad_max"])
    assert meta["ad_ratio"] <= 100
    assert meta["ck_zero"] == 0


def test_cantor_pipeline_warns():
    res = run_pipeline(generate(GeneratorSpec("cantor4", depth=5)), StoppingParams(), n=1)
    assert any(w.startswith("hypothesis fails") for w in res.warnings)
    assert not res.hypothesis.holds
    assert res.graph is None and res.nu is None


def test_flat_line_with_all_good_atoms_never_stops():
    tree = tree_at(DiscreteMeasure(LINE, W), 2)
    assert tree.stop == [] and tree.check_invariants() == []


def test_hypothesis_on_flat_and_cantor(flat_run, flat_measure):
    hyp = flat_run.hypothesis
    assert hyp.holds and hyp.bad_mass == 0.0
    assert hyp.normalized_mass_3B0 == pytest.approx(1.0)
    # weights rescaled by 5: the normalized measure, hence the verdict, is unchanged
    heavy = flat_measure.scaled(5.0)
    again = check_main_lemma_hypothesis(heavy, flat_run.lattice, flat_run.root, 0.01,
                                        pipeline_grid(heavy))
    assert again.holds and again.theta == pytest.approx(5 * hyp.theta)
    cantor = generate(GeneratorSpec("cantor4", depth=6))
    lat = build_lattice(cantor)
    R0 = select_root(cantor, lat)
    bad = check_main_lemma_hypothesis(cantor, lat, R0, 0.01, pipeline_grid(cantor))
    assert not bad.holds and bad.metadata["good_fraction"] == 0.0


def test_heavy_atom_gives_high_density():
    N = N_LINE
    mu = DiscreteMeasure(np.vstack([LINE, [[0.5, 0.0]]]), np.r_[W, 100 / N])
    tree = tree_at(mu, 2)
    assert "HD" in families(tree)
    assert tree.check_invariants() == []
    # oracle: walk down the cubes holding the heavy atom and stop at the first
    # one whose normalized density exceeds A
    chain = sorted((Q for Q in tree.lattice.cubes if N in Q.atoms.tolist() and Q.level >= tree.root.level),
                   key=lambda Q: Q.level)
    first = next(Q for Q in chain if tree.mu.ball_mass(Q.center, 3 * Q.r_big) > tree.params.A * Q.ell)
    assert tree.labels[first.id] == "HD"
    assert all(tree.labels[Q.id] == "Tree" for Q in chain if Q.level < first.level)


def test_light_stretch_gives_low_density():
    w = W.copy()
    w[(T > 0.35) & (T < 0.5)] *= 1e-4
    tree = tree_at(DiscreteMeasure(LINE, w), 2)
    assert families(tree) == {"LD"}
    for q in tree.stop:
        Q = tree.lattice.cubes[q]
        assert tree.mu.ball_mass(Q.center, 1.5 * Q.r_big) < tree.params.tau * Q.ell


def test_bad_atoms_give_bad_cubes():
    bad = np.nonzero((T > 0.45) & (T < 0.5))[0]
    tree = tree_at(DiscreteMeasure(LINE, W), 2, bad)
    assert families(tree) == {"BS"}
    badset = set(bad.tolist())
    for q in tree.stop:
        atoms = tree.lattice.cubes[q].atoms
        assert sum(a in badset for a in atoms) > 0.5 * len(atoms)


def test_bend_gives_big_angle():
    bent = np.c_[T, np.where(T > 0.5, 0.3 * (T - 0.5), 0.0)]
    tree = tree_at(DiscreteMeasure(bent, W), 2)
    assert families(tree) == {"BA"}
    for q in tree.stop:
        assert plane_angle(tree.planes[q], tree.L0) > tree.params.theta
    assert tree.check_invariants() == []


def test_crossing_lines_give_big_angles():
    mu = generate(GeneratorSpec("two_lines", {"angle": 0.6}, atoms=2048))
    mu = mu.transformed(np.eye(2), np.array([0.5, 0.0]))
    tree = tree_at(mu, 3)
    assert "BA" in families(tree)

    def pca_direction(Q):
        idx = mu.ball_indices(Q.center, 3 * Q.r_big)
        P, w = mu.points[idx], mu.weights[idx]
        c = w @ P / w.sum()
        S = ((P - c) * w[:, None]).T @ (P - c)
        return np.linalg.eigh(S)[1][:, -1]

    e0 = pca_direction(tree.root)

    def angle(q):
        return math.acos(min(1.0, abs(float(pca_direction(tree.lattice.cubes[q]) @ e0))))
    theta = tree.params.theta
    assert all(angle(q) > theta for q in tree.stop if tree.stop_families[q][0] == "BA")
    assert all(angle(q) <= theta + 1e-9 for q in tree.tree)


def test_parallel_lines_give_far_mass():
    mu = DiscreteMeasure(np.vstack([LINE, LINE + [0.0, 0.02]]), np.r_[W, W])
    tree = tree_at(mu, 3)
    assert families(tree) == {"F"}
    assert len(tree.r_far) > 0
    assert tree.check_invariants() == []


def test_invariant_checker_catches_non_maximal_stop():
    tree = tree_at(DiscreteMeasure(np.c_[T, np.where(T > 0.5, 0.3 * (T - 0.5), 0.0)], W), 2)
    s = tree.stop[0]
    parent = tree.lattice.cubes[s].parent
    broken = dataclasses.replace(tree, stop=tree.stop + [parent])
    assert any(p["check"] == "stop_maximal" for p in broken.check_invariants())


def test_balanced_ball_spread_points():
    t = np.linspace(-1, 1, 401)
    mu = DiscreteMeasure(np.c_[t, 0.1 * t], np.full(401, 1 / 401))
    res = balanced_ball_test(mu, Ball([0.0, 0.0], 1.0))
    assert res.alternative == "a"
    x0, x1 = res.points
    assert np.linalg.norm(x1 - x0) >= 0.1 + 2 * 0.25
    assert res.spreads[0] >= res.required[0]


def test_balanced_ball_concentrated_mass():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(200, 2)) * 0.01
    mu = DiscreteMeasure(pts, np.full(200, 1 / 200))
    res = balanced_ball_test(mu, Ball([0.0, 0.0], 1.0), lift_constant=0.2)
    assert res.alternative == "b"
    assert res.mass_fraction >= 0.5
    for i, a in enumerate(res.balls):
        for b in res.balls[i + 1:]:
            assert np.linalg.norm(a.center - b.center) >= 10 * (a.radius + b.radius)


def test_flat_balls_are_balanced():
    """Balls whose alpha on 1.1B is at most C gamma (C = 1) certify (a)."""
    search = PlaneSearchConfig(K=0, atom_cap=96)
    rng = np.random.default_rng(11)
    flat = 0
    for _ in range(50):
        mu = perturbed_plane(atoms=400, height=float(rng.uniform(0, 0.05)),
                             frequency=float(rng.integers(1, 4)))
        x = mu.points[int(rng.integers(100, 300))]
        r = float(rng.uniform(0.05, 0.3))
        if alpha(mu, Ball(x, 1.1 * r), 1, search).value <= 0.1:
            flat += 1
            assert balanced_ball_test(mu, Ball(x, r), gamma=0.1).alternative == "a"
    assert flat >= 40


def test_balanced_ball_empty():
    mu = DiscreteMeasure([[5.0, 5.0]], [1.0])
    assert balanced_ball_test(mu, Ball([0.0, 0.0], 1.0)).alternative == "inconclusive"


def test_affine_piece_lies_on_plane(rng):
    for _ in range(20):
        d, n = 3, 1
        L0 = AffinePlane(rng.normal(size=d), rng.normal(size=(n, d)))
        frame = L0.frame + 0.3 * rng.normal(size=(n, d))
        L = AffinePlane(rng.normal(size=d), frame)
        A, b = _affine_piece(L, L0.base, L0.frame, L0.normal_frame())
        u = rng.normal(size=(10, n))
        lifted = L0.base + u @ L0.frame + (u @ A.T + b) @ L0.normal_frame()
        assert L.dist(lifted).max() <= 1e-9
        assert np.allclose(L0.coords(lifted), u)


def test_bump_profile():
    t = np.linspace(0, 4, 4001)
    v = bump_1d(t)
    assert np.all(v[t <= 2] == 1.0) and np.all(v[t >= 3] == 0.0)
    assert np.all(np.diff(v) <= 0)
    slope = np.diff(v) / np.diff(t)
    assert abs(slope[1999]) < 1e-5 and abs(slope[2999]) < 1e-5


def test_dorronsoro_zero_graph():
    g = ExplicitGraph(lambda u: np.zeros(len(u)), [0.0], [1.0], 1 / 32)
    res = dorronsoro_check(g, ScaleGrid(1 / 8, 0.5))
    assert res.lhs == 0.0 and res.rhs == 0.0 and res.ratio == 0.0


def test_dorronsoro_sine_rhs():
    def sine(u):
        t = u[:, 0]
        return np.where((t >= 0) & (t <= 1), 0.05 * np.sin(2 * np.pi * t), 0.0)
    g = ExplicitGraph(sine, [-1.0], [2.0], 1 / 96)
    res = dorronsoro_check(g, ScaleGrid(1 / 12, 1.5), center_stride=16)
    exact = (0.05 * 2 * np.pi) ** 2 / 2
    assert abs(res.rhs - exact) <= 0.02 * exact
    assert res.lhs > 0


def test_dorronsoro_rejects_unknown_normalization():
    g = ExplicitGraph(lambda u: np.zeros(len(u)), [0.0], [1.0], 1 / 8)
    with pytest.raises(ValueError):
        dorronsoro_check(g, normalization="bogus")
