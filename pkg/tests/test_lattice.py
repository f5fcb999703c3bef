from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatscan.errors import ParameterInfeasible, RootReached
from flatscan.generators import GeneratorSpec, generate
from flatscan.lattice import (
    SEPARATION,
    ancestor_at_gap,
    build_lattice,
    check_axioms,
    density_drop_report,
    detect_doubling,
    detect_strongly_doubling,
    doubling_radius_scan,
)
from flatscan.measure import DiscreteMeasure


def brute_force_structure(lat, N):
    """Independent partition and nesting check over all cube pairs."""
    problems = []
    for k in range(lat.depth + 1):
        sets = [set(Q.atoms.tolist()) for Q in lat.level(k)]
        union = set().union(*sets)
        if union != set(range(N)) or sum(len(s) for s in sets) != N:
            problems.append(("partition", k))
    for Q in lat.cubes:
        for R in lat.cubes:
            if R.level < Q.level:
                a, b = set(Q.atoms.tolist()), set(R.atoms.tolist())
                if a & b and not a <= b:
                    problems.append(("nesting", Q.id, R.id))
    return problems


def test_single_atom():
    mu = DiscreteMeasure([[0.5, 0.5]], [1.0])
    lat = build_lattice(mu, depth=3)
    assert [len(lat.levels[k]) for k in range(4)] == [1, 1, 1, 1]
    assert check_axioms(lat, mu) == []


def test_grid_four_by_four():
    g = np.arange(4.0)
    pts = np.array([[a, b] for a in g for b in g])
    mu = DiscreteMeasure(pts, np.ones(16))
    lat = build_lattice(mu, A0=4, depth=3)
    assert 1 <= len(lat.levels[1]) <= 16
    assert check_axioms(lat, mu) == []
    assert brute_force_structure(lat, 16) == []


def test_far_clusters_never_mix(rng):
    a = rng.normal(size=(30, 2)) * 0.01
    b = rng.normal(size=(30, 2)) * 0.01 + [100.0, 0.0]
    mu = DiscreteMeasure(np.vstack([a, b]), np.ones(60))
    lat = build_lattice(mu, A0=4, depth=4)
    checked = 0
    for k in range(1, lat.depth + 1):
        # two cubes need 5 (r1 + r2) <= gap with r >= A0^-k, so separation is
        # only possible once the net spacing 10 A0^-k is below the gap
        if SEPARATION * lat.scale(k) >= 100.0:
            continue
        checked += 1
        for Q in lat.level(k):
            assert (Q.atoms < 30).all() or (Q.atoms >= 30).all()
    assert checked >= 2


def test_deterministic(rng):
    mu = DiscreteMeasure(rng.normal(size=(300, 2)), rng.uniform(0.5, 1, 300))
    assert build_lattice(mu).to_json() == build_lattice(mu).to_json()


def test_parameter_infeasible():
    mu = DiscreteMeasure([[0.0, 0.0]], [1.0])
    with pytest.raises(ParameterInfeasible):
        build_lattice(mu, A0=1.5)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10_000), kind=st.sampled_from(["uniform", "line", "clusters"]))
def test_axioms_on_random_measures(seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "uniform":
        pts = rng.uniform(size=(400, 2))
    elif kind == "line":
        pts = np.stack([rng.uniform(size=400), 0.01 * rng.normal(size=400)], 1)
    else:
        pts = rng.normal(size=(400, 3)) * 0.02 + rng.integers(0, 3, (400, 1)) * [1.0, 0.5, 0.0]
    mu = DiscreteMeasure(pts, rng.uniform(0.1, 2, 400))
    lat = build_lattice(mu, check=False)
    assert check_axioms(lat, mu) == []


def test_ancestor_lookup():
    mu = generate(GeneratorSpec("flat_plane", {"n": 1}, atoms=256))
    lat = build_lattice(mu, depth=4)
    Q = lat.level(3)[0]
    assert ancestor_at_gap(lat, Q, 0).id == Q.id
    assert ancestor_at_gap(lat, Q, 1).id == Q.parent
    assert ancestor_at_gap(lat, Q, 3).level == 0
    with pytest.raises(RootReached):
        ancestor_at_gap(lat, Q, 4)


def test_doubling_uniform_line():
    mu = generate(GeneratorSpec("flat_plane", {"n": 1, "length": 1.0}, atoms=2000))
    lat = build_lattice(mu, depth=5)
    flags = detect_doubling(lat, mu, 300)
    for Q in lat.cubes:
        direct = mu.ball_mass(Q.center, 100 * Q.r) / mu.ball_mass(Q.center, Q.r)
        assert flags[Q.id] == (direct <= 300)
        interior = 0.2 < Q.center[0] < 0.8
        if interior:
            assert flags[Q.id]


def test_isolated_atom_always_doubling():
    mu = DiscreteMeasure([[0.0, 0.0]], [1.0])
    lat = build_lattice(mu, depth=2)
    assert detect_doubling(lat, mu, 1.0).all()
    assert detect_strongly_doubling(lat, mu, 1.0).all()


def test_heavy_neighbour_breaks_doubling():
    k = 200
    cluster = np.stack([np.linspace(0, 0.01, k), np.zeros(k)], 1)
    pts = np.vstack([cluster, [[0.3, 0.0]]])
    mu = DiscreteMeasure(pts, np.concatenate([np.full(k, 1e-3), [50.0]]))
    lat = build_lattice(mu, depth=6)
    flags = detect_doubling(lat, mu, 2.0)
    sflags = detect_strongly_doubling(lat, mu, 2.0)
    hits = 0
    for Q in lat.cubes:
        near = np.linalg.norm(Q.center - [0.3, 0.0])
        if Q.center[0] <= 0.01 and Q.r < near < 100 * Q.r:
            assert not flags[Q.id]
            hits += 1
        if Q.center[0] <= 0.01 and Q.r < near < 2800 * Q.r:
            assert not sflags[Q.id]
    assert hits > 0


def test_radius_scan_isolated_and_flat():
    mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])
    scan = doubling_radius_scan(mu, [0.0, 0.0], 2.0, radii=np.geomspace(0.01, 0.4, 10))
    assert len(scan.qualifying) == 10
    line = generate(GeneratorSpec("flat_plane", {"n": 1, "length": 1.0}, atoms=4000))
    radii = np.geomspace(0.005, 0.1, 12)
    scan = doubling_radius_scan(line, [0.5, 0.0], 2.0, radii=radii)
    assert len(scan.qualifying) == len(radii)


def test_radius_scan_cantor():
    mu = generate(GeneratorSpec("cantor4", depth=5))
    radii = 4.0 ** -np.arange(1, 5)
    for x in mu.points[::97]:
        scan = doubling_radius_scan(mu, x, 4.0, radii=radii)
        ratio_oracle = [mu.ball_mass(x, 4 * r) / mu.ball_mass(x, r) for r in radii]
        assert np.allclose(scan.ratios, ratio_oracle)
        assert len(scan.qualifying) == len(radii)


def test_density_drop_is_reported():
    mu = generate(GeneratorSpec("two_lines", {"angle": 0.5}, atoms=800))
    lat = build_lattice(mu, depth=4)
    detect_doubling(lat, mu, 7.0)
    rep = density_drop_report(lat, mu)
    for row in rep:
        assert set(row) >= {"cube", "ancestor", "gap", "lhs", "rhs", "holds"}
        assert row["gap"] >= 1
