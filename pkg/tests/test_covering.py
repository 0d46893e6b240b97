from collections import deque
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extproj.covering import (CoveringMapSpec, assign_indices, build_lift, bump, bump_sum,
                              check_lift, compute_patches, eval_g, eval_h, find_g_collisions,
                              min_vertex_spacing, read_lift, read_spec, refine_cover_at,
                              verify_covering, write_lift, write_spec)
from extproj.errors import BadIndex, NotACovering
from extproj.surfaces import circle_cover_spec, circle_mesh, torus_mesh


def identity_spec(K):
    return CoveringMapSpec(K, K, np.arange(K.n_vertices))


def brute_fibers(spec):
    """Vertex fiber sizes by direct counting."""
    counts = [0] * spec.target.n_vertices
    for v in spec.vertex_map:
        counts[int(v)] += 1
    return counts


def bfs_components(spec, members):
    """Facet-adjacency components by breadth-first search."""
    K = spec.source
    left = set(members)
    comps = []
    while left:
        start = left.pop()
        comp = {start}
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in list(left):
                if len(set(K.maximal[i]) & set(K.maximal[j])) == K.dim:
                    left.remove(j)
                    comp.add(j)
                    queue.append(j)
        comps.append(frozenset(comp))
    return sorted(comps, key=min)


def test_identity_torus_degree_one():
    rep = verify_covering(identity_spec(torus_mesh(n_u=16, n_v=8)))
    assert rep.ok and rep.degree == 1 and rep.violations == []


def test_double_cycle_degree_two():
    spec = circle_cover_spec(2, 12)
    rep = verify_covering(spec)
    assert rep.ok and rep.degree == 2
    assert set(brute_fibers(spec)) == {2}


def test_collapsing_map_rejected():
    K = circle_mesh(6)
    rep = verify_covering(CoveringMapSpec(K, K, np.array([0, 0, 1, 2, 3, 4])))
    assert not rep.ok
    assert any(v["kind"] == "collapse" for v in rep.violations)


def test_uneven_fibers_rejected():
    src, tgt = circle_mesh(9), circle_mesh(3)
    rep = verify_covering(CoveringMapSpec(src, tgt, np.arange(9) % 3))
    assert rep.ok and rep.degree == 3
    rep = verify_covering(CoveringMapSpec(circle_mesh(8), circle_mesh(3),
                                          np.array([0, 1, 2, 0, 1, 2, 0, 1])))
    assert not rep.ok


def test_bad_vertex_map():
    K = circle_mesh(4)
    with pytest.raises(BadIndex):
        CoveringMapSpec(K, K, np.array([0, 1, 2]))
    with pytest.raises(BadIndex):
        CoveringMapSpec(K, K, np.array([0, 1, 2, 7]))


def test_patches_rejects_non_cover():
    K = circle_mesh(6)
    with pytest.raises(NotACovering):
        compute_patches(CoveringMapSpec(K, K, np.array([0, 0, 1, 2, 3, 4])))


@pytest.mark.parametrize("spec", [circle_cover_spec(3, 10), identity_spec(torus_mesh(n_u=12, n_v=6))])
def test_patches_match_bfs(spec):
    pd = compute_patches(spec)
    target_index = {s: i for i, s in enumerate(spec.target.maximal)}
    pre = [[] for _ in spec.target.maximal]
    for i, s in enumerate(spec.source.maximal):
        pre[target_index[spec.image(s)]].append(i)
    for t, members in enumerate(pre):
        assert list(pd.patches[t]) == bfs_components(spec, members)


def test_indices_degree_one_all_ones():
    spec = identity_spec(torus_mesh(n_u=12, n_v=6))
    ia = assign_indices(compute_patches(spec), spec)
    assert np.all(ia.index_X == 1)


def test_indices_seed_zero_by_vertex_order():
    n = 10
    spec = circle_cover_spec(2, n)
    ia = assign_indices(compute_patches(spec), spec, seed=0)
    for i in range(n):
        assert (ia.index_X[i], ia.index_X[i + n]) == (1, 2)


def test_indices_other_seed_still_valid():
    spec = circle_cover_spec(2, 16)
    lift = build_lift(spec, seed=1)
    labels = [tuple(lift.indices.index_X[f]) for f in lift.indices.fibers]
    assert {(2, 1)} <= set(labels)
    assert all(sorted(lab) == [1, 2] for lab in labels)
    assert check_lift(lift, 500, seed=0).passed


def test_index_S_consistent_with_vertices():
    spec = circle_cover_spec(3, 8)
    lift = build_lift(spec, seed=2)
    for t, comps in enumerate(lift.patches.patches):
        for j, comp in enumerate(comps):
            verts = np.unique(spec.source.simplex_array[list(comp)].ravel())
            labels = set(lift.indices.index_X[verts].tolist())
            # the anchor vertex carries the patch label
            assert lift.indices.index_S[t, j] in labels


def test_g_at_vertices():
    spec = circle_cover_spec(2, 8)
    lift = build_lift(spec)
    star = [s[0] for s in spec.source.vertex_star()]
    G = eval_g(lift, spec.source.vertices, np.array(star))
    np.testing.assert_array_equal(G[:, :2], spec.target.vertices[spec.vertex_map])
    np.testing.assert_array_equal(G[:, 2], lift.indices.index_X)


def test_g_identity_is_graph_at_height_one(rng):
    K = torus_mesh(n_u=12, n_v=6)
    lift = build_lift(identity_spec(K))
    X, _, _ = K.sample_points(50, rng)
    G = eval_g(lift, X)
    np.testing.assert_allclose(G[:, :3], X, atol=1e-12)
    np.testing.assert_array_equal(G[:, 3], 1.0)


def test_gluing_agreement_on_shared_edges(rng):
    spec = circle_cover_spec(2, 6)
    lift = build_lift(spec, seed=3)
    K = spec.source
    # points on shared faces evaluate the same from both incident simplices
    for i, j in combinations(range(len(K.maximal)), 2):
        common = set(K.maximal[i]) & set(K.maximal[j])
        if len(common) != K.dim:
            continue
        x = K.vertices[sorted(common)].mean(axis=0)
        a = eval_h(lift, x[None], i)[0]
        b = eval_h(lift, x[None], j)[0]
        assert np.abs(a - b).max() <= 1e-12


@given(st.integers(0, 10_000))
def test_stack_height_within_label_range(seed):
    spec = circle_cover_spec(3, 12)
    lift = build_lift(spec, seed=seed % 5)
    X, _, _ = spec.source.sample_points(64, np.random.default_rng(seed))
    h = eval_g(lift, X)[:, 2]
    assert np.all(h >= 1 - 1e-12) and np.all(h <= 3 + 1e-12)


@given(st.integers(0, 10_000))
def test_projection_recovers_cover_map(seed):
    spec = circle_cover_spec(2, 16)
    lift = build_lift(spec)
    X, _, _ = spec.source.sample_points(64, np.random.default_rng(seed))
    H = eval_h(lift, X)
    np.testing.assert_allclose(H[:, :2], spec.map_points(X), atol=1e-12)


def test_bump_profile():
    assert bump(0.0, 0.5) == 1.0
    assert bump(0.5, 0.5) == 0.0 and bump(0.7, 0.5) == 0.0
    r = np.linspace(0, 0.5, 50)
    assert np.all(np.diff(bump(r, 0.5)) <= 0)


def test_bump_sum_is_one_at_vertices_and_zero_between():
    spec = circle_cover_spec(2, 8)
    lift = build_lift(spec)
    np.testing.assert_array_equal(bump_sum(lift, spec.source.vertices), 1.0)
    V = spec.source.vertices
    mid = 0.5 * (V[0] + V[1])
    assert bump_sum(lift, mid[None])[0] == 0.0


def test_large_bump_radius_flagged():
    spec = circle_cover_spec(2, 16)
    lift = build_lift(spec, bump_radius=0.6 * min_vertex_spacing(spec.source))
    rep = check_lift(lift, 200)
    assert "BumpOverlap" in rep.flags and not rep.passed


def test_degree_matches_fiber_labels():
    for d in (1, 2, 4):
        lift = build_lift(circle_cover_spec(d, 8))
        assert lift.degree == d
        assert sorted(set(lift.indices.index_X.tolist())) == list(range(1, d + 1))


def test_identity_margin_is_vertex_spacing():
    K = torus_mesh(n_u=12, n_v=6)
    rep = check_lift(build_lift(identity_spec(K)), 300)
    assert rep.passed
    # h(v) = (v, 1, 0) on vertices, so the vertex margin is the source spacing
    assert abs(rep.vertex_margin - min_vertex_spacing(K)) <= 1e-12


def test_collisions_found_and_separated():
    lift = build_lift(circle_cover_spec(2, 32))
    cols = find_g_collisions(lift)
    assert len(cols) >= 1
    for c in cols:
        assert c.g_dist <= 1e-12
        assert c.h_dist > 1e-5
        assert np.linalg.norm(c.x1 - c.x2) > 0.1


def test_identity_cover_has_no_collisions():
    assert find_g_collisions(build_lift(identity_spec(torus_mesh(n_u=12, n_v=6)))) == []


def test_spec_and_lift_roundtrip(tmp_path):
    spec = circle_cover_spec(3, 10)
    write_spec(spec, tmp_path / "spec.json")
    spec2 = read_spec(tmp_path / "spec.json")
    np.testing.assert_array_equal(spec2.vertex_map, spec.vertex_map)
    lift = build_lift(spec, seed=4, bump_radius=0.01)
    write_lift(lift, tmp_path / "lift.json", "spec.json")
    lift2 = read_lift(tmp_path / "lift.json")
    np.testing.assert_array_equal(lift2.indices.index_X, lift.indices.index_X)
    assert lift2.bump_radius == 0.01
    X, _, _ = spec.source.sample_points(30, np.random.default_rng(0))
    np.testing.assert_array_equal(eval_h(lift2, X), eval_h(lift, X))


def test_refine_cover_makes_fiber_vertices():
    spec = circle_cover_spec(2, 12)
    V = spec.target.vertices
    y = 0.7 * V[0] + 0.3 * V[1]
    ref = refine_cover_at(spec, y[None])
    rep = verify_covering(ref)
    assert rep.ok and rep.degree == 2
    assert np.any(np.all(ref.target.vertices == y, axis=1))
    assert ref.source.n_vertices == spec.source.n_vertices + 2
