import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extproj.covering import verify_covering
from extproj.errors import BadDegree, DimMismatch, OutOfDomain
from extproj.surfaces import (build_phi_psi, circle_cover, circle_cover_spec, curve_fiber_count,
                              gamma, p4_self_intersections, project, tube_surface,
                              verify_fiber_count)

PT = np.array([1.0, 2.0, 3.0, 4.0, 5.0])


@pytest.mark.parametrize("name, expected", [
    ("P2", [1, 2]), ("P3", [1, 2, 3]), ("P4", [1, 2, 3, 4]),
    ("Q3", [1, 2, 4]), ("Q4", [1, 2, 4, 5]),
])
def test_projection_examples(name, expected):
    np.testing.assert_array_equal(project(PT, name), expected)


def test_projection_r2_and_errors():
    np.testing.assert_array_equal(project([1.0, 2.0, 4.0, 5.0], "R2"), [1, 2])
    with pytest.raises(DimMismatch):
        project([1.0, 2.0, 3.0], "P2")
    with pytest.raises(ValueError):
        project(PT, "Z9")


def test_circle_cover_fiber():
    c = circle_cover(3)
    F = c.fiber(np.array([1.0, 0.0]))
    ang = np.sort(np.mod(np.arctan2(F[:, 1], F[:, 0]), 2 * np.pi))
    np.testing.assert_allclose(ang, [0, 2 * np.pi / 3, 4 * np.pi / 3], atol=1e-12)
    np.testing.assert_allclose(c.map(F), np.tile([1.0, 0.0], (3, 1)), atol=1e-12)


@given(st.integers(1, 6), st.floats(-np.pi, np.pi))
def test_circle_cover_fiber_maps_back(d, t):
    y = np.array([np.cos(t), np.sin(t)])
    F = circle_cover(d).fiber(y)
    assert F.shape == (d, 2)
    np.testing.assert_allclose(circle_cover(d).map(F), np.tile(y, (d, 1)), atol=1e-9)


def test_circle_cover_jacobian_matches_fd():
    c = circle_cover(2)
    x = np.array([[np.cos(0.3), np.sin(0.3)]])
    J = c.jacobian(x)[0]
    h = 1e-6
    fd = np.column_stack([(c.map(x[0] + h * e) - c.map(x[0] - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(J, fd, atol=1e-7)


@pytest.mark.parametrize("d", [0, -1, 1.5])
def test_bad_degree(d):
    with pytest.raises(BadDegree):
        circle_cover(d)
    with pytest.raises(BadDegree):
        circle_cover_spec(d, 8)


def test_phi_examples():
    p = build_phi_psi(2)
    assert p.phi(0.0) == 1.0 and p.phi(np.pi / 2) == 1.0
    assert p.phi(np.pi) == 0.5 and p.phi(-np.pi) == 0.5
    assert p.phi(2 * np.pi) == 2.0


def test_psi_is_one_sided():
    p = build_phi_psi(2)
    # the separating bump sits at the negative crossing only
    assert p.psi(-np.pi) == 1.0
    assert p.psi(np.pi) == 0.0
    assert p.psi(0.0) == 0.0


@pytest.mark.parametrize("k", [2, 3, 4])
def test_phi_even_and_plateaus(k):
    p = build_phi_psi(k)
    r = np.linspace(0, p.half_length, 997)
    np.testing.assert_array_equal(p.phi(r), p.phi(-r))
    for a, b, v in p.plateaus():
        np.testing.assert_allclose(p.phi(np.linspace(a, b, 50)), v, atol=1e-12)
    for c, v in p.midpoints():
        assert abs(p.phi(c) - v) <= 1e-12


@pytest.mark.parametrize("k", [2, 3])
def test_phi_derivative_matches_fd(k):
    p = build_phi_psi(k)
    r = np.linspace(-p.half_length + 0.1, p.half_length - 0.1, 301)
    h = 1e-6
    _, d = p.phi(r, derivative=True)
    np.testing.assert_allclose(d, (p.phi(r + h) - p.phi(r - h)) / (2 * h), atol=1e-5)
    _, dpsi = p.psi(r, derivative=True)
    np.testing.assert_allclose(dpsi, (p.psi(r + h) - p.psi(r - h)) / (2 * h), atol=1e-5)


def test_gamma_examples():
    p = build_phi_psi(2)
    np.testing.assert_array_equal(gamma(p, 0.0), [1, 0, 0, 1, 0])
    np.testing.assert_allclose(gamma(p, 2 * np.pi), [1, 0, 0, 2, 0], atol=1e-15)
    with pytest.raises(OutOfDomain):
        gamma(p, 2 * np.pi + 0.1)


def test_gamma_injective():
    p = build_phi_psi(2)
    lo, hi = p.domain
    r = np.linspace(lo, hi, 1441)[:-1]
    G = gamma(p, r)
    D = np.linalg.norm(G[:, None] - G[None], axis=2)
    np.fill_diagonal(D, np.inf)
    assert D.min() > 1e-3


def test_self_intersections_two_sheets():
    s = p4_self_intersections(build_phi_psi(2))
    assert s.arcs == []
    assert len(s.points) == 1
    np.testing.assert_allclose(s.points[0], [-np.pi, np.pi], atol=1e-12)


@pytest.mark.xfail(strict=True, reason="even phi with mirrored plateaus meets itself on arcs for k >= 3")
@pytest.mark.parametrize("k", [3, 4])
def test_self_intersections_isolated_for_more_sheets(k):
    s = p4_self_intersections(build_phi_psi(k))
    assert s.arcs == []
    expected = [(-j * np.pi, j * np.pi) for j in range(1, k)]
    np.testing.assert_allclose(sorted(s.points), sorted(expected), atol=1e-12)


def test_fiber_count_two_sheets():
    fc = curve_fiber_count(build_phi_psi(2))
    assert fc.histogram == {2: 720}


@pytest.mark.parametrize("k", [3, 4])
def test_fiber_count_modal(k):
    assert curve_fiber_count(build_phi_psi(k)).modal == k


def test_verify_fiber_count_collapses_repeats():
    cover = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
    fc = verify_fiber_count(cover, np.array([[1.0, 0.0]]), lambda X: X[:, :2])
    assert fc.counts.tolist() == [2]


def test_tube_is_double_cover_of_torus():
    tube = tube_surface(build_phi_psi(2), n_r=32, n_theta=8)
    rep = verify_covering(tube.spec)
    assert rep.ok and rep.degree == 2
    assert np.all(np.bincount(tube.spec.vertex_map) == 2)
    assert tube.source.euler_characteristic() == 0
    assert tube.target.euler_characteristic() == 0
    np.testing.assert_allclose(tube.target.vertices[tube.spec.vertex_map],
                               tube.source.vertices[:, :3], atol=1e-12)


def test_tube_rejects_more_sheets():
    with pytest.raises(ValueError):
        tube_surface(build_phi_psi(3))
