"""Explicit covers: circle d-folds, the space curve gamma and its tube.

The curve ``gamma(r) = (cos r, sin r, 0, phi(r), psi(r))`` winds around the
unit circle several times while ``phi`` lifts successive windings to different
heights and ``psi`` separates the windings where the heights cross.  Thickening
it gives a torus in ``R^5`` whose projection to the first three coordinates is
a 2-to-1 cover of a torus in ``R^3``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from ._validation import as_points
from .covering import CoveringMapSpec
from .errors import BadDegree, DimMismatch, MergeAmbiguity, OutOfDomain
from .simplicial import SimplicialComplex, build_complex

PROJECTIONS = {
    "P2": (5, (0, 1)),
    "P3": (5, (0, 1, 2)),
    "P4": (5, (0, 1, 2, 3)),
    "Q3": (5, (0, 1, 3)),
    "Q4": (5, (0, 1, 3, 4)),
    "R2": (4, (0, 1)),
}


def project(points, which: str) -> np.ndarray:
    """Coordinate projection by name (``P2``, ``P3``, ``P4``, ``Q3``, ``Q4``, ``R2``)."""
    if which not in PROJECTIONS:
        raise ValueError(f"unknown projection {which!r}")
    dim, keep = PROJECTIONS[which]
    X, single = as_points(points, dim)
    Y = X[:, list(keep)]
    return Y[0] if single else Y


# -- meshes -----------------------------------------------------------------

def circle_mesh(n: int, radius: float = 1.0) -> SimplicialComplex:
    """Regular ``n``-gon inscribed in the circle of the given radius."""
    if n < 3:
        raise ValueError("a circle mesh needs at least 3 segments")
    t = 2 * np.pi * np.arange(n) / n
    V = radius * np.column_stack([np.cos(t), np.sin(t)])
    return build_complex(V, [(i, (i + 1) % n) for i in range(n)])


def _grid_triangles(n_u: int, n_v: int) -> list[tuple[int, int, int]]:
    # periodic quad grid, every quad split along the same diagonal
    tris = []
    for i in range(n_u):
        for j in range(n_v):
            a = i * n_v + j
            b = ((i + 1) % n_u) * n_v + j
            c = ((i + 1) % n_u) * n_v + (j + 1) % n_v
            e = i * n_v + (j + 1) % n_v
            tris.append((a, b, c))
            tris.append((a, c, e))
    return tris


def torus_mesh(R: float = 2.0, r: float = 0.5, n_u: int = 64, n_v: int = 16) -> SimplicialComplex:
    """Torus of revolution around the z-axis, triangulated on a ``n_u x n_v`` grid."""
    if not 0 < r < R:
        raise ValueError("torus radii must satisfy 0 < r < R")
    u = 2 * np.pi * np.arange(n_u) / n_u
    v = 2 * np.pi * np.arange(n_v) / n_v
    U, W = np.meshgrid(u, v, indexing="ij")
    ring = R + r * np.cos(W)
    V = np.column_stack([(ring * np.cos(U)).ravel(), (ring * np.sin(U)).ravel(),
                         (r * np.sin(W)).ravel()])
    return build_complex(V, _grid_triangles(n_u, n_v))


# -- circle covers ----------------------------------------------------------

class CircleCover:
    """The angle-multiplying cover ``theta -> d * theta`` of the unit circle."""

    def __init__(self, d: int):
        if int(d) != d or d < 1:
            raise BadDegree(f"degree must be a positive integer, got {d!r}")
        self.d = int(d)

    def map(self, X) -> np.ndarray:
        X, single = as_points(X, 2)
        th = self.d * np.arctan2(X[:, 1], X[:, 0])
        Y = np.column_stack([np.cos(th), np.sin(th)])
        return Y[0] if single else Y

    def jacobian(self, X) -> np.ndarray:
        """Ambient ``2 x 2`` Jacobians, shape ``(N, 2, 2)``."""
        X, _ = as_points(X, 2)
        th = np.arctan2(X[:, 1], X[:, 0])
        grad_th = np.column_stack([-X[:, 1], X[:, 0]]) / np.sum(X ** 2, axis=1)[:, None]
        dY = self.d * np.column_stack([-np.sin(self.d * th), np.cos(self.d * th)])
        return dY[:, :, None] * grad_th[:, None, :]

    def fiber(self, y) -> np.ndarray:
        """The ``d`` preimages of ``y``, by increasing angle from ``arg(y) / d``."""
        y = np.asarray(y, dtype=float)
        base = np.arctan2(y[1], y[0]) / self.d
        th = base + 2 * np.pi * np.arange(self.d) / self.d
        return np.column_stack([np.cos(th), np.sin(th)])


def circle_cover(d: int) -> CircleCover:
    return CircleCover(d)


def circle_cover_spec(d: int, n_segments: int = 256) -> CoveringMapSpec:
    """Simplicial version: a ``d * n``-gon wrapped ``d`` times around an ``n``-gon."""
    if int(d) != d or d < 1:
        raise BadDegree(f"degree must be a positive integer, got {d!r}")
    src = circle_mesh(d * n_segments)
    tgt = circle_mesh(n_segments)
    return CoveringMapSpec(src, tgt, np.arange(d * n_segments) % n_segments)


# -- the curve gamma --------------------------------------------------------

def smoothstep(t):
    """Quintic ``6t^5 - 15t^4 + 10t^3`` clamped to ``[0, 1]``, and its derivative."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t ** 2), 30 * t ** 2 * (1 - t) ** 2


def _bump_profile(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    der = np.zeros_like(s)
    inside = np.abs(s) < 1
    q = 1.0 - s[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / q)
    der[inside] = out[inside] * (-2.0 * s[inside] / q ** 2)
    return out, der


@dataclass(frozen=True)
class PhiPsiProfile:
    """Height profile ``phi`` and separating bump ``psi`` for ``k`` sheets.

    On ``r >= 0``: ``phi = 1`` on ``[0, pi/2]``; around each ``(2j - 1) pi``
    it dips from ``j`` to ``j - 1/2`` and climbs to ``j + 1``; it rests at
    ``j + 1`` up to ``(2j + 1/2) pi``.  ``phi`` is extended evenly.  ``psi`` is
    a unit-width bump at every ``-(2j - 1) pi``.
    """

    k: int

    @property
    def half_length(self) -> float:
        return 2 * (self.k - 1) * np.pi

    @property
    def domain(self) -> tuple[float, float]:
        return -self.half_length, self.half_length

    def phi(self, r, derivative: bool = False):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)
        val = np.ones_like(a)
        der = np.zeros_like(a)
        h = np.pi / 2
        for j in range(1, self.k):
            c = (2 * j - 1) * np.pi
            s_down, ds_down = smoothstep((a - (c - h)) / h)
            s_up, ds_up = smoothstep((a - c) / h)
            # each ramp adds net +1: -1/2 on the way down, +3/2 on the way up
            val = val - 0.5 * s_down + 1.5 * s_up
            der = der - 0.5 * ds_down / h + 1.5 * ds_up / h
        der = der * np.sign(r)
        return (val, der) if derivative else val

    def psi(self, r, derivative: bool = False):
        r = np.asarray(r, dtype=float)
        val = np.zeros_like(r)
        der = np.zeros_like(r)
        for j in range(1, self.k):
            b, db = _bump_profile(r + (2 * j - 1) * np.pi)
            val = val + b
            der = der + db
        return (val, der) if derivative else val

    def plateaus(self) -> list[tuple[float, float, float]]:
        """``(start, stop, value)`` of the constant pieces on ``r >= 0``."""
        out = [(0.0, np.pi / 2, 1.0)]
        for j in range(1, self.k - 1):
            out.append(((2 * j - 0.5) * np.pi, (2 * j + 0.5) * np.pi, j + 1.0))
        out.append(((2 * (self.k - 1) - 0.5) * np.pi, self.half_length, float(self.k)))
        return out

    def midpoints(self) -> list[tuple[float, float]]:
        return [((2 * j - 1) * np.pi, j - 0.5) for j in range(1, self.k)]


def build_phi_psi(k: int) -> PhiPsiProfile:
    if int(k) != k or k < 2:
        raise BadDegree(f"the curve needs k >= 2 sheets, got {k!r}")
    return PhiPsiProfile(int(k))


def gamma(profile: PhiPsiProfile, r) -> np.ndarray:
    """Points of the closed curve in ``R^5``; ``r`` scalar or array."""
    r_arr = np.asarray(r, dtype=float)
    lo, hi = profile.domain
    if np.any(r_arr < lo - 1e-12) or np.any(r_arr > hi + 1e-12) or not np.all(np.isfinite(r_arr)):
        raise OutOfDomain(f"parameter outside [{lo:.6g}, {hi:.6g}]")
    flat = np.atleast_1d(r_arr)
    G = np.column_stack([np.cos(flat), np.sin(flat), np.zeros_like(flat),
                         profile.phi(flat), profile.psi(flat)])
    return G[0] if r_arr.ndim == 0 else G


def curve_samples(profile: PhiPsiProfile, n_base: int = 720):
    """Curve parameters aligned so every base angle ``2 pi m / n_base`` recurs.

    Returns ``(r, base_angles)``; ``r`` holds each base angle shifted by every
    whole turn that stays inside the domain, endpoint included once.
    """
    lo, hi = profile.domain
    step = 2 * np.pi / n_base
    n_steps = int(round((hi - lo) / step))
    r = lo + step * np.arange(n_steps)
    return r, 2 * np.pi * np.arange(n_base) / n_base


@dataclass
class SelfIntersections:
    points: list
    arcs: list


def p4_self_intersections(profile: PhiPsiProfile, n_grid: int = 4096) -> SelfIntersections:
    """Parameter pairs ``r < s`` with ``P4(gamma(r)) = P4(gamma(s))``.

    Equal first two coordinates force ``s = r + 2 pi l``; for each winding
    offset ``l`` the roots of ``phi(r) - phi(r + 2 pi l)`` are bracketed on a
    grid and polished with Brent's method.  Intervals on which the difference
    vanishes identically are returned as arcs.
    """
    lo, hi = profile.domain
    n_turns = int(round((hi - lo) / (2 * np.pi)))
    points, arcs = [], []
    for ell in range(1, n_turns):
        shift = 2 * np.pi * ell
        a, b = lo, hi - shift

        def diff(r):
            return profile.phi(r) - profile.phi(r + shift)

        r = np.linspace(a, b, n_grid + 1)
        D = diff(r)
        zero = np.abs(D) <= 1e-13
        i = 0
        while i < len(r):
            if zero[i]:
                j = i
                while j + 1 < len(r) and zero[j + 1]:
                    j += 1
                if j > i:
                    arcs.append((float(r[i]), float(r[j]), float(r[i] + shift), float(r[j] + shift)))
                else:
                    points.append((float(r[i]), float(r[i] + shift)))
                i = j + 1
                continue
            if i + 1 < len(r) and not zero[i + 1] and D[i] * D[i + 1] < 0:
                root = brentq(diff, r[i], r[i + 1], xtol=1e-14, rtol=1e-15)
                points.append((float(root), float(root + shift)))
            i += 1
    return SelfIntersections(points, arcs)


# -- fiber counting ---------------------------------------------------------

@dataclass
class FiberCount:
    counts: np.ndarray
    histogram: dict
    modal: int


def verify_fiber_count(cover_points, base_points, projection, tol: float = 1e-6) -> FiberCount:
    """Count distinct cover points above each base point.

    ``projection`` is a projection name or a callable.  Cover points projecting
    within ``tol`` of a base point are counted once per cluster of points
    closer than ``tol`` to each other, so repeated samples of one point count
    once.
    """
    C = np.atleast_2d(np.asarray(cover_points, dtype=float))
    B = np.atleast_2d(np.asarray(base_points, dtype=float))
    if C.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("cover and base samples must be nonempty")
    proj = projection if callable(projection) else (lambda X: project(X, projection))
    PC = proj(C)
    if PC.shape[1] != B.shape[1]:
        raise DimMismatch("projected cover points and base points differ in dimension")
    hits = cKDTree(PC).query_ball_point(B, r=tol)
    counts = np.zeros(B.shape[0], dtype=np.int64)
    for i, idx in enumerate(hits):
        if not idx:
            continue
        ds = DisjointSet(idx)
        for a, b in cKDTree(C[idx]).query_pairs(r=tol):
            ds.merge(idx[a], idx[b])
        counts[i] = ds.n_subsets
    values, freq = np.unique(counts, return_counts=True)
    histogram = {int(v): int(f) for v, f in zip(values, freq)}
    modal = int(values[np.argmax(freq)])
    return FiberCount(counts, histogram, modal)


def curve_fiber_count(profile: PhiPsiProfile, n_base: int = 720, tol: float = 1e-6) -> FiberCount:
    """Fiber sizes of ``R2`` restricted to ``mu = Q4(gamma)`` over the unit circle."""
    r, angles = curve_samples(profile, n_base)
    mu = project(gamma(profile, r), "Q4")
    base = np.column_stack([np.cos(angles), np.sin(angles)])
    return verify_fiber_count(mu, base, "R2", tol)


# -- the tube ---------------------------------------------------------------

def tube_points(profile: PhiPsiProfile, r, theta, rho: float = 0.4) -> np.ndarray:
    """Tube of radius ``rho`` around ``gamma``, offset along the planar normal and ``s``."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    g = gamma(profile, r)
    ring = 1.0 + rho * np.cos(theta)
    out = np.array(g, dtype=float, copy=True)
    out[..., 0] = ring * np.cos(r)
    out[..., 1] = ring * np.sin(r)
    out[..., 2] = rho * np.sin(theta)
    return out


@dataclass(frozen=True, eq=False)
class TubeCover:
    source: SimplicialComplex
    target: SimplicialComplex
    spec: CoveringMapSpec
    rho: float
    n_r: int
    n_theta: int
    profile: PhiPsiProfile


def tube_surface(profile: PhiPsiProfile, rho: float = 0.4, n_r: int = 64, n_theta: int = 16) -> TubeCover:
    """Triangulated tube in ``R^5`` and its ``P3`` image with the induced cover.

    Source vertices ``(i, j)`` and ``(i + n_r/2, j)`` lie one full turn apart
    and share their ``P3`` image; these are merged into one target vertex.
    """
    if profile.k != 2:
        raise ValueError("the tube is a 2-to-1 cover only for k = 2")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if n_r < 8 or n_theta < 8 or n_r % 2:
        raise ValueError("need n_r >= 8 (even) and n_theta >= 8")
    lo, hi = profile.domain
    r = lo + (hi - lo) * np.arange(n_r) / n_r
    th = -np.pi + 2 * np.pi * np.arange(n_theta) / n_theta
    Rg, Tg = np.meshgrid(r, th, indexing="ij")
    V = tube_points(profile, Rg.ravel(), Tg.ravel(), rho)
    source = build_complex(V, _grid_triangles(n_r, n_theta))

    P = V[:, :3]
    tol = rho / 10
    half = n_r // 2
    ds = DisjointSet(range(len(P)))
    for a, b in sorted(cKDTree(P).query_pairs(r=tol)):
        ia, ja = divmod(a, n_theta)
        ib, jb = divmod(b, n_theta)
        if ja != jb or abs(ia - ib) != half:
            raise MergeAmbiguity(
                f"vertices {(ia, ja)} and {(ib, jb)} merge but are not sheet-mates; "
                "increase resolution or reduce rho")
        ds.merge(a, b)
    reps = sorted(min(c) for c in ds.subsets())
    new_index = {rep: i for i, rep in enumerate(reps)}
    vertex_map = np.array([new_index[min(ds.subset(v))] for v in range(len(P))])
    tris = sorted({tuple(sorted(vertex_map[list(t)])) for t in source.maximal})
    target = build_complex(P[reps], tris)
    spec = CoveringMapSpec(source, target, vertex_map)
    return TubeCover(source, target, spec, rho, n_r, n_theta, profile)
