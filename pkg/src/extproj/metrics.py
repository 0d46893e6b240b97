"""Numerical checks: nearest-point projections, bistable approximation reports,
Hausdorff and exact Wasserstein-2 distances, and the geodesic/chord bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ._validation import as_points
from .errors import (DimMismatch, EmptySet, OutsideReach, SingularTangentMap, SizeMismatch,
                     TooLarge)
from .simplicial import SimplicialComplex, _closest_on_simplices, geodesic_graph

FD_STEP = 1e-5
COND_LIMIT = 1e12
W2_MAX_N = 1024


class CircleManifold:
    """Circle of the given radius centred at the origin of ``R^2``."""

    def __init__(self, radius: float = 1.0):
        if not radius > 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.dim = 1
        self.ambient_dim = 2

    @property
    def reach(self) -> float:
        return self.radius

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (2,):
            raise DimMismatch("circle points live in R^2")
        rho = np.linalg.norm(y)
        # only the centre lacks a unique nearest point
        if rho == 0 or abs(rho - self.radius) > self.reach:
            raise OutsideReach(f"point at distance {abs(rho - self.radius):.3g} "
                               f"is outside the reach {self.reach:.3g}")
        return y, rho

    def nearest_point(self, y) -> np.ndarray:
        y, rho = self._check(y)
        return self.radius * y / rho

    def nearest_point_jacobian(self, y) -> np.ndarray:
        y, rho = self._check(y)
        u = y / rho
        return self.radius / rho * (np.eye(2) - np.outer(u, u))

    def tangent_basis(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.array([-x[1], x[0]])
        return (t / np.linalg.norm(t))[:, None]

    def sample(self, n: int, rng, stratified: bool = True) -> np.ndarray:
        if stratified:
            th = 2 * np.pi * (np.arange(n) + rng.random(n)) / n
        else:
            th = 2 * np.pi * rng.random(n)
        return self.radius * np.column_stack([np.cos(th), np.sin(th)])


class TorusManifold:
    """Torus of revolution about the z-axis with radii ``R > r``."""

    def __init__(self, R: float = 2.0, r: float = 0.5):
        if not 0 < r < R:
            raise ValueError("torus radii must satisfy 0 < r < R")
        self.R = float(R)
        self.r = float(r)
        self.dim = 2
        self.ambient_dim = 3

    @property
    def reach(self) -> float:
        return min(self.r, self.R - self.r)

    def _parts(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (3,):
            raise DimMismatch("torus points live in R^3")
        rho = np.hypot(y[0], y[1])
        if rho == 0:
            raise OutsideReach("point on the axis of revolution")
        q = np.array([y[0] / rho, y[1] / rho, 0.0])
        c = self.R * q
        v = y - c
        nv = np.linalg.norm(v)
        if nv == 0 or abs(nv - self.r) > self.reach:
            raise OutsideReach(f"point at distance {abs(nv - self.r):.3g} "
                               f"is outside the reach {self.reach:.3g}")
        return y, rho, q, c, v, nv

    def nearest_point(self, y) -> np.ndarray:
        _, _, _, c, v, nv = self._parts(y)
        return c + self.r * v / nv

    def nearest_point_jacobian(self, y) -> np.ndarray:
        y, rho, q, c, v, nv = self._parts(y)
        Dc = np.zeros((3, 3))
        q2 = q[:2]
        Dc[:2, :2] = self.R / rho * (np.eye(2) - np.outer(q2, q2))
        Dv = np.eye(3) - Dc
        n = v / nv
        Dn = (np.eye(3) - np.outer(n, n)) @ Dv / nv
        return Dc + self.r * Dn

    def tangent_basis(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.arctan2(x[1], x[0])
        rho = np.hypot(x[0], x[1])
        v = np.arctan2(x[2], rho - self.R)
        e_u = np.array([-np.sin(u), np.cos(u), 0.0])
        e_v = np.array([-np.sin(v) * np.cos(u), -np.sin(v) * np.sin(u), np.cos(v)])
        return np.column_stack([e_u, e_v])

    def point(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        ring = self.R + self.r * np.cos(v)
        return np.stack([ring * np.cos(u), ring * np.sin(u), self.r * np.sin(v)], axis=-1)


class MeshManifold:
    """Piecewise-linear surface given by a complex; the reach is supplied."""

    def __init__(self, K: SimplicialComplex, reach: float):
        if not reach > 0:
            raise ValueError("reach must be positive")
        self.K = K
        self.reach = float(reach)
        self.dim = K.dim
        self.ambient_dim = K.ambient_dim
        self._vtree = cKDTree(K.vertices)

    def _closest(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.ambient_dim,):
            raise DimMismatch(f"mesh points live in R^{self.ambient_dim}")
        d0 = self._vtree.query(y)[0]
        tree, radius = self.K._centroid_tree()
        cand = np.array(tree.query_ball_point(y, d0 + radius + 1e-12), dtype=np.int64)
        S = self.K.vertices[self.K.simplex_array[cand]]
        w, dist = _closest_on_simplices(np.repeat(y[None], len(cand), axis=0), S)
        i = int(np.argmin(dist))
        if dist[i] > self.reach:
            raise OutsideReach(f"point at distance {dist[i]:.3g} is outside the reach")
        return int(cand[i]), w[i], float(dist[i])

    def nearest_point(self, y) -> np.ndarray:
        s, w, _ = self._closest(y)
        return w @ self.K.vertices[self.K.simplex_array[s]]

    def nearest_point_jacobian(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        cols = []
        for k in range(self.ambient_dim):
            e = np.zeros(self.ambient_dim)
            e[k] = FD_STEP
            cols.append((self.nearest_point(y + e) - self.nearest_point(y - e)) / (2 * FD_STEP))
        return np.column_stack(cols)

    def tangent_basis(self, x) -> np.ndarray:
        s, _, _ = self._closest(x)
        P = self.K.vertices[self.K.simplex_array[s]]
        Q, _ = np.linalg.qr((P[1:] - P[0]).T)
        return Q

    def near_edge(self, x, tol: float = 1e-3) -> bool:
        """Whether the projection of ``x`` lies within ``tol`` of its simplex boundary."""
        s, w, _ = self._closest(x)
        P = self.K.vertices[self.K.simplex_array[s]]
        # distance to the facet opposite vertex i is w_i times the height over it
        vol = np.linalg.det((P[1:] - P[0]) @ (P[1:] - P[0]).T)
        heights = []
        for i in range(len(P)):
            F = np.delete(P, i, axis=0)
            if len(F) == 1:
                base = 1.0
            else:
                base = np.linalg.det((F[1:] - F[0]) @ (F[1:] - F[0]).T)
            heights.append(np.sqrt(vol / base) if base > 0 else 0.0)
        return bool(np.min(w * np.array(heights)) < tol)


def nearest_point(M, y) -> np.ndarray:
    return M.nearest_point(y)


@dataclass
class BistableReport:
    eps_hat: float
    grad_max: float
    inv_grad_max: float | None
    M_bound: float | None
    passes: dict
    sample_count: int
    inverse_evaluable: bool
    near_edge_samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "eps_hat": self.eps_hat,
            "grad_max": self.grad_max,
            "inv_grad_max": self.inv_grad_max,
            "M_bound": self.M_bound,
            "passes": self.passes,
            "sample_count": self.sample_count,
            "inverse_evaluable": self.inverse_evaluable,
            "near_edge_samples": self.near_edge_samples,
        }


def bistable_report(f, f_jacobian, g, X, M1, M2, eps_tol: float | None = None,
                    M: float | None = None) -> BistableReport:
    """Measure the three bistability quantities of ``f`` against ``g`` on samples ``X``.

    ``f`` and ``g`` map batches ``(N, m1) -> (N, m2)`` and ``f_jacobian`` returns
    ambient Jacobians ``(N, m2, m1)``.  Gradients are restricted to tangent
    bases of ``M1``; the inverse term uses the tangent map of the nearest-point
    projection onto ``M2`` and is only attempted when the sup error is inside
    the reach of ``M2``.
    """
    X, _ = as_points(X, M1.ambient_dim, "X")
    if X.shape[0] == 0:
        raise EmptySet("no samples")
    FX = np.asarray(f(X), dtype=float)
    GX = np.asarray(g(X), dtype=float)
    J = np.asarray(f_jacobian(X), dtype=float)
    eps_hat = float(np.max(np.linalg.norm(FX - GX, axis=1)))
    grads = []
    for x, Jx in zip(X, J):
        grads.append(np.linalg.norm(Jx @ M1.tangent_basis(x), 2))
    grad_max = float(max(grads))

    evaluable = eps_hat < M2.reach
    inv_max = None
    near = []
    if evaluable:
        invs = []
        for i, (x, Jx, fx) in enumerate(zip(X, J, FX)):
            P = M2.nearest_point(fx)
            A = M2.tangent_basis(P).T @ M2.nearest_point_jacobian(fx) @ Jx @ M1.tangent_basis(x)
            sv = np.linalg.svd(A, compute_uv=False)
            if sv[-1] == 0 or sv[0] / sv[-1] > COND_LIMIT:
                raise SingularTangentMap(f"tangent map at sample {i} is singular")
            invs.append(1.0 / sv[-1])
            if isinstance(M2, MeshManifold) and M2.near_edge(P):
                near.append(i)
        inv_max = float(max(invs))
    M_bound = max(grad_max, inv_max) if inv_max is not None else None
    bound = M if M is not None else M_bound
    passes = {
        "approximation": bool(eps_tol is None or eps_hat <= eps_tol),
        "gradient": bool(bound is not None and grad_max <= bound),
        "inverse_gradient": bool(inv_max is not None and bound is not None and inv_max <= bound),
    }
    return BistableReport(eps_hat, grad_max, inv_max, M_bound, passes, X.shape[0], evaluable, near)


def network_evaluators(net):
    """``(f, f_jacobian)`` for a fitted extension-projection network."""
    return net.predict, (lambda X: net.jacobian(X, "full"))


@dataclass
class SequenceCheck:
    M: float
    finite: bool
    tail_slope: float
    projected: float
    no_growth: bool

    def to_dict(self) -> dict:
        return {"M": self.M, "finite": self.finite, "tail_slope": self.tail_slope,
                "projected": self.projected, "no_growth": self.no_growth}


def check_bistable_sequence(reports, tail: int = 5) -> SequenceCheck:
    """One bound ``M`` for both gradient terms over a sequence of reports.

    ``M`` is the maximum over all reports.  The last ``tail`` per-report
    bounds are fitted with a least-squares line; ``no_growth`` holds when that
    line, extended ``tail`` further reports, stays at or below ``M``.
    """
    per = []
    for r in reports:
        per.append(np.inf if r.inv_grad_max is None else max(r.grad_max, r.inv_grad_max))
    per = np.array(per, dtype=float)
    M = float(per.max())
    last = per[-tail:]
    if not np.all(np.isfinite(last)):
        return SequenceCheck(M, False, np.inf, np.inf, False)
    if last.size < 2:
        return SequenceCheck(M, bool(np.isfinite(M)), 0.0, float(last[-1]), bool(np.isfinite(M)))
    t = np.arange(last.size)
    slope, icpt = np.polyfit(t, last, 1)
    projected = float(icpt + slope * (2 * last.size - 1))
    rel = float(slope / max(np.mean(np.abs(last)), 1e-300))
    return SequenceCheck(M, bool(np.isfinite(M)), rel, projected,
                         bool(np.isfinite(M) and projected <= M))


def nonsmooth_example(eps: float, x):
    """Kinked map ``f`` (slope 1 then 2), its smoothing ``f_eps`` and ``f_eps'``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    f = np.where(x <= 0, x, 2 * x)
    inside = np.abs(x) <= eps
    f_eps = np.where(inside, (x + eps) * (x - eps) / (4 * eps) + 1.5 * x + 0.5 * eps, f)
    df = np.where(inside, x / (2 * eps) + 1.5, np.where(x <= 0, 1.0, 2.0))
    return f, f_eps, df


def hausdorff(A, B) -> float:
    """Symmetric Hausdorff distance between two finite point sets."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise EmptySet("Hausdorff distance of an empty set")
    if A.shape[1] != B.shape[1]:
        raise DimMismatch("point sets live in different dimensions")
    dab = cKDTree(B).query(A)[0].max()
    dba = cKDTree(A).query(B)[0].max()
    return float(max(dab, dba))


def wasserstein2_exact(A, B) -> float:
    """W2 between the uniform empirical measures on two equal-size point sets."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != B.shape[0]:
        raise SizeMismatch(f"sets have {A.shape[0]} and {B.shape[0]} points")
    if A.shape[0] > W2_MAX_N:
        raise TooLarge(f"exact W2 is limited to {W2_MAX_N} points")
    if A.shape[0] == 0:
        raise EmptySet("W2 of empty sets")
    if A.shape[1] != B.shape[1]:
        raise DimMismatch("point sets live in different dimensions")
    C = cdist(A, B, "sqeuclidean")
    rows, cols = linear_sum_assignment(C)
    return float(np.sqrt(C[rows, cols].mean()))


def pushforward_check(f, M1_sampler, target_sampler, n: int, seed: int = 0) -> float:
    """W2 between ``f`` applied to ``n`` source samples and ``n`` target samples.

    ``f`` is a callable or anything with ``predict``; samplers are called as
    ``sampler(n, rng)`` with one generator seeded by ``seed``.
    """
    if n > W2_MAX_N:
        raise TooLarge(f"exact W2 is limited to {W2_MAX_N} points")
    fn = f.predict if hasattr(f, "predict") else f
    rng = np.random.default_rng(seed)
    X = M1_sampler(n, rng)
    T = target_sampler(n, rng)
    return wasserstein2_exact(fn(X), T)


@dataclass
class GeoEuclidCheck:
    violations: list
    n_pairs: int
    admissible: list

    @property
    def n_admissible(self) -> int:
        return len(self.admissible)

    def to_dict(self) -> dict:
        return {"violations": self.violations, "n_pairs": self.n_pairs,
                "n_admissible": self.n_admissible}


def check_geo_euclid(K: SimplicialComplex, pairs, r0: float, slack: float = 0.02,
                     level: int = 2) -> GeoEuclidCheck:
    """Check ``(2/pi) d <= |x - y| <= d`` for pairs with ``d <= pi r0``.

    ``d`` is the shortest-path geodesic estimate; both inequalities get a
    relative slack for the discretisation.
    """
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    graph = geodesic_graph(K, level)
    limit = np.pi * r0
    pairs = [(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for x, y in pairs]
    # one shortest-path sweep per distinct first point
    groups: dict = {}
    for i, (x, _) in enumerate(pairs):
        groups.setdefault(x.tobytes(), []).append(i)
    geo = np.empty(len(pairs))
    for idx in groups.values():
        x = pairs[idx[0]][0]
        Y = np.array([pairs[i][1] for i in idx])
        geo[idx] = graph.distances_from(x, Y, limit=limit * (1 + slack) + 1e-9)
    violations = []
    admissible = []
    for i, (x, y) in enumerate(pairs):
        d = float(geo[i])
        if not d <= limit:
            continue
        admissible.append(i)
        e = float(np.linalg.norm(x - y))
        lower_ok = (2 / np.pi) * d <= e * (1 + slack) + 1e-12
        upper_ok = e <= d * (1 + slack) + 1e-12
        if not (lower_ok and upper_ok):
            violations.append({"pair": i, "euclidean": e, "geodesic": d,
                               "lower_ok": bool(lower_ok), "upper_ok": bool(upper_ok)})
    return GeoEuclidCheck(violations, len(pairs), admissible)
