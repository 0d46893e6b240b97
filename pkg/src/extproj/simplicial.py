"""Embedded simplicial complexes.

A :class:`SimplicialComplex` is a pure, face-closed set of simplices whose
vertices carry coordinates in some ambient ``R^m``.  Besides construction and
validation this module provides barycentric coordinates, point location,
stellar subdivision at prescribed points, a shortest-path geodesic estimate and
JSON / OBJ mesh I/O.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from ._validation import as_points
from .errors import (BadIndex, ComplexError, DegenerateSimplex, DimMismatch,
                     ImpureComplex, IoError, NotOnComplex, OutsideSimplex,
                     ParseError)

# barycentric weights this close to zero are snapped onto the face
BARY_CLIP_TOL = 1e-12
# weights below -BARY_OUTSIDE_TOL mean the point is outside the simplex
BARY_OUTSIDE_TOL = 1e-9
AFFINE_TOL = 1e-9
LOCATE_TOL = 1e-6
# two candidate simplices closer than this to the query count as a tie
TIE_TOL = 1e-9
# sine-like shape measure below which a simplex counts as flat
DEGENERACY_TOL = 1e-13


class SimplicialComplex:
    """Pure simplicial complex realised in ``R^m``.

    Instances are treated as immutable; build them with :func:`build_complex`
    (or the constructor, which validates identically).

    Attributes
    ----------
    vertices : ndarray of shape (n_vertices, ambient_dim)
        Read-only vertex coordinates.
    maximal : tuple of tuple of int
        The ``dim``-simplices, each sorted, in lexicographic order.
    simplices : frozenset of tuple of int
        Every face of every maximal simplex (dimensions ``0..dim``).
    """

    def __init__(self, vertices, maximal_simplices):
        V = np.array(vertices, dtype=float)
        if V.ndim != 2 or V.shape[0] == 0:
            raise ComplexError("vertices must be a non-empty (n_vertices, m) array")
        if not np.all(np.isfinite(V)):
            raise ComplexError("vertex coordinates must be finite")
        raw = [tuple(s) for s in maximal_simplices]
        if not raw:
            raise ComplexError("at least one maximal simplex is required")
        sizes = {len(s) for s in raw}
        if len(sizes) != 1:
            raise ComplexError(f"maximal simplices have mixed sizes {sorted(sizes)}")
        n_vertices = V.shape[0]
        simplices = []
        for s in raw:
            try:
                idx = [int(i) for i in s]
            except (TypeError, ValueError) as exc:
                raise BadIndex(f"non-integer vertex index in simplex {s!r}") from exc
            if any(i != j for i, j in zip(idx, s)):
                raise BadIndex(f"non-integer vertex index in simplex {s!r}")
            for i in idx:
                if i < 0 or i >= n_vertices:
                    raise BadIndex(f"simplex {s!r} references vertex {i}, "
                                   f"but only {n_vertices} vertices exist")
            if len(set(idx)) != len(idx):
                raise DegenerateSimplex(f"simplex {s!r} repeats a vertex")
            simplices.append(tuple(sorted(idx)))
        if len(set(simplices)) != len(simplices):
            raise ComplexError("duplicate maximal simplices")
        dim = len(simplices[0]) - 1
        if dim > V.shape[1]:
            raise DegenerateSimplex(
                f"{dim}-simplices cannot be affinely independent in R^{V.shape[1]}")
        used = np.zeros(n_vertices, dtype=bool)
        for s in simplices:
            used[list(s)] = True
        if not used.all():
            raise ImpureComplex(
                f"vertices {np.flatnonzero(~used)[:10].tolist()} belong to no maximal simplex")

        simplices.sort()
        V.setflags(write=False)
        self.vertices = V
        self.maximal = tuple(simplices)
        self.simplex_array = np.array(simplices, dtype=np.int64).reshape(len(simplices), dim + 1)
        self.simplex_array.setflags(write=False)
        self.dim = dim
        self.ambient_dim = V.shape[1]
        self._cache: dict = {}

        shape = _shape_measure(V[self.simplex_array])
        bad = np.flatnonzero(shape <= DEGENERACY_TOL)
        if bad.size:
            raise DegenerateSimplex(
                f"simplex {self.maximal[bad[0]]} has affinely dependent vertices")

        faces = set()
        for s in self.maximal:
            for q in range(1, dim + 2):
                faces.update(combinations(s, q))
        self.simplices = frozenset(faces)

    # -- basic structure -------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    def faces(self, k: int) -> list[tuple[int, ...]]:
        """Sorted list of the ``k``-dimensional simplices."""
        return sorted(s for s in self.simplices if len(s) == k + 1)

    def f_vector(self) -> list[int]:
        counts = [0] * (self.dim + 1)
        for s in self.simplices:
            counts[len(s) - 1] += 1
        return counts

    def euler_characteristic(self) -> int:
        return sum((-1) ** k * c for k, c in enumerate(self.f_vector()))

    def volumes(self) -> np.ndarray:
        """``dim``-volume of every maximal simplex."""
        P = self.vertices[self.simplex_array]
        E = P[:, 1:, :] - P[:, :1, :]
        G = E @ E.transpose(0, 2, 1)
        det = np.clip(np.linalg.det(G), 0.0, None)
        return np.sqrt(det) / math.factorial(self.dim)

    def total_volume(self) -> float:
        return float(self.volumes().sum())

    def realize(self, simplex, weights) -> np.ndarray:
        return np.asarray(weights, dtype=float) @ self.vertices[list(simplex)]

    def sample_points(self, n: int, rng: np.random.Generator):
        """Draw ``n`` points uniformly (by volume) from ``|K|``.

        Returns ``(points, simplex_indices, weights)``.
        """
        vol = self.volumes()
        idx = rng.choice(len(self.maximal), size=n, p=vol / vol.sum())
        w = rng.dirichlet(np.ones(self.dim + 1), size=n)
        pts = np.einsum("ni,nij->nj", w, self.vertices[self.simplex_array[idx]])
        return pts, idx, w

    def vertex_star(self) -> list[list[int]]:
        """For every vertex, indices of the maximal simplices containing it."""
        if "star" not in self._cache:
            star = [[] for _ in range(self.n_vertices)]
            for i, s in enumerate(self.maximal):
                for v in s:
                    star[v].append(i)
            self._cache["star"] = star
        return self._cache["star"]

    def __eq__(self, other):
        if not isinstance(other, SimplicialComplex):
            return NotImplemented
        return (self.maximal == other.maximal
                and self.vertices.shape == other.vertices.shape
                and bool(np.array_equal(self.vertices, other.vertices)))

    __hash__ = None

    def __repr__(self):
        return (f"SimplicialComplex(dim={self.dim}, ambient_dim={self.ambient_dim}, "
                f"f_vector={self.f_vector()})")

    # -- spatial index ----------------------------------------------------
    def _centroid_tree(self):
        if "tree" not in self._cache:
            P = self.vertices[self.simplex_array]
            centroids = P.mean(axis=1)
            radius = float(np.linalg.norm(P - centroids[:, None, :], axis=2).max())
            self._cache["tree"] = (cKDTree(centroids), radius)
        return self._cache["tree"]


def _shape_measure(P: np.ndarray) -> np.ndarray:
    """Ratio ``sqrt(det(E E^T)) / prod |E_i|`` in ``[0, 1]``; zero iff flat."""
    E = P[:, 1:, :] - P[:, :1, :]
    if E.shape[1] == 0:
        return np.ones(P.shape[0])
    norms = np.linalg.norm(E, axis=2)
    G = E @ E.transpose(0, 2, 1)
    det = np.clip(np.linalg.det(G), 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.sqrt(det) / np.prod(norms, axis=1)
    return np.where(np.prod(norms, axis=1) > 0, ratio, 0.0)


def build_complex(vertices, maximal_simplices) -> SimplicialComplex:
    """Validate and close a complex given its vertices and maximal simplices."""
    return SimplicialComplex(vertices, maximal_simplices)


@dataclass(frozen=True)
class BarycentricPoint:
    simplex: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.simplex),):
            raise ValueError("weight count must equal simplex vertex count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"invalid barycentric weights {w}")
        object.__setattr__(self, "weights", w)

    def realize(self, K: SimplicialComplex) -> np.ndarray:
        return K.realize(self.simplex, self.weights)


def _clip_weights(w: np.ndarray) -> np.ndarray:
    w = np.where(w <= BARY_CLIP_TOL, 0.0, w)
    return w / w.sum(axis=-1, keepdims=True)


def barycentric_coords(K: SimplicialComplex, sigma, y) -> BarycentricPoint:
    """Barycentric coordinates of ``y`` with respect to the simplex ``sigma``."""
    sigma = tuple(sorted(int(i) for i in sigma))
    if sigma not in K.simplices:
        raise BadIndex(f"{sigma} is not a simplex of the complex")
    y = np.asarray(y, dtype=float)
    if y.shape != (K.ambient_dim,):
        raise DimMismatch(f"point has shape {y.shape}, expected ({K.ambient_dim},)")
    P = K.vertices[list(sigma)]
    if len(sigma) == 1:
        lam = np.ones(1)
        resid = np.linalg.norm(y - P[0])
    else:
        E = P[1:] - P[0]
        c, *_ = np.linalg.lstsq(E.T, y - P[0], rcond=None)
        lam = np.concatenate([[1.0 - c.sum()], c])
        resid = np.linalg.norm(lam @ P - y)
    if resid > AFFINE_TOL:
        raise OutsideSimplex(f"point is {resid:.3g} away from the affine hull of {sigma}")
    if lam.min() < -BARY_OUTSIDE_TOL:
        raise OutsideSimplex(f"point lies outside {sigma} (weight {lam.min():.3g})")
    return BarycentricPoint(sigma, _clip_weights(lam))


def _closest_on_simplices(P: np.ndarray, S: np.ndarray):
    """Closest points of ``P[i]`` on the simplex with vertex coordinates ``S[i]``.

    Enumerates every face and keeps the nearest in-face projection with
    non-negative weights, which is exact for convex simplices.  Returns weights
    of shape ``(M, k + 1)`` and distances of shape ``(M,)``.
    """
    M, k1, _ = S.shape
    best_d = np.full(M, np.inf)
    best_w = np.zeros((M, k1))
    if M == 0:
        return best_w, best_d
    for q in range(k1, 0, -1):
        for face in combinations(range(k1), q):
            F = S[:, face, :]
            base = F[:, 0, :]
            if q == 1:
                wf = np.ones((M, 1))
                pt = base
            else:
                E = F[:, 1:, :] - base[:, None, :]
                G = E @ E.transpose(0, 2, 1)
                rhs = np.einsum("mij,mj->mi", E, P - base)
                c = np.linalg.solve(G, rhs[..., None])[..., 0]
                wf = np.concatenate([1.0 - c.sum(axis=1, keepdims=True), c], axis=1)
                pt = base + np.einsum("mi,mij->mj", c, E)
            ok = (wf >= -BARY_CLIP_TOL).all(axis=1)
            d = np.linalg.norm(P - pt, axis=1)
            better = ok & (d < best_d)
            if better.any():
                best_d[better] = d[better]
                w = np.zeros((int(better.sum()), k1))
                w[:, list(face)] = wf[better]
                best_w[better] = w
    return _clip_weights(best_w), best_d


def locate_points(K: SimplicialComplex, Y, tol: float = LOCATE_TOL):
    """Vectorised point location.

    Returns ``(simplex_indices, weights)`` where ``simplex_indices[i]`` indexes
    ``K.maximal``.  Ties on shared faces go to the lexicographically smallest
    simplex.
    """
    Y, _ = as_points(Y, K.ambient_dim, "Y")
    N = Y.shape[0]
    if N == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, K.dim + 1))
    tree, radius = K._centroid_tree()
    cands = tree.query_ball_point(Y, r=radius + tol)
    lengths = np.fromiter((len(c) for c in cands), dtype=np.int64, count=N)
    pidx = np.repeat(np.arange(N), lengths)
    sidx = np.fromiter((j for c in cands for j in c), dtype=np.int64, count=int(lengths.sum()))
    w, d = _closest_on_simplices(Y[pidx], K.vertices[K.simplex_array[sidx]])

    dmin = np.full(N, np.inf)
    np.minimum.at(dmin, pidx, d)
    if np.any(dmin > tol):
        bad = int(np.flatnonzero(dmin > tol)[0])
        raise NotOnComplex(f"point {Y[bad].tolist()} is {dmin[bad]:.3g} away from the complex")
    eligible = d <= dmin[pidx] + TIE_TOL
    big = np.iinfo(np.int64).max
    chosen = np.full(N, big, dtype=np.int64)
    np.minimum.at(chosen, pidx[eligible], sidx[eligible])
    pick = eligible & (sidx == chosen[pidx])
    rows = np.flatnonzero(pick)
    # one row per point: keep the first occurrence
    _, first = np.unique(pidx[rows], return_index=True)
    rows = rows[first]
    return sidx[rows], w[rows]


def locate_point(K: SimplicialComplex, y) -> BarycentricPoint:
    """Containing maximal simplex and barycentric coordinates of ``y``."""
    idx, w = locate_points(K, np.asarray(y, dtype=float)[None, :])
    return BarycentricPoint(K.maximal[int(idx[0])], w[0])


def star_subdivide_at(K: SimplicialComplex, Y) -> SimplicialComplex:
    """Stellar subdivision making every point of ``Y`` a vertex.

    Each point is inserted in turn: the smallest face containing it in its
    relative interior is found, and every maximal coface is replaced by the cone
    from the new vertex over its faces opposite each vertex of that face.
    Points that already are vertices are skipped.
    """
    Y, _ = as_points(Y, K.ambient_dim, "Y")
    if Y.shape[0] == 0:
        return K
    verts = list(K.vertices)
    current = dict(enumerate(K.maximal))
    origin = {i: i for i in current}
    descendants = {i: {i} for i in current}
    next_id = len(current)
    tree, radius = K._centroid_tree()
    changed = False

    for y in Y:
        orig = tree.query_ball_point(y, r=radius + LOCATE_TOL)
        ids = sorted({i for o in orig for i in descendants[o]})
        if not ids:
            raise NotOnComplex(f"point {y.tolist()} is not on the complex")
        simp = np.array([current[i] for i in ids])
        coords = np.asarray(verts)[simp]
        w, d = _closest_on_simplices(np.repeat(y[None, :], len(ids), axis=0), coords)
        dmin = d.min()
        if dmin > LOCATE_TOL:
            raise NotOnComplex(f"point {y.tolist()} is {dmin:.3g} away from the complex")
        eligible = [j for j in range(len(ids)) if d[j] <= dmin + TIE_TOL]
        j = min(eligible, key=lambda t: current[ids[t]])
        support = [int(simp[j][i]) for i in range(simp.shape[1]) if w[j][i] > BARY_CLIP_TOL]
        if len(support) == 1:
            continue
        new_idx = len(verts)
        # keep the given coordinates so that Y is exactly a subset of the vertices
        verts.append(y.copy())
        sigma = set(support)
        for i in ids:
            tau = current[i]
            if not sigma.issubset(tau):
                continue
            del current[i]
            o = origin.pop(i)
            descendants[o].discard(i)
            for v in support:
                current[next_id] = tuple(sorted((set(tau) - {v}) | {new_idx}))
                origin[next_id] = o
                descendants[o].add(next_id)
                next_id += 1
        changed = True

    if not changed:
        return K
    return SimplicialComplex(np.asarray(verts), list(current.values()))


class GeodesicGraph:
    """Shortest paths over the 1-skeleton refined with Steiner points.

    Every edge carries ``2**level - 1`` evenly spaced Steiner points, and all
    boundary nodes of each maximal simplex are joined pairwise by straight
    segments, so path lengths are realisable on ``|K|`` and over-estimate the
    true geodesic distance.  Node sets for successive levels are nested, so
    estimates are non-increasing in ``level``.
    """

    def __init__(self, K: SimplicialComplex, level: int = 2):
        if K.dim < 1:
            raise ComplexError("geodesics need a complex of dimension >= 1")
        if level < 0:
            raise ValueError("level must be >= 0")
        self.K = K
        self.level = level
        n_inner = 2 ** level - 1
        coords = [K.vertices]
        edge_nodes = {}
        next_node = K.n_vertices
        t = np.arange(1, n_inner + 1) / (n_inner + 1)
        for a, b in K.faces(1):
            pts = K.vertices[a] + t[:, None] * (K.vertices[b] - K.vertices[a])
            coords.append(pts)
            edge_nodes[(a, b)] = np.concatenate(
                [[a], np.arange(next_node, next_node + n_inner), [b]]).astype(np.int64)
            next_node += n_inner
        self.coords = np.concatenate(coords, axis=0)

        simplex_nodes = []
        rows, cols = [], []
        for s in K.maximal:
            nodes = np.unique(np.concatenate([edge_nodes[e] for e in combinations(s, 2)]))
            simplex_nodes.append(nodes)
            i, j = np.triu_indices(len(nodes), k=1)
            rows.append(nodes[i])
            cols.append(nodes[j])
        self.simplex_nodes = simplex_nodes
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        key = np.unique(r * next_node + c)
        r, c = key // next_node, key % next_node
        wts = np.linalg.norm(self.coords[r] - self.coords[c], axis=1)
        n = next_node
        self.graph = coo_matrix((np.r_[wts, wts], (np.r_[r, c], np.r_[c, r])),
                                shape=(n, n)).tocsr()

    def distances_from(self, x, Y, limit: float = np.inf) -> np.ndarray:
        """Estimated geodesic distance from ``x`` to every row of ``Y``."""
        x = np.asarray(x, dtype=float)
        Y, _ = as_points(Y, self.K.ambient_dim, "Y")
        sx, _ = locate_points(self.K, x[None, :])
        sx = int(sx[0])
        src = self.simplex_nodes[sx]
        off = np.linalg.norm(self.coords[src] - x, axis=1)
        D = dijkstra(self.graph, directed=False, indices=src, limit=limit)
        dx = np.min(off[:, None] + D, axis=0)
        sy, _ = locate_points(self.K, Y)
        out = np.empty(Y.shape[0])
        for i, (y, s) in enumerate(zip(Y, sy)):
            nodes = self.simplex_nodes[int(s)]
            best = np.min(dx[nodes] + np.linalg.norm(self.coords[nodes] - y, axis=1))
            if int(s) == sx or np.intersect1d(nodes, src).size == len(src):
                best = min(best, float(np.linalg.norm(x - y)))
            out[i] = best
        return out

    def distance(self, x, y) -> float:
        return float(self.distances_from(x, np.asarray(y, dtype=float)[None, :])[0])


def geodesic_graph(K: SimplicialComplex, level: int = 2) -> GeodesicGraph:
    key = ("geodesic", level)
    if key not in K._cache:
        K._cache[key] = GeodesicGraph(K, level)
    return K._cache[key]


def geodesic_estimate(K: SimplicialComplex, x, y, level: int = 2) -> float:
    """Upper estimate of the geodesic distance between two points of ``|K|``."""
    return geodesic_graph(K, level).distance(x, y)


# -- I/O ------------------------------------------------------------------

def mesh_to_dict(K: SimplicialComplex) -> dict:
    return {
        "dim": K.dim,
        "ambient_dim": K.ambient_dim,
        "vertices": K.vertices.tolist(),
        "maximal_simplices": [list(s) for s in K.maximal],
    }


def mesh_from_dict(doc) -> SimplicialComplex:
    if not isinstance(doc, dict):
        raise ParseError("mesh document must be a JSON object")
    missing = {"dim", "ambient_dim", "vertices", "maximal_simplices"} - set(doc)
    if missing:
        raise ParseError(f"mesh document lacks keys {sorted(missing)}")
    try:
        V = np.array(doc["vertices"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad vertex array: {exc}") from exc
    if V.ndim != 2 or V.shape[1] != doc["ambient_dim"]:
        raise ParseError("vertex array does not match ambient_dim")
    simplices = doc["maximal_simplices"]
    if not isinstance(simplices, list) or not all(isinstance(s, list) for s in simplices):
        raise ParseError("maximal_simplices must be a list of index lists")
    if any(len(s) != doc["dim"] + 1 for s in simplices):
        raise ParseError("simplex size does not match dim")
    return SimplicialComplex(V, simplices)


def write_mesh(K: SimplicialComplex, path) -> None:
    # json writes floats with repr, the shortest string that round-trips
    # exactly (at most 17 significant digits)
    try:
        with open(path, "w") as fh:
            json.dump(mesh_to_dict(K), fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_mesh(path) -> SimplicialComplex:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return mesh_from_dict(doc)


def write_obj(K: SimplicialComplex, path) -> None:
    """Export a triangulated surface in ``R^3`` as Wavefront OBJ."""
    if K.dim != 2 or K.ambient_dim != 3:
        raise DimMismatch("OBJ export needs a 2-complex in R^3")
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in K.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in K.maximal]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def resolve_mesh_ref(ref, base_dir=None) -> SimplicialComplex:
    """A mesh reference is either an inline mesh document or a path to one."""
    if isinstance(ref, dict):
        return mesh_from_dict(ref)
    if isinstance(ref, (str, os.PathLike)):
        path = ref if base_dir is None or os.path.isabs(ref) else os.path.join(base_dir, ref)
        return read_mesh(path)
    raise ParseError(f"unsupported mesh reference {ref!r}")
