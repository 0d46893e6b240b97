"""Simplicial covering maps and their injective lifts.

A covering is given as a vertex map between two triangulations.  From it we
compute the sheets (patches) over every target simplex, label the points of
each vertex fiber, and build two lifts of the covering into a larger space:

* ``g(x) = (F(x), stack(x))`` where ``stack`` interpolates the sheet labels of
  the vertices of the simplex containing ``x``; ``g`` is injective on vertices
  but generally not globally.
* ``h(x) = (g(x), (1 - Psi(x)) f(x))`` appends an embedding block ``f`` that is
  switched off by bumps ``Psi`` around the vertices; ``h`` is injective and its
  vertex fibers are exactly ``(v, i, 0)``.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.spatial import cKDTree

from ._validation import as_points, check_positive
from .errors import BadIndex, IoError, NotACovering, ParseError, PatchCountMismatch
from .simplicial import (SimplicialComplex, barycentric_coords, locate_points,
                         mesh_to_dict, resolve_mesh_ref, star_subdivide_at)

BUMP_FRACTION = 0.45
# smallest trailing-block magnitude regarded as a real separation
BUMP_AMPLITUDE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class CoveringMapSpec:
    """A simplicial map ``K1 -> K2`` given on vertices."""

    source: SimplicialComplex
    target: SimplicialComplex
    vertex_map: np.ndarray

    def __post_init__(self):
        vm = np.asarray(self.vertex_map)
        if vm.shape != (self.source.n_vertices,):
            raise BadIndex(f"vertex_map needs {self.source.n_vertices} entries, got {vm.shape}")
        if vm.size and not np.issubdtype(vm.dtype, np.integer):
            if not np.all(vm == np.round(vm)):
                raise BadIndex("vertex_map entries must be integers")
        vm = vm.astype(np.int64)
        if vm.size and (vm.min() < 0 or vm.max() >= self.target.n_vertices):
            raise BadIndex("vertex_map refers to a missing target vertex")
        vm.setflags(write=False)
        object.__setattr__(self, "vertex_map", vm)

    @property
    def target_dim(self) -> int:
        return self.target.ambient_dim

    def image(self, simplex) -> tuple[int, ...]:
        return tuple(sorted(int(self.vertex_map[v]) for v in simplex))

    def map_points(self, X) -> np.ndarray:
        """Evaluate the piecewise-linear map on points of ``|K1|``."""
        X, single = as_points(X, self.source.ambient_dim)
        idx, w = locate_points(self.source, X)
        Y = np.einsum("ni,nij->nj", w,
                      self.target.vertices[self.vertex_map[self.source.simplex_array[idx]]])
        return Y[0] if single else Y

    def to_dict(self, source_ref=None, target_ref=None) -> dict:
        return {
            "source": mesh_to_dict(self.source) if source_ref is None else source_ref,
            "target": mesh_to_dict(self.target) if target_ref is None else target_ref,
            "vertex_map": self.vertex_map.tolist(),
        }

    @classmethod
    def from_dict(cls, doc, base_dir=None) -> "CoveringMapSpec":
        if not isinstance(doc, dict) or not {"source", "target", "vertex_map"} <= set(doc):
            raise ParseError("covering spec needs source, target and vertex_map")
        vm = doc["vertex_map"]
        if not isinstance(vm, list):
            raise ParseError("vertex_map must be a list")
        return cls(resolve_mesh_ref(doc["source"], base_dir),
                   resolve_mesh_ref(doc["target"], base_dir),
                   np.asarray(vm))


def read_spec(path) -> CoveringMapSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return CoveringMapSpec.from_dict(doc, os.path.dirname(os.path.abspath(path)))


def write_spec(spec: CoveringMapSpec, path, source_ref=None, target_ref=None) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(spec.to_dict(source_ref, target_ref), fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc


@dataclass
class CoveringReport:
    ok: bool
    degree: int | None
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "degree": self.degree, "violations": self.violations}


def verify_covering(spec: CoveringMapSpec, max_listed: int = 20) -> CoveringReport:
    """Check that a vertex map is a covering of constant degree.

    Besides the combinatorial conditions (every maximal simplex maps onto a
    maximal simplex, all of ``K2`` is hit), a covering must have vertex fibers
    of one common size and be injective on the closed star of every source
    vertex.  Every target simplex must also have exactly ``d`` preimages.
    """
    K1, K2, vm = spec.source, spec.target, spec.vertex_map
    violations = []

    def report(kind, detail):
        if sum(v["kind"] == kind for v in violations) < max_listed:
            violations.append({"kind": kind, "detail": detail})

    if K1.dim != K2.dim:
        report("dimension", f"source dim {K1.dim} != target dim {K2.dim}")
        return CoveringReport(False, None, violations)

    target_index = {s: i for i, s in enumerate(K2.maximal)}
    simplex_count = np.zeros(len(K2.maximal), dtype=np.int64)
    for s in K1.maximal:
        img = spec.image(s)
        if len(set(img)) < len(img):
            report("collapse", f"simplex {list(s)} collapses to {list(img)}")
        elif img not in target_index:
            report("not_a_simplex", f"image {list(img)} of {list(s)} is not a maximal target simplex")
        else:
            simplex_count[target_index[img]] += 1
    for i in np.flatnonzero(simplex_count == 0):
        report("not_surjective", f"target simplex {list(K2.maximal[i])} has no preimage")

    fiber_sizes = np.bincount(vm, minlength=K2.n_vertices)
    sizes = set(fiber_sizes.tolist())
    degree = sizes.pop() if len(sizes) == 1 else None
    if degree is None:
        report("fiber_size", f"vertex fiber sizes vary: {sorted(set(fiber_sizes.tolist()))}")
    elif degree == 0:
        report("not_surjective", "empty vertex fibers")
        degree = None
    if degree is not None:
        for i in np.flatnonzero(simplex_count != degree):
            if simplex_count[i] > 0:
                report("simplex_fiber", f"target simplex {list(K2.maximal[i])} has "
                                        f"{simplex_count[i]} preimages, expected {degree}")

    for v, star in enumerate(K1.vertex_star()):
        verts = np.unique(K1.simplex_array[star].ravel())
        if np.unique(vm[verts]).size != verts.size:
            report("star_injectivity", f"map is not injective on the star of vertex {v}")

    return CoveringReport(not violations, degree, violations)


@dataclass(frozen=True)
class PatchDecomposition:
    """Sheets over each target simplex.

    ``patches[t]`` lists the ``degree`` patches over ``K2.maximal[t]``; each
    patch is a frozenset of source maximal-simplex indices.
    ``simplex_patch[s]`` gives ``(t, j)`` for source simplex ``s``.
    """

    degree: int
    patches: tuple
    simplex_patch: np.ndarray


def compute_patches(spec: CoveringMapSpec) -> PatchDecomposition:
    """Facet-connected components of the preimage of every target simplex."""
    rep = verify_covering(spec)
    if not rep.ok:
        raise NotACovering("; ".join(v["detail"] for v in rep.violations[:5]))
    K1, K2 = spec.source, spec.target
    d = rep.degree
    target_index = {s: i for i, s in enumerate(K2.maximal)}
    preimage = [[] for _ in K2.maximal]
    for i, s in enumerate(K1.maximal):
        preimage[target_index[spec.image(s)]].append(i)

    patches = []
    simplex_patch = np.zeros((len(K1.maximal), 2), dtype=np.int64)
    for t, members in enumerate(preimage):
        ds = DisjointSet(members)
        by_facet = {}
        for i in members:
            for facet in combinations(K1.maximal[i], K1.dim):
                if facet in by_facet:
                    ds.merge(by_facet[facet], i)
                else:
                    by_facet[facet] = i
        comps = sorted((frozenset(c) for c in ds.subsets()), key=min)
        if len(comps) != d:
            raise PatchCountMismatch(
                f"target simplex {list(K2.maximal[t])} has {len(comps)} preimage "
                f"components, expected {d}; the triangulation may be too coarse")
        for j, comp in enumerate(comps):
            verts = np.unique(K1.simplex_array[list(comp)].ravel())
            if sorted(spec.vertex_map[verts].tolist()) != list(K2.maximal[t]):
                raise NotACovering(f"patch over {list(K2.maximal[t])} is not a bijection")
            for i in comp:
                simplex_patch[i] = (t, j)
        patches.append(tuple(comps))
    simplex_patch.setflags(write=False)
    return PatchDecomposition(d, tuple(patches), simplex_patch)


@dataclass(frozen=True)
class IndexAssignment:
    """Sheet labels in ``1..d``.

    ``index_X[u]`` labels source vertex ``u`` inside its fiber, and
    ``index_S[t, j]`` labels patch ``j`` over target simplex ``t``.
    """

    index_X: np.ndarray
    index_S: np.ndarray
    fibers: tuple


def assign_indices(patches: PatchDecomposition, spec: CoveringMapSpec, seed: int = 0) -> IndexAssignment:
    """Label fibers in vertex order, shuffled per fiber unless ``seed == 0``."""
    d = patches.degree
    vm = spec.vertex_map
    order = np.argsort(vm, kind="stable")
    fibers = tuple(order.reshape(spec.target.n_vertices, d))
    rng = np.random.default_rng(seed) if seed != 0 else None
    index_X = np.zeros(spec.source.n_vertices, dtype=np.int64)
    for fib in fibers:
        labels = np.arange(1, d + 1) if rng is None else rng.permutation(d) + 1
        index_X[fib] = labels

    K1, K2 = spec.source, spec.target
    index_S = np.zeros((len(K2.maximal), d), dtype=np.int64)
    for t, comps in enumerate(patches.patches):
        anchor = K2.maximal[t][0]
        for j, comp in enumerate(comps):
            verts = np.unique(K1.simplex_array[list(comp)].ravel())
            u = verts[vm[verts] == anchor][0]
            index_S[t, j] = index_X[u]
    index_X.setflags(write=False)
    index_S.setflags(write=False)
    return IndexAssignment(index_X, index_S, fibers)


def bump(r, eps):
    """Smooth compactly supported bump: 1 at ``r = 0``, 0 for ``r >= eps``."""
    r = np.asarray(r, dtype=float)
    s = np.clip(r / eps, 0.0, 1.0)
    inside = s < 1.0
    out = np.zeros_like(s)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def min_vertex_spacing(K: SimplicialComplex) -> float:
    dist, _ = cKDTree(K.vertices).query(K.vertices, k=2)
    return float(dist[:, 1].min())


def default_bump_radius(spec: CoveringMapSpec) -> float:
    # the spacing over all source vertices bounds the spacing inside each fiber
    # and keeps every bump clear of every other vertex
    return BUMP_FRACTION * min_vertex_spacing(spec.source)


def default_embed_coords(K: SimplicialComplex) -> np.ndarray:
    """Source coordinates moved into ``[0, 1]^m`` by one translation and scale."""
    lo = K.vertices.min(axis=0)
    span = float((K.vertices.max(axis=0) - lo).max())
    return (K.vertices - lo) / span


@dataclass(frozen=True, eq=False)
class LiftedCover:
    spec: CoveringMapSpec
    patches: PatchDecomposition
    indices: IndexAssignment
    bump_radius: float
    embed_coords: np.ndarray
    seed: int = 0

    def __post_init__(self):
        check_positive(self.bump_radius, "bump_radius")
        E = np.asarray(self.embed_coords, dtype=float)
        if E.ndim != 2 or E.shape[0] != self.spec.source.n_vertices:
            raise ValueError("embed_coords needs one row per source vertex")
        if np.unique(E, axis=0).shape[0] != E.shape[0]:
            raise ValueError("embed_coords must be injective on vertices")
        E.setflags(write=False)
        object.__setattr__(self, "embed_coords", E)
        object.__setattr__(self, "_tree", cKDTree(self.spec.source.vertices))

    @property
    def degree(self) -> int:
        return self.patches.degree

    @property
    def embed_dim(self) -> int:
        return self.embed_coords.shape[1]

    @property
    def out_dim(self) -> int:
        return self.spec.target_dim + 1 + self.embed_dim

    def to_dict(self, spec_ref=None) -> dict:
        return {
            "spec": self.spec.to_dict() if spec_ref is None else spec_ref,
            "seed": self.seed,
            "bump_radius": self.bump_radius,
            "embed_coords": self.embed_coords.tolist(),
            "index_X": self.indices.index_X.tolist(),
        }

    @classmethod
    def from_dict(cls, doc, base_dir=None) -> "LiftedCover":
        try:
            spec_doc = doc["spec"]
            if isinstance(spec_doc, str):
                path = spec_doc if base_dir is None else os.path.join(base_dir, spec_doc)
                spec = read_spec(path)
            else:
                spec = CoveringMapSpec.from_dict(spec_doc, base_dir)
            lift = build_lift(spec, seed=int(doc.get("seed", 0)),
                              bump_radius=float(doc["bump_radius"]),
                              embed_coords=np.asarray(doc["embed_coords"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed lift document: {exc}") from exc
        if "index_X" in doc and list(doc["index_X"]) != lift.indices.index_X.tolist():
            raise ParseError("stored sheet labels disagree with the recomputed ones")
        return lift


def build_lift(spec: CoveringMapSpec, seed: int = 0, bump_radius=None, embed_coords=None) -> LiftedCover:
    """Decompose a covering and assemble its lift."""
    patches = compute_patches(spec)
    indices = assign_indices(patches, spec, seed)
    eps = default_bump_radius(spec) if bump_radius is None else float(bump_radius)
    E = default_embed_coords(spec.source) if embed_coords is None else embed_coords
    return LiftedCover(spec, patches, indices, eps, E, seed)


def read_lift(path) -> LiftedCover:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return LiftedCover.from_dict(doc, os.path.dirname(os.path.abspath(path)))


def write_lift(lift: LiftedCover, path, spec_ref=None) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(lift.to_dict(spec_ref), fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _source_location(lift: LiftedCover, X, simplex):
    K1 = lift.spec.source
    if simplex is None:
        return locate_points(K1, X)
    idx = np.broadcast_to(np.asarray(simplex, dtype=np.int64), (X.shape[0],)).copy()
    w = np.array([barycentric_coords(K1, K1.maximal[i], x).weights for i, x in zip(idx, X)])
    return idx, w.reshape(X.shape[0], K1.dim + 1)


def _eval(lift: LiftedCover, X, simplex, with_h: bool):
    K1, K2 = lift.spec.source, lift.spec.target
    X, single = as_points(X, K1.ambient_dim)
    idx, w = _source_location(lift, X, simplex)
    S = K1.simplex_array[idx]
    Fx = np.einsum("ni,nij->nj", w, K2.vertices[lift.spec.vertex_map[S]])
    stack = np.einsum("ni,ni->n", w, lift.indices.index_X[S].astype(float))
    out = [Fx, stack[:, None]]
    if with_h:
        f = np.einsum("ni,nij->nj", w, lift.embed_coords[S])
        out.append((1.0 - bump_sum(lift, X))[:, None] * f)
    Y = np.concatenate(out, axis=1)
    return Y[0] if single else Y


def bump_sum(lift: LiftedCover, X) -> np.ndarray:
    """``Psi(x)``: sum of the vertex bumps at every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eps = lift.bump_radius
    near = lift._tree.query_ball_point(X, r=eps)
    psi = np.zeros(X.shape[0])
    V = lift.spec.source.vertices
    for i, nb in enumerate(near):
        if nb:
            psi[i] = bump(np.linalg.norm(V[nb] - X[i], axis=1), eps).sum()
    return psi


def eval_g(lift: LiftedCover, X, simplex=None) -> np.ndarray:
    """``g(x) = (F(x), stack(x))`` for points of ``|K1|``.

    ``simplex`` optionally forces the source maximal simplex (or one per row)
    used for the evaluation instead of point location.
    """
    return _eval(lift, X, simplex, with_h=False)


def eval_h(lift: LiftedCover, X, simplex=None) -> np.ndarray:
    """``h(x) = (g(x), (1 - Psi(x)) f(x))`` for points of ``|K1|``."""
    return _eval(lift, X, simplex, with_h=True)


@dataclass
class LiftReport:
    projection_vertex_err: float
    projection_sample_err: float
    fibers_ok: bool
    fiber_failures: list
    vertex_margin: float
    sample_margin: float
    injectivity_margin: float
    nn_ratio: float
    bump_radius: float
    flags: list
    n_samples: int
    seed: int

    @property
    def projection_ok(self) -> bool:
        return self.projection_vertex_err == 0.0 and self.projection_sample_err <= 1e-9

    @property
    def passed(self) -> bool:
        return (self.projection_ok and self.fibers_ok and self.injectivity_margin > 0
                and not self.flags)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "projection_ok": self.projection_ok,
            "projection_vertex_err": self.projection_vertex_err,
            "projection_sample_err": self.projection_sample_err,
            "fibers_ok": self.fibers_ok,
            "fiber_failures": self.fiber_failures,
            "vertex_margin": self.vertex_margin,
            "sample_margin": self.sample_margin,
            "injectivity_margin": self.injectivity_margin,
            "nn_ratio": self.nn_ratio,
            "bump_radius": self.bump_radius,
            "flags": self.flags,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def _chunked_eval_h(lift, X, idx, n_jobs):
    if n_jobs is None or n_jobs <= 1 or X.shape[0] < 2 * 1024:
        return eval_h(lift, X, idx)
    chunks = np.array_split(np.arange(X.shape[0]), n_jobs)
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        parts = list(pool.map(lambda c: eval_h(lift, X[c], idx[c]), chunks))
    return np.concatenate(parts, axis=0)


def check_lift(lift: LiftedCover, n_samples: int = 10000, seed: int = 0, n_jobs: int = 1) -> LiftReport:
    """Verify projection, vertex fibers and injectivity of ``h``."""
    spec = lift.spec
    K1, K2 = spec.source, spec.target
    m2 = spec.target_dim
    d = lift.degree
    flags = []
    spacing = min_vertex_spacing(K1)
    if 2 * lift.bump_radius >= spacing:
        flags.append("BumpOverlap")

    # vertices: evaluate each from a simplex in its star, weights are exact indicators
    star_first = np.array([s[0] for s in K1.vertex_star()])
    Hv = eval_h(lift, K1.vertices, star_first)
    proj_v = float(np.abs(Hv[:, :m2] - K2.vertices[spec.vertex_map]).max())

    failures = []
    expected = set(range(1, d + 1))
    for v, fib in enumerate(lift.indices.fibers):
        pts = Hv[fib]
        labels = set(np.round(pts[:, m2]).astype(int).tolist())
        good = (np.all(pts[:, :m2] == K2.vertices[v])
                and np.all(pts[:, m2] == np.round(pts[:, m2]))
                and labels == expected
                and np.all(pts[:, m2 + 1:] == 0.0))
        if not good and len(failures) < 20:
            failures.append({"vertex": v, "points": pts.tolist()})

    rng = np.random.default_rng(seed)
    X, sidx, w = K1.sample_points(n_samples, rng)
    ref = np.einsum("ni,nij->nj", w, K2.vertices[spec.vertex_map[K1.simplex_array[sidx]]])
    Hs = _chunked_eval_h(lift, X, sidx, n_jobs)
    proj_s = float(np.abs(Hs[:, :m2] - ref).max()) if n_samples else 0.0
    # located (not forced) evaluation must agree as well
    if n_samples:
        Hs_loc = eval_h(lift, X[: min(n_samples, 2000)])
        proj_s = max(proj_s, float(np.abs(Hs_loc[:, :m2] - ref[: Hs_loc.shape[0]]).max()))

    vertex_margin = float(cKDTree(Hv).query(Hv, k=2)[0][:, 1].min())
    P = np.concatenate([K1.vertices, X], axis=0)
    H = np.concatenate([Hv, Hs], axis=0)
    dist, nn = cKDTree(H).query(H, k=2)
    sample_margin = float(dist[:, 1].min())
    xdist = np.linalg.norm(P - P[nn[:, 1]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(xdist > 0, dist[:, 1] / xdist, np.inf)
    return LiftReport(
        projection_vertex_err=proj_v,
        projection_sample_err=proj_s,
        fibers_ok=not failures,
        fiber_failures=failures,
        vertex_margin=vertex_margin,
        sample_margin=sample_margin,
        injectivity_margin=min(vertex_margin, sample_margin),
        nn_ratio=float(ratio.min()),
        bump_radius=lift.bump_radius,
        flags=flags,
        n_samples=n_samples,
        seed=seed,
    )


@dataclass
class Collision:
    x1: np.ndarray
    x2: np.ndarray
    simplex1: int
    simplex2: int
    g_dist: float
    h_dist: float


def find_g_collisions(lift: LiftedCover, limit: int | None = None) -> list[Collision]:
    """Pairs of distinct source points with equal ``g`` values.

    Over an edge of a target simplex the stack heights of two sheets are linear;
    where their difference changes sign the two sheets meet under ``g``.
    """
    spec = lift.spec
    K1, K2 = spec.source, spec.target
    vm = spec.vertex_map
    idxX = lift.indices.index_X
    seen = set()
    out = []
    for t, comps in enumerate(lift.patches.patches):
        sigma = K2.maximal[t]
        sheets = []
        for comp in comps:
            s = min(comp)
            simp = K1.maximal[s]
            pre = {int(vm[u]): u for u in simp}
            sheets.append((s, pre))
        for (s1, pre1), (s2, pre2) in combinations(sheets, 2):
            for a, b in combinations(sigma, 2):
                da = idxX[pre1[a]] - idxX[pre2[a]]
                db = idxX[pre1[b]] - idxX[pre2[b]]
                if da * db >= 0:
                    continue
                tt = da / (da - db)
                key = (min(pre1[a], pre1[b]), max(pre1[a], pre1[b]),
                       min(pre2[a], pre2[b]), max(pre2[a], pre2[b]), tt)
                if key in seen:
                    continue
                seen.add(key)
                x1 = (1 - tt) * K1.vertices[pre1[a]] + tt * K1.vertices[pre1[b]]
                x2 = (1 - tt) * K1.vertices[pre2[a]] + tt * K1.vertices[pre2[b]]
                g1 = eval_g(lift, x1[None], s1)[0]
                g2 = eval_g(lift, x2[None], s2)[0]
                h1 = eval_h(lift, x1[None], s1)[0]
                h2 = eval_h(lift, x2[None], s2)[0]
                out.append(Collision(x1, x2, s1, s2, float(np.linalg.norm(g1 - g2)),
                                     float(np.linalg.norm(h1 - h2))))
                if limit is not None and len(out) >= limit:
                    return out
    return out


def fiber_of(spec: CoveringMapSpec, patches: PatchDecomposition, y) -> np.ndarray:
    """All source points over a target point ``y``, one per sheet."""
    K1, K2 = spec.source, spec.target
    t, w = locate_points(K2, np.asarray(y, dtype=float)[None, :])
    t, w = int(t[0]), w[0]
    sigma = K2.maximal[t]
    pts = []
    for comp in patches.patches[t]:
        simp = K1.maximal[min(comp)]
        pre = {int(spec.vertex_map[u]): u for u in simp}
        pts.append(w @ K1.vertices[[pre[v] for v in sigma]])
    return np.array(pts)


def refine_cover_at(spec: CoveringMapSpec, Y) -> CoveringMapSpec:
    """Subdivide both triangulations so every point of ``Y`` and its fiber are vertices."""
    Y, _ = as_points(Y, spec.target.ambient_dim, "Y")
    patches = compute_patches(spec)
    X = np.concatenate([fiber_of(spec, patches, y) for y in Y], axis=0) if len(Y) else Y
    K1 = star_subdivide_at(spec.source, X)
    K2 = star_subdivide_at(spec.target, Y)
    images = spec.map_points(K1.vertices)
    dist, vm = cKDTree(K2.vertices).query(images)
    if dist.max() > 1e-9:
        raise NotACovering("refined source vertex has no matching target vertex")
    return CoveringMapSpec(K1, K2, vm)
