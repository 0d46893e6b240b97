"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from scipy.spatial import cKDTree

from extproj.covering import (BUMP_AMPLITUDE_FLOOR, build_lift, check_lift,
                              find_g_collisions, verify_covering)
from extproj.epnet.layers import Coupling, InvLinear, ZeroPad, batch_jacobian
from extproj.metrics import check_geo_euclid, nonsmooth_example, wasserstein2_exact
from extproj.simplicial import locate_points, star_subdivide_at
from extproj.surfaces import (build_phi_psi, circle_cover_spec, circle_mesh, curve_fiber_count,
                              p4_self_intersections, torus_mesh, tube_surface)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _covers():
    out = {f"circle d={d}": circle_cover_spec(d, 256) for d in (1, 2, 3)}
    out["torus tube"] = tube_surface(build_phi_psi(2), 0.4, 64, 16).spec
    return out


def test_criterion_1_lift_correctness():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, spec in _covers().items():
        rep = check_lift(build_lift(spec), n_samples=10000, seed=0)
        good = (rep.projection_vertex_err == 0.0 and rep.projection_sample_err <= 1e-9
                and rep.fibers_ok and rep.injectivity_margin > 0)
        ok &= good
        parts.append(f"{name}: proj={rep.projection_sample_err:.1e} margin="
                     f"{rep.injectivity_margin:.2e}")
    dt = time.perf_counter() - t0
    record(1, ok and dt < 30, "; ".join(parts) + f"; {dt:.1f}s")


def test_criterion_2_g_collision_h_separation():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, spec in _covers().items():
        if name == "circle d=1":
            continue
        cols = find_g_collisions(build_lift(spec))
        hits = [c for c in cols if c.g_dist <= 1e-3 and c.h_dist > 10 * BUMP_AMPLITUDE_FLOOR]
        ok &= bool(hits)
        best = max((c.h_dist for c in hits), default=0.0)
        parts.append(f"{name}: {len(hits)} pairs, max h-gap {best:.3g}")
    dt = time.perf_counter() - t0
    record(2, ok and dt < 10, "; ".join(parts) + f"; {dt:.1f}s")


def test_criterion_3_subdivision():
    t0 = time.perf_counter()
    K = torus_mesh()
    rng = np.random.default_rng(0)
    ok = True
    worst_area = worst_loc = 0.0
    for _ in range(100):
        Y, _, _ = K.sample_points(int(rng.integers(1, 21)), rng)
        K2 = star_subdivide_at(K, Y)
        ok &= cKDTree(K2.vertices).query(Y)[0].max() == 0.0
        worst_area = max(worst_area, abs(K.total_volume() - K2.total_volume()))
        P, _, _ = K.sample_points(1000, rng)
        i1, w1 = locate_points(K, P)
        i2, w2 = locate_points(K2, P)
        r1 = np.einsum("ni,nij->nj", w1, K.vertices[K.simplex_array[i1]])
        r2 = np.einsum("ni,nij->nj", w2, K2.vertices[K2.simplex_array[i2]])
        worst_loc = max(worst_loc, np.abs(r1 - r2).max())
    dt = time.perf_counter() - t0
    ok &= worst_area <= 1e-9 and worst_loc <= 1e-9
    record(3, ok and dt < 20, f"area diff {worst_area:.1e}, location diff {worst_loc:.1e}; "
                              f"{dt:.1f}s")


def test_criterion_4_bistable_sequence(circle_run):
    report, _, dt = circle_run
    final = report["bistable_final"]
    seq = report["sequence"]
    exact = report["bistable_exact_map"]
    exact_ok = abs(exact["grad_max"] - 2) <= 0.1 and abs(exact["inv_grad_max"] - 0.5) <= 0.025
    ok = (final["eps_hat"] < 0.05 and seq["finite"] and seq["no_growth"] and exact_ok
          and dt < 300)
    record(4, ok, f"eps_hat {final['eps_hat']:.4f}, M {seq['M']:.3g} (tail projection "
                  f"{seq['projected']:.3g}), exact map grad {exact['grad_max']:.4f} inv "
                  f"{exact['inv_grad_max']:.4f}; {dt:.1f}s")


def test_criterion_5_multivalued_inversion(circle_run):
    report, _, _ = circle_run
    hd = [c["hausdorff_max"] for c in report["checkpoints"]]
    final = report["inversion"]["hausdorff_max"]
    ok = final < 0.05 and bool(np.all(np.diff(hd[-5:]) <= 0))
    record(5, ok, f"final Hausdorff {final:.4f}, last checkpoints "
                  f"{[round(h, 5) for h in hd[-5:]]}")


def test_criterion_6_orbit_recovery(orbit_runs):
    parts, ok, dt = [], True, 0.0
    for d in (2, 4):
        rep, secs = orbit_runs[d]
        dt += secs
        hd = np.array(rep["inversion"]["hausdorff"])
        ok &= len(hd) == 8 and bool(np.all(hd < 0.05))
        parts.append(f"d={d}: max {hd.max():.4f}")
    record(6, ok and dt < 300, "; ".join(parts) + f"; {dt:.1f}s")


def test_criterion_7_pushforward(circle_run):
    report, _, _ = circle_run
    t0 = time.perf_counter()
    pf = report["pushforward"]
    rng = np.random.default_rng(7)
    A, B = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
    brute = min(np.mean(np.sum((A - B[list(p)]) ** 2, axis=1))
                for p in itertools.permutations(range(8)))
    brute_err = abs(wasserstein2_exact(A, B) - np.sqrt(brute))
    dt = time.perf_counter() - t0
    ok = (pf["n"] == 256 and pf["w2_trained"] < 0.1 and pf["w2_trained"] < pf["w2_untrained"]
          and brute_err <= 1e-12 and dt < 60)
    record(7, ok, f"W2 trained {pf['w2_trained']:.4f} < untrained {pf['w2_untrained']:.4f}; "
                  f"brute-force gap {brute_err:.1e}")


def _anchor_pairs(K, rng, n_anchor, per_anchor, radius):
    S, _, _ = K.sample_points(20000, rng)
    tree = cKDTree(S)
    A, _, _ = K.sample_points(n_anchor, rng)
    pairs = []
    for a in A:
        near = tree.query_ball_point(a, radius)
        for j in rng.choice(near, per_anchor, replace=False):
            pairs.append((a, S[j]))
    return pairs


def test_criterion_8_geodesic_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    parts, ok = [], True
    cases = [("circle", circle_mesh(256), 1.0, 2.5), ("torus", torus_mesh(), 0.5, 1.4)]
    for name, K, r0, radius in cases:
        res = check_geo_euclid(K, _anchor_pairs(K, rng, 100, 12, radius), r0)
        ok &= res.n_admissible >= 1000 and not res.violations
        parts.append(f"{name}: {res.n_admissible} admissible, {len(res.violations)} violations")
    dt = time.perf_counter() - t0
    record(8, ok and dt < 10, "; ".join(parts) + f"; {dt:.1f}s")


def test_criterion_9_nonsmooth_example():
    t0 = time.perf_counter()
    ok = True
    parts = []
    for eps in (0.1, 0.01):
        x = np.linspace(-1, 1, 10001)
        f, fe, df = nonsmooth_example(eps, x)
        inside = np.abs(x) <= eps
        _, _, dfb = nonsmooth_example(eps, np.array([-eps, eps]))
        sup = np.abs(fe - f).max()
        ok &= bool(np.all((df[inside] >= 1) & (df[inside] <= 2)) and np.all((df >= 1) & (df <= 2)))
        ok &= dfb[0] == 1.0 and dfb[1] == 2.0 and abs(sup - eps / 4) <= 1e-9
        ok &= abs(x[np.argmax(np.abs(fe - f))]) < 1e-12
        parts.append(f"eps={eps}: sup {sup:.6g}")
    dt = time.perf_counter() - t0
    record(9, ok and dt < 1, "; ".join(parts))


def _fd_jacobian(layer, x, h=1e-5):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((layer(x[None] + e)[0] - layer(x[None] - e)[0]) / (2 * h))
    return np.column_stack(cols)


def test_criterion_10_jacobian_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    coupling = Coupling(np.array([1, 1, 0, 0, 0], bool), 64, rng, input_scale=2.0)
    for k in ("W3", "b3"):
        coupling.params[k] = 0.3 * rng.standard_normal(coupling.params[k].shape)
    layers = {"zeropad": ZeroPad(3, 2), "invlinear": InvLinear(5, rng, noise=0.5),
              "coupling": coupling}
    parts, ok = [], True
    for name, layer in layers.items():
        X = rng.normal(size=(50, layer.in_dim))
        J = batch_jacobian([layer], X, layer.out_dim)
        worst = max(np.linalg.norm(J[i] - _fd_jacobian(layer, X[i]))
                    / max(np.linalg.norm(J[i]), 1e-12) for i in range(50))
        ok &= worst < 1e-4
        parts.append(f"{name} {worst:.1e}")
    dt = time.perf_counter() - t0
    record(10, ok and dt < 10, "; ".join(parts))


def test_criterion_11_surface_construction():
    t0 = time.perf_counter()
    parts, ok = [], True
    for k in (2, 3, 4):
        prof = build_phi_psi(k)
        lo, hi = prof.domain
        r = np.linspace(lo, hi, 200001)
        phi, psi = prof.phi(r), prof.psi(r)
        cond = bool(np.allclose(prof.phi(-r), phi, atol=0, rtol=0))
        for a, b, v in prof.plateaus():
            rr = np.linspace(a, b, 1001)
            cond &= bool(np.abs(prof.phi(rr) - v).max() <= 1e-12
                         and np.abs(prof.phi(-rr) - v).max() <= 1e-12)
        for m, v in prof.midpoints():
            cond &= abs(prof.phi(m) - v) <= 1e-12 and abs(prof.phi(-m) - v) <= 1e-12
        centres = -(2 * np.arange(1, k) - 1) * np.pi
        dist = np.min(np.abs(r[:, None] - centres[None, :]), axis=1)
        # exp(1 - 1/(1 - s^2)) underflows to 0 once 1 - s^2 < 1/(1 - log(tiny))
        band = np.sqrt(1 - 1 / (1 - np.log(np.finfo(float).smallest_subnormal)))
        cond &= bool(np.all(psi[dist < band] > 0) and np.all(psi[dist >= 1] == 0)
                     and np.all(psi >= 0))

        si = p4_self_intersections(prof)
        expected = {(-j * np.pi, j * np.pi) for j in range(1, k)}
        found = [(a, b) for a, b in si.points]
        match = (not si.arcs and len(found) == len(expected)
                 and all(min(abs(a - e0) + abs(b - e1) for e0, e1 in expected) <= 1e-6
                         for a, b in found))
        modal = curve_fiber_count(prof).modal
        ok &= cond and match and modal == k
        parts.append(f"k={k}: profile {'ok' if cond else 'bad'}, self-intersections "
                     f"{len(found)} points {len(si.arcs)} arcs ({'match' if match else 'differ'}),"
                     f" modal {modal}")
    tube = tube_surface(build_phi_psi(2), 0.4, 64, 16)
    deg = verify_covering(tube.spec)
    ok &= deg.ok and deg.degree == 2
    parts.append(f"tube degree {deg.degree}")
    dt = time.perf_counter() - t0
    record(11, ok and dt < 30, "; ".join(parts) + f"; {dt:.1f}s")
