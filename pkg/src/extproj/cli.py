"""Command-line front end.

Exit codes: 0 when every check passes, 2 when a check fails, 1 on other
errors, 64 on usage errors and 74 on I/O errors.  The default output
directory comes from ``EXTPROJ_OUT`` when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import covering, metrics, simplicial, surfaces
from .epnet import EPNetwork
from .errors import ExtProjError, IoError, ParseError

EXIT_OK, EXIT_ERROR, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 64, 74
OUT_ENV = "EXTPROJ_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# -- helpers ----------------------------------------------------------------

def _out_path(args, default_name: str) -> str:
    """``--out`` if given, else ``default_name`` inside ``$EXTPROJ_OUT`` (or the cwd)."""
    if args.out:
        return args.out
    return os.path.join(os.environ.get(OUT_ENV, "."), default_name)


def _out_dir(args) -> str:
    path = args.out or os.environ.get(OUT_ENV, ".")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def _write_json(doc, path) -> None:
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_points(path) -> np.ndarray:
    """Points file: a JSON list of coordinate lists or ``{"points": [...]}``."""
    doc = _read_json(path)
    if isinstance(doc, dict):
        if "points" not in doc:
            raise ParseError(f"{path}: expected a 'points' entry")
        doc = doc["points"]
    try:
        P = np.array(doc, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if P.ndim == 1 and P.size:
        P = P[:, None]
    if P.ndim != 2:
        raise ParseError(f"{path}: points must be a list of coordinate lists")
    return P


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise UsageError(f"bad vector {text!r}") from exc


def _summary(text: str) -> None:
    print(text)


# -- subcommands ------------------------------------------------------------

def cmd_gen_cover(args) -> int:
    if args.kind == "circle":
        spec = surfaces.circle_cover_spec(args.d, args.n_segments)
    elif args.kind == "tube":
        tube = surfaces.tube_surface(surfaces.build_phi_psi(2), args.rho, args.n_r, args.n_theta)
        spec = tube.spec
    elif args.kind == "torus":
        K = surfaces.torus_mesh(n_u=args.n_r, n_v=args.n_theta)
        spec = covering.CoveringMapSpec(K, K, np.arange(K.n_vertices))
    else:  # curve
        prof = surfaces.build_phi_psi(args.k)
        fc = surfaces.curve_fiber_count(prof)
        out = _out_dir(args)
        r, _ = surfaces.curve_samples(prof)
        pts = surfaces.gamma(prof, r)
        _write_json({"points": pts.tolist()}, os.path.join(out, "curve.json"))
        _write_json({"histogram": fc.histogram, "modal": fc.modal},
                    os.path.join(out, "fiber_count.json"))
        _summary(f"curve k={args.k}: {len(pts)} points, modal fiber count {fc.modal}")
        return EXIT_OK
    out = _out_dir(args)
    simplicial.write_mesh(spec.source, os.path.join(out, "source.json"))
    simplicial.write_mesh(spec.target, os.path.join(out, "target.json"))
    covering.write_spec(spec, os.path.join(out, "spec.json"), "source.json", "target.json")
    if spec.target.dim == 2 and spec.target.ambient_dim == 3:
        simplicial.write_obj(spec.target, os.path.join(out, "target.obj"))
    rep = covering.verify_covering(spec)
    _summary(f"{args.kind} cover: {spec.source.n_vertices} -> {spec.target.n_vertices} "
             f"vertices, degree {rep.degree}, ok={rep.ok}")
    return EXIT_OK if rep.ok else EXIT_CHECK


def cmd_subdivide(args) -> int:
    K = simplicial.read_mesh(args.mesh)
    Y = read_points(args.points)
    K2 = simplicial.star_subdivide_at(K, Y)
    path = _out_path(args, "subdivided.json")
    simplicial.write_mesh(K2, path)
    _summary(f"subdivided: {K.n_vertices} -> {K2.n_vertices} vertices, "
             f"{len(K.maximal)} -> {len(K2.maximal)} maximal simplices")
    return EXIT_OK


def cmd_decompose(args) -> int:
    spec = covering.read_spec(args.spec)
    rep = covering.verify_covering(spec)
    if not rep.ok:
        _write_json(rep.to_dict(), _out_path(args, "covering_report.json"))
        _summary(f"not a covering: {len(rep.violations)} violations")
        return EXIT_CHECK
    lift = covering.build_lift(spec, seed=args.seed, bump_radius=args.bump_radius)
    path = _out_path(args, "lift.json")
    spec_ref = os.path.relpath(os.path.abspath(args.spec),
                               os.path.dirname(os.path.abspath(path)))
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    covering.write_lift(lift, path, spec_ref)
    _summary(f"lift: degree {lift.degree}, {len(lift.patches.patches)} target simplices, "
             f"bump radius {lift.bump_radius:.4g}, output dim {lift.out_dim}")
    return EXIT_OK


def cmd_check_lift(args) -> int:
    lift = covering.read_lift(args.lift)
    rep = covering.check_lift(lift, args.samples, args.seed, n_jobs=args.threads)
    _write_json(rep.to_dict(), _out_path(args, "lift_report.json"))
    _summary(f"check-lift: passed={rep.passed} projection_err={rep.projection_sample_err:.3g} "
             f"fibers_ok={rep.fibers_ok} margin={rep.injectivity_margin:.3g}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def _training_params(args) -> dict:
    from .experiments import read_config

    params = {}
    if args.config:
        cfg = read_config(args.config)
        params.update(cfg.net)
        params.update(cfg.train)
    if args.steps is not None:
        params["max_steps"] = args.steps
    if args.step_size is not None:
        params["step_size"] = args.step_size
    return params


def cmd_train(args) -> int:
    lift = covering.read_lift(args.lift)
    rng = np.random.default_rng(args.seed)
    K1 = lift.spec.source
    extra, _, _ = K1.sample_points(args.samples, rng) if args.samples else (np.empty((0, K1.ambient_dim)), None, None)
    X = np.vstack([K1.vertices, extra])
    H = covering.eval_h(lift, X)
    net = EPNetwork(proj_keep=lift.spec.target_dim, seed=args.seed, **_training_params(args))
    net.fit(X, H)
    out = _out_dir(args)
    net.save(os.path.join(out, "network.json"))
    net.write_loss_csv(os.path.join(out, "loss.csv"))
    losses = [row[1] for row in net.loss_history_]
    _summary(f"trained {len(losses) - 1} steps: loss {losses[0]:.4g} -> {net.best_loss_:.4g}")
    return EXIT_OK


def _manifold(name, args):
    if name is None:
        return None
    if name == "circle":
        return metrics.CircleManifold(args.radius)
    if name == "torus":
        return metrics.TorusManifold(args.R, args.r)
    raise UsageError(f"unknown manifold {name!r}")


def cmd_invert(args) -> int:
    net = EPNetwork.load(args.net)
    if args.y is not None:
        Y = _parse_vector(args.y)[None, :]
    elif args.points:
        Y = read_points(args.points)
    else:
        raise UsageError("give --y or --points")
    C = read_points(args.candidates)
    M = _manifold(args.manifold, args)
    EC = net.transform(C)
    results = []
    n_dup = 0
    for y in Y:
        inv = net.multivalued_invert(y, args.d, C, M, n_steps=args.steps, candidate_E=EC)
        n_dup += len(inv.duplicates)
        results.append({"y": y.tolist(), "points": inv.points.tolist(),
                        "objective": inv.objective.tolist(),
                        "duplicates": [list(p) for p in inv.duplicates]})
    _write_json({"d": args.d, "results": results}, _out_path(args, "inversion.json"))
    _summary(f"inverted {len(Y)} points into {args.d} preimages each, {n_dup} duplicate pairs")
    return EXIT_OK


def cmd_verify_bistable(args) -> int:
    net = EPNetwork.load(args.net)
    rng = np.random.default_rng(args.seed)
    if args.kind == "circle":
        M1 = M2 = metrics.CircleManifold(1.0)
        X = M1.sample(args.samples, rng)
        g = surfaces.circle_cover(args.d).map
    else:
        if args.lift is None or args.reach is None:
            raise UsageError("--kind mesh needs --lift and --reach")
        lift = covering.read_lift(args.lift)
        M1 = metrics.MeshManifold(lift.spec.source, args.reach)
        M2 = metrics.MeshManifold(lift.spec.target, args.reach)
        X, _, _ = lift.spec.source.sample_points(args.samples, rng)
        g = lift.spec.map_points
    f, jac = metrics.network_evaluators(net)
    rep = metrics.bistable_report(f, jac, g, X, M1, M2, eps_tol=args.eps, M=args.bound)
    _write_json(rep.to_dict(), _out_path(args, "bistable.json"))
    ok = all(rep.passes.values())
    inv = "n/a" if rep.inv_grad_max is None else f"{rep.inv_grad_max:.4g}"
    _summary(f"bistable: eps_hat={rep.eps_hat:.4g} grad_max={rep.grad_max:.4g} "
             f"inv_grad_max={inv} passed={ok}")
    return EXIT_OK if ok else EXIT_CHECK


def _experiment_config(args, **overrides):
    from .experiments import ExperimentConfig, read_config

    cfg = read_config(args.config) if args.config else ExperimentConfig()
    doc = cfg.to_dict()
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


def cmd_orbit_recover(args) -> int:
    from .experiments import acceptance_checks, run_orbit_recovery, write_outputs

    cfg = _experiment_config(args, experiment="orbit_recovery", seed=args.seed)
    report, net = run_orbit_recovery(args.d, cfg)
    report["checks"] = acceptance_checks(report)
    report["passed"] = all(report["checks"].values())
    write_outputs(report, net, _out_dir(args))
    _summary(f"orbit recovery d={args.d}: max Hausdorff "
             f"{report['inversion']['hausdorff_max']:.4g} passed={report['passed']}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_w2(args) -> int:
    A = read_points(args.a)
    B = read_points(args.b)
    value = metrics.wasserstein2_exact(A, B)
    if args.out:
        _write_json({"w2": value, "n": int(A.shape[0])}, args.out)
    _summary(repr(value))
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    from .experiments import run_experiment, write_outputs

    cfg = _experiment_config(args, experiment=args.experiment, seed=args.seed)
    report, net = run_experiment(cfg)
    write_outputs(report, net, _out_dir(args))
    failed = [k for k, v in report["checks"].items() if not v]
    _summary(f"{cfg.experiment}: passed={report['passed']}"
             + (f" failed={','.join(failed)}" if failed else ""))
    return EXIT_OK if report["passed"] else EXIT_CHECK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="extproj",
                description="Covering-map lifts, extension-projection networks and "
                            "bistable approximation checks.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_text, func, seed=True, config=False):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--out", help=f"output path (default: under ${OUT_ENV} or the cwd)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
        if seed:
            sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
        if config:
            sp.add_argument("--config", help="experiment config JSON")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-cover", "Generate a cover and write meshes and the covering spec.",
             cmd_gen_cover, seed=False)
    sp.add_argument("--kind", choices=["circle", "tube", "torus", "curve"], required=True)
    sp.add_argument("--d", type=int, default=2, help="circle cover degree")
    sp.add_argument("--k", type=int, default=2, help="curve sheet count")
    sp.add_argument("--n-segments", type=int, default=256, help="target circle segments")
    sp.add_argument("--rho", type=float, default=0.4, help="tube radius")
    sp.add_argument("--n-r", type=int, default=64, help="tube/torus grid size along the curve")
    sp.add_argument("--n-theta", type=int, default=16, help="tube/torus grid size around it")

    sp = add("subdivide", "Star-subdivide a mesh so given points become vertices.",
             cmd_subdivide, seed=False)
    sp.add_argument("--mesh", required=True, help="mesh JSON")
    sp.add_argument("--points", required=True, help="points JSON")

    sp = add("decompose", "Verify a covering spec and build its lift.", cmd_decompose)
    sp.add_argument("--spec", required=True, help="covering spec JSON")
    sp.add_argument("--bump-radius", type=float, default=None, help="override the bump radius")

    sp = add("check-lift", "Check projection, fiber and injectivity properties of a lift.",
             cmd_check_lift)
    sp.add_argument("--lift", required=True, help="lift JSON")
    sp.add_argument("--samples", type=int, default=10000, help="random sample count")

    sp = add("train", "Train a network on samples of a lift.", cmd_train, config=True)
    sp.add_argument("--lift", required=True, help="lift JSON")
    sp.add_argument("--samples", type=int, default=0, help="extra random training points")
    sp.add_argument("--steps", type=int, default=None, help="training steps")
    sp.add_argument("--step-size", type=float, default=None, help="learning rate")

    sp = add("invert", "Multivalued inversion of a trained network.", cmd_invert, seed=False)
    sp.add_argument("--net", required=True, help="network JSON")
    sp.add_argument("--d", type=int, required=True, help="number of preimages")
    sp.add_argument("--candidates", required=True, help="candidate points JSON")
    sp.add_argument("--y", default=None, help="comma-separated target point")
    sp.add_argument("--points", default=None, help="target points JSON")
    sp.add_argument("--manifold", choices=["circle", "torus"], default=None,
                    help="project refinement steps onto this manifold")
    sp.add_argument("--radius", type=float, default=1.0, help="circle radius")
    sp.add_argument("--R", type=float, default=2.0, help="torus major radius")
    sp.add_argument("--r", type=float, default=0.5, help="torus minor radius")
    sp.add_argument("--steps", type=int, default=20, help="refinement steps")

    sp = add("verify-bistable", "Measure the bistable approximation quantities.",
             cmd_verify_bistable)
    sp.add_argument("--net", required=True, help="network JSON")
    sp.add_argument("--kind", choices=["circle", "mesh"], default="circle")
    sp.add_argument("--d", type=int, default=2, help="circle cover degree")
    sp.add_argument("--lift", default=None, help="lift JSON (mesh kind)")
    sp.add_argument("--reach", type=float, default=None, help="mesh reach (mesh kind)")
    sp.add_argument("--samples", type=int, default=1000, help="sample count")
    sp.add_argument("--eps", type=float, default=None, help="required sup error")
    sp.add_argument("--bound", type=float, default=None, help="required gradient bound M")

    sp = add("orbit-recover", "Recover cyclic-group orbits on the circle.", cmd_orbit_recover,
             config=True)
    sp.add_argument("--d", type=int, required=True, help="group order")

    sp = add("w2", "Exact Wasserstein-2 distance between two point sets.", cmd_w2, seed=False)
    sp.add_argument("--a", required=True, help="points JSON")
    sp.add_argument("--b", required=True, help="points JSON")

    sp = add("run-experiment", "Run a configured experiment and write its report.",
             cmd_run_experiment, config=True)
    sp.add_argument("--experiment", default=None,
                    choices=["circle_d", "torus_tube", "orbit_recovery", "compose_projection"],
                    help="override the experiment named in the config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"extproj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IoError as exc:
        print(f"extproj: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ExtProjError, ValueError) as exc:
        print(f"extproj: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
