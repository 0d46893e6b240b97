"""End-to-end pipelines: circle and torus cover training, orbit recovery and
the composition-of-projections demonstration.

Every run is determined by an ``ExperimentConfig``; the full config is echoed
into each report so artifacts can be traced back to their settings.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .covering import bump, build_lift, check_lift, eval_h, verify_covering
from .epnet import EPNetwork
from .epnet.layers import InvLinear
from .errors import BadDegree, IoError, ParseError
from .metrics import (CircleManifold, bistable_report, check_bistable_sequence, hausdorff,
                      network_evaluators, pushforward_check)
from .surfaces import build_phi_psi, circle_cover, smoothstep, tube_surface, verify_fiber_count

EXPERIMENTS = ("circle_d", "torus_tube", "orbit_recovery", "compose_projection")


def _default_net():
    return {"n_e_couplings": 4, "n_t_couplings": 2, "hidden": 64, "input_scale": 4.0}


def _default_train():
    return {"max_steps": 2000, "step_size": 0.2, "momentum": 0.9, "batch_size": None,
            "clip_norm": 1.0, "decay": "cosine", "n_checkpoints": 10}


@dataclass
class ExperimentConfig:
    experiment: str = "circle_d"
    d: int = 2
    n_train: int = 512
    n_eval: int = 2048
    n_test_points: int = 8
    tail_amplitude: float = 0.3
    n_w2: int = 256
    rho: float = 0.4
    n_r: int = 64
    n_theta: int = 16
    n_lift_samples: int = 10000
    net: dict = field(default_factory=_default_net)
    train: dict = field(default_factory=_default_train)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        for name in ("n_train", "n_eval", "n_test_points", "n_w2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        net, train = _default_net(), _default_train()
        net.update(self.net)
        train.update(self.train)
        self.net, self.train = net, train

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ParseError(f"unknown config keys: {sorted(extra)}")
        return cls(**doc)


def read_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        return ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def equispaced_angles(n: int) -> np.ndarray:
    """The fixed equispaced test angles ``2 pi i / n``."""
    return 2 * np.pi * np.arange(n) / n


def circle_points(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.column_stack([np.cos(theta), np.sin(theta)])


class CircleLift:
    """Analytic injective lift of the ``d``-fold circle cover.

    The circle is vertexed at the fibers of the test angles; each fiber is
    labelled ``1..d`` by increasing angle in ``[0, 2 pi)``.  The stack
    coordinate blends neighbouring labels with a quintic smoothstep so the
    lift is smooth.  The trailing block is ``(1 - Psi) f`` with ``f`` the
    rescaled coordinates times ``tail_amplitude``, which vanishes on the
    labelled fiber points.
    """

    def __init__(self, d: int, angles, tail_amplitude: float = 0.3):
        if int(d) != d or d < 1:
            raise BadDegree(f"degree must be a positive integer, got {d!r}")
        self.d = int(d)
        self.tail_amplitude = float(tail_amplitude)
        alpha = np.asarray(angles, dtype=float)
        fib = ((alpha[:, None] + 2 * np.pi * np.arange(self.d)) / self.d) % (2 * np.pi)
        lab = np.argsort(np.argsort(fib, axis=1), axis=1) + 1
        order = np.argsort(fib.ravel())
        self.knots = fib.ravel()[order]
        self.labels = lab.ravel()[order].astype(float)
        self.points = circle_points(self.knots)
        gaps = np.diff(np.r_[self.knots, self.knots[0] + 2 * np.pi])
        if gaps.min() <= 0:
            raise ValueError("test angles produce repeated fiber points")
        # chord between the closest knots
        self.bump_radius = 0.45 * 2 * np.sin(gaps.min() / 2)

    @property
    def out_dim(self) -> int:
        return 5

    def stack(self, theta) -> np.ndarray:
        a = np.r_[self.knots, self.knots[0] + 2 * np.pi]
        lab = np.r_[self.labels, self.labels[0]]
        th = np.asarray(theta, dtype=float) % (2 * np.pi)
        # angles below the first knot belong to the wrap-around interval
        th = np.where(th < a[0], th + 2 * np.pi, th)
        i = np.clip(np.searchsorted(a, th, side="right") - 1, 0, len(a) - 2)
        s, _ = smoothstep((th - a[i]) / (a[i + 1] - a[i]))
        return lab[i] + (lab[i + 1] - lab[i]) * s

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        th = np.arctan2(X[:, 1], X[:, 0])
        r = np.linalg.norm(X[:, None, :] - self.points[None], axis=2)
        psi = bump(r, self.bump_radius).sum(axis=1)
        f = self.tail_amplitude * (circle_points(th) + 1) / 2
        Y = np.column_stack([np.cos(self.d * th), np.sin(self.d * th), self.stack(th)])
        return np.column_stack([Y, (1 - psi)[:, None] * f])

    def labelled_fiber(self, alpha: float) -> np.ndarray:
        """Fiber points over angle ``alpha`` ordered by their label."""
        fib = ((alpha + 2 * np.pi * np.arange(self.d)) / self.d) % (2 * np.pi)
        return circle_points(np.sort(fib))


def _make_net(cfg: ExperimentConfig, proj_keep: int, max_steps=None) -> EPNetwork:
    params = dict(cfg.net)
    params.update(cfg.train)
    if max_steps is not None:
        params["max_steps"] = max_steps
    return EPNetwork(proj_keep=proj_keep, seed=cfg.seed, **params)


def inversion_distances(net, d: int, alphas, candidates, manifold, candidate_E=None):
    """Hausdorff distance between ``d`` recovered preimages and the true fiber, per angle."""
    cover = circle_cover(d)
    if candidate_E is None:
        candidate_E = net.transform(candidates)
    out, dups = [], []
    for a in alphas:
        y = circle_points([a])[0]
        inv = net.multivalued_invert(y, d, candidates, manifold, candidate_E=candidate_E)
        out.append(hausdorff(inv.points, cover.fiber(y)))
        dups.append(inv.duplicates)
    return np.array(out), dups


def _train_circle(cfg: ExperimentConfig, d: int):
    lift = CircleLift(d, equispaced_angles(cfg.n_test_points), cfg.tail_amplitude)
    X = circle_points(2 * np.pi * np.arange(cfg.n_train) / cfg.n_train)
    H = lift(X)
    t0 = time.perf_counter()
    net = _make_net(cfg, 2).fit(X, H)
    return lift, net, time.perf_counter() - t0


def run_cover_training(kind: str, cfg: ExperimentConfig) -> dict:
    """Train on a cover's lift and report per-checkpoint diagnostics."""
    if kind == "circle_d":
        return _run_circle(cfg)
    if kind == "torus_tube":
        return _run_torus(cfg)
    raise ValueError(f"unknown cover kind {kind!r}")


def _run_circle(cfg: ExperimentConfig, orbit_only: bool = False) -> dict:
    d = cfg.d
    cover = circle_cover(d)
    M = CircleManifold(1.0)
    lift, net, train_time = _train_circle(cfg, d)
    Xe = circle_points(2 * np.pi * (np.arange(cfg.n_eval) + 0.5) / cfg.n_eval)
    alphas = equispaced_angles(cfg.n_test_points)

    checkpoints = []
    for i, (step, _) in enumerate(net.checkpoints_):
        net_i = net.at_checkpoint(i)
        hd, _ = inversion_distances(net_i, d, alphas, Xe, M)
        row = {"step": step, "hausdorff": hd.tolist(), "hausdorff_max": float(hd.max())}
        if not orbit_only:
            f, jac = network_evaluators(net_i)
            row["bistable"] = bistable_report(f, jac, cover.map, Xe, M, M).to_dict()
        checkpoints.append(row)

    hd, dups = inversion_distances(net, d, alphas, Xe, M)
    report = {
        "config": cfg.to_dict(),
        "kind": "circle_d",
        "d": d,
        "train_seconds": train_time,
        "final_loss": float(net.best_loss_),
        "checkpoints": checkpoints,
        "inversion": {"angles": alphas.tolist(), "hausdorff": hd.tolist(),
                      "hausdorff_max": float(hd.max()), "duplicates": dups},
    }
    if orbit_only:
        return report, net

    f, jac = network_evaluators(net)
    final = bistable_report(f, jac, cover.map, Xe, M, M)
    exact = bistable_report(cover.map, cover.jacobian, cover.map, Xe, M, M)
    seq = check_bistable_sequence(_reports(checkpoints))
    untrained = _make_net(cfg, 2, max_steps=0).fit(Xe[:2], lift(Xe[:2]))
    target = lambda n, rng: M.sample(n, rng)  # noqa: E731
    w2 = pushforward_check(net, target, target, cfg.n_w2, cfg.seed)
    w2_init = pushforward_check(untrained, target, target, cfg.n_w2, cfg.seed)
    report.update({
        "bistable_final": final.to_dict(),
        "bistable_exact_map": exact.to_dict(),
        "sequence": seq.to_dict(),
        "pushforward": {"n": cfg.n_w2, "w2_trained": w2, "w2_untrained": w2_init},
    })
    return report, net


def _reports(checkpoints):
    from .metrics import BistableReport

    return [BistableReport(**{k: v for k, v in c["bistable"].items()}) for c in checkpoints]


def _run_torus(cfg: ExperimentConfig) -> dict:
    tube = tube_surface(build_phi_psi(2), cfg.rho, cfg.n_r, cfg.n_theta)
    cov = verify_covering(tube.spec)
    lift = build_lift(tube.spec, seed=cfg.seed)
    lift_report = check_lift(lift, cfg.n_lift_samples, cfg.seed)
    X = tube.source.vertices
    H = eval_h(lift, X)
    m2 = tube.target.ambient_dim
    t0 = time.perf_counter()
    net = _make_net(cfg, m2).fit(X, H)
    train_time = time.perf_counter() - t0
    losses = np.array([row[2] for row in net.loss_history_])
    report = {
        "config": cfg.to_dict(),
        "kind": "torus_tube",
        "degree": cov.degree,
        "covering_ok": cov.ok,
        "lift": lift_report.to_dict(),
        "train_seconds": train_time,
        "initial_loss_E": float(losses[0]),
        "best_loss_E": float(losses.min()),
        "loss_reduction": float(losses[0] / max(losses.min(), 1e-300)),
        "checkpoint_steps": [s for s, _ in net.checkpoints_],
    }
    return report, net


def run_orbit_recovery(d: int, cfg: ExperimentConfig) -> dict:
    """Recover cyclic-group orbits on the circle by multivalued inversion."""
    if int(d) != d or d < 1:
        raise BadDegree(f"degree must be a positive integer, got {d!r}")
    cfg = ExperimentConfig(**{**cfg.to_dict(), "d": int(d), "experiment": "orbit_recovery"})
    report, net = _run_circle(cfg, orbit_only=True)
    report["kind"] = "orbit_recovery"
    traj = [c["hausdorff_max"] for c in report["checkpoints"]]
    report["trajectory"] = traj
    return report, net


def compose_projection_demo(cfg: ExperimentConfig) -> dict:
    """Fiber counts of ``p2 . T2 . J2 . p . T1 . J1`` on the torus tube.

    ``J`` pads with one zero coordinate and ``p`` keeps the first three
    coordinates.  The identity variant is the plain projection; the random
    variant uses invertible linear maps, where ``T1`` is applied and then
    undone so the cover is unchanged up to the bijection ``p2 . T2 . J2``.
    """
    tube = tube_surface(build_phi_psi(2), cfg.rho, cfg.n_r, cfg.n_theta)
    rng = np.random.default_rng(cfg.seed)
    X = tube.source.vertices
    m1, m2 = X.shape[1], tube.target.ambient_dim
    T1 = InvLinear(m1 + 1, rng, noise=0.5)
    T2 = InvLinear(m2 + 1, rng, noise=0.5)

    def pad(Z):
        return np.column_stack([Z, np.zeros(len(Z))])

    def composite(t1, t2):
        def f(Z):
            U = t1(pad(Z))[:, :m2]
            return t2(pad(U))[:, :m2]
        return f

    ident = lambda Z: Z  # noqa: E731
    variants = {
        "identity": composite(ident, ident),
        "random": composite(lambda Z: T1.inverse(T1(Z)), T2),
    }
    out = {"config": cfg.to_dict(), "kind": "compose_projection", "variants": {}}
    for name, f in variants.items():
        fc = verify_fiber_count(X, f(X), f, tol=1e-6)
        out["variants"][name] = {"histogram": fc.histogram, "modal": fc.modal}
    roundtrip = np.abs(pad(X)[:, :m1] - X).max()
    out["pad_drop_error"] = float(roundtrip)
    out["counts_equal"] = bool(out["variants"]["identity"]["histogram"]
                               == out["variants"]["random"]["histogram"])
    return out, None


def acceptance_checks(report: dict) -> dict:
    """Pass/fail flags for a report, used for the run exit status."""
    kind = report["kind"]
    checks = {}
    if kind == "circle_d":
        hd = [c["hausdorff_max"] for c in report["checkpoints"]]
        checks["sup_error"] = report["bistable_final"]["eps_hat"] < 0.05
        checks["shared_bound"] = report["sequence"]["finite"] and report["sequence"]["no_growth"]
        checks["inversion"] = report["inversion"]["hausdorff_max"] < 0.05
        checks["inversion_trend"] = bool(np.all(np.diff(hd[-5:]) <= 0))
        exact = report["bistable_exact_map"]
        checks["exact_map"] = (abs(exact["grad_max"] - report["d"]) <= 0.05 * report["d"]
                               and abs(exact["inv_grad_max"] - 1 / report["d"])
                               <= 0.05 / report["d"])
        pf = report["pushforward"]
        checks["pushforward"] = pf["w2_trained"] < 0.1 and pf["w2_trained"] < pf["w2_untrained"]
    elif kind == "orbit_recovery":
        checks["orbit"] = report["inversion"]["hausdorff_max"] < 0.05
    elif kind == "torus_tube":
        checks["lift"] = report["lift"]["passed"]
        checks["degree"] = report["degree"] == 2
        checks["loss_reduction"] = report["loss_reduction"] >= 10
    elif kind == "compose_projection":
        checks["modal"] = report["variants"]["identity"]["modal"] == 2
        checks["counts_equal"] = report["counts_equal"]
    return {k: bool(v) for k, v in checks.items()}


def run_experiment(cfg: ExperimentConfig):
    """Dispatch on ``cfg.experiment``; returns ``(report, net)``."""
    if cfg.experiment == "circle_d":
        report, net = run_cover_training("circle_d", cfg)
    elif cfg.experiment == "torus_tube":
        report, net = run_cover_training("torus_tube", cfg)
    elif cfg.experiment == "orbit_recovery":
        report, net = run_orbit_recovery(cfg.d, cfg)
    else:
        report, net = compose_projection_demo(cfg)
    report["checks"] = acceptance_checks(report)
    report["passed"] = all(report["checks"].values())
    return report, net


def write_outputs(report: dict, net, out_dir) -> list[str]:
    """Write ``report.json``, the loss curve and checkpoint curve CSVs, and the network."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, "report.json")]
        with open(paths[0], "w") as fh:
            json.dump(report, fh, indent=1)
        if net is not None:
            paths.append(os.path.join(out_dir, "loss.csv"))
            net.write_loss_csv(paths[-1])
            paths.append(os.path.join(out_dir, "network.json"))
            net.save(paths[-1])
        if report.get("checkpoints"):
            paths.append(os.path.join(out_dir, "checkpoints.csv"))
            with open(paths[-1], "w", newline="") as fh:
                w = csv.writer(fh)
                bist = "bistable" in report["checkpoints"][0]
                w.writerow(["step", "hausdorff_max"]
                           + (["eps_hat", "grad_max", "inv_grad_max"] if bist else []))
                for c in report["checkpoints"]:
                    row = [c["step"], repr(c["hausdorff_max"])]
                    if bist:
                        b = c["bistable"]
                        row += [repr(b["eps_hat"]), repr(b["grad_max"]), repr(b["inv_grad_max"])]
                    w.writerow(row)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return paths
