import json

import numpy as np
import pytest

from extproj.errors import BadDegree, ParseError
from extproj.experiments import (CircleLift, ExperimentConfig, circle_points,
                                 compose_projection_demo, equispaced_angles, read_config,
                                 run_experiment, write_outputs)
from extproj.surfaces import circle_cover

# seed-0 values of the default configuration, frozen from a reference run
EPS_HAT_SEED0 = 0.04236543502204092
W2_TRAINED_SEED0 = 0.01611780613434782
W2_UNTRAINED_SEED0 = 0.025948140919486377
ORBIT_D4_MAX_SEED0 = 0.006825120305319712

SMALL = dict(n_train=64, n_eval=128, n_test_points=4, n_w2=32,
             net={"hidden": 8, "n_e_couplings": 2, "n_t_couplings": 1},
             train={"max_steps": 20, "n_checkpoints": 5})


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(d=3, seed=7, train={"max_steps": 5})
    assert cfg.train["step_size"] == 0.2 and cfg.train["max_steps"] == 5
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert read_config(path) == cfg


def test_config_rejects_unknown_keys_and_values():
    with pytest.raises(ParseError):
        ExperimentConfig.from_dict({"d": 2, "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentConfig(experiment="nope")
    with pytest.raises(ValueError):
        ExperimentConfig(n_train=0)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_circle_lift_at_labelled_fibers(d):
    lift = CircleLift(d, equispaced_angles(8))
    for alpha in equispaced_angles(8):
        fib = lift.labelled_fiber(alpha)
        H = lift(fib)
        y = circle_points([alpha])[0]
        np.testing.assert_allclose(H[:, :2], np.tile(y, (d, 1)), atol=1e-12)
        np.testing.assert_array_equal(H[:, 2], np.arange(1, d + 1))
        np.testing.assert_array_equal(H[:, 3:], 0.0)


def test_circle_lift_projects_to_cover():
    lift = CircleLift(3, equispaced_angles(8))
    X = circle_points(np.linspace(0, 2 * np.pi, 200, endpoint=False))
    np.testing.assert_allclose(lift(X)[:, :2], circle_cover(3).map(X), atol=1e-12)
    H = lift(X)
    assert np.all(H[:, 2] >= 1) and np.all(H[:, 2] <= 3)


def test_circle_lift_injective_on_dense_samples():
    lift = CircleLift(2, equispaced_angles(8))
    H = lift(circle_points(np.linspace(0, 2 * np.pi, 2000, endpoint=False)))
    D = np.linalg.norm(H[:, None] - H[None], axis=2)
    np.fill_diagonal(D, np.inf)
    assert D.min() > 0


def test_circle_lift_bad_degree():
    with pytest.raises(BadDegree):
        CircleLift(0, equispaced_angles(4))


def test_compose_projection_counts():
    rep, _ = compose_projection_demo(ExperimentConfig(experiment="compose_projection",
                                                      n_r=32, n_theta=8))
    assert rep["counts_equal"] and rep["pad_drop_error"] == 0.0
    assert rep["variants"]["identity"]["modal"] == 2


def test_short_run_reproducible(tmp_path):
    cfg = ExperimentConfig(**SMALL)
    a, net_a = run_experiment(cfg)
    b, _ = run_experiment(cfg)
    for rep in (a, b):
        rep.pop("train_seconds")
    assert a == b
    paths = write_outputs(a, net_a, tmp_path)
    names = sorted(p.split("/")[-1] for p in paths)
    assert names == ["checkpoints.csv", "loss.csv", "network.json", "report.json"]
    assert json.loads((tmp_path / "report.json").read_text())["config"] == cfg.to_dict()


def test_degree_one_orbit_run():
    rep, _ = run_experiment(ExperimentConfig(experiment="orbit_recovery", d=1, **SMALL))
    assert rep["d"] == 1 and len(rep["inversion"]["hausdorff"]) == 4


def test_seed0_circle_baseline(circle_run):
    report, _, _ = circle_run
    assert report["bistable_final"]["eps_hat"] == pytest.approx(EPS_HAT_SEED0, rel=1e-6)
    pf = report["pushforward"]
    assert pf["w2_trained"] == pytest.approx(W2_TRAINED_SEED0, rel=1e-6)
    assert pf["w2_untrained"] == pytest.approx(W2_UNTRAINED_SEED0, rel=1e-6)
    assert report["passed"]


def test_seed0_orbit_baseline(orbit_runs):
    rep, _ = orbit_runs[4]
    assert rep["inversion"]["hausdorff_max"] == pytest.approx(ORBIT_D4_MAX_SEED0, rel=1e-6)


@pytest.mark.xfail(strict=True, reason="d = 4 orbit error drifts up slightly late in training")
def test_orbit_trajectory_nonincreasing_after_burn_in(orbit_runs):
    traj = np.array(orbit_runs[4][0]["trajectory"])
    assert np.all(np.diff(traj[len(traj) // 2:]) <= 0)


@pytest.mark.slow
def test_torus_training_reduces_loss():
    rep, _ = run_experiment(ExperimentConfig(experiment="torus_tube", seed=0))
    assert rep["covering_ok"] and rep["degree"] == 2 and rep["lift"]["passed"]
    assert rep["loss_reduction"] >= 10
