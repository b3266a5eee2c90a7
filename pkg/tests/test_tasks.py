import math

import numpy as np
import pytest

from prom.analysis import column_terms
from prom.chain import KinematicChain
from prom.errors import InvalidInputError
from prom.heads import HEADS, get_head, ortho_forward, ortho_vjp
from prom.ortho import finite_difference_jacobian
from prom.rotcore import flatten, is_rotation, sample_rotations
from prom.tasks import (
    LossConfig,
    RunRecord,
    TrainConfig,
    evaluate_head,
    mse,
    train_chain,
    train_point_cloud,
    train_rotation_recovery,
    write_rows,
    write_run_records,
)
from prom.tinynet import Mlp

QUICK = dict(epochs=3, steps_per_epoch=50, eval_size=200, eval_every=50)


def _head_input(name, rng, n):
    dim = HEADS[name].dim
    return rng.normal(size=(n, dim))


@pytest.mark.parametrize("name", sorted(HEADS))
def test_head_vjp_matches_finite_differences(name):
    rng = np.random.default_rng(0)
    head = get_head(name)
    out = _head_input(name, rng, 20)
    target = sample_rotations(rng, 20)

    def loss(o):
        return np.array([mse(head.forward(o[i]), target[i])[0] for i in range(len(o))])

    fd = finite_difference_jacobian(lambda o: loss(o)[..., None], out)[:, 0, :]
    analytic = np.stack([head.vjp(out[i], mse(head.forward(out[i]), target[i])[1]) for i in range(20)])
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_prom_gradient_is_the_raw_residual():
    rng = np.random.default_rng(1)
    head = get_head("prom")
    out = rng.normal(size=(100, 9))
    target = sample_rotations(rng, 100)
    pred = head.forward(out)
    _, g = mse(pred, target)
    grad = head.vjp(out, g)
    assert np.array_equal(grad, flatten(2.0 * (pred - target) / pred.size))
    diff = out[:, 0] - target[:, 0, 0]
    assert np.all(np.sign(grad[:, 0]) == np.sign(diff))


@pytest.mark.parametrize("name,method", [("six_d", "gs"), ("svd", "svd")])
def test_tape_gradient_equals_sum_of_column_terms(name, method):
    rng = np.random.default_rng(2)
    head = get_head(name)
    target = sample_rotations(rng, 100)
    noisy = target + 0.5 * rng.normal(size=target.shape)
    out = np.concatenate([noisy[:, :, 0], noisy[:, :, 1]], -1) if name == "six_d" else flatten(noisy)
    terms, _ = column_terms(method, noisy, target)
    per_sample = np.stack([head.vjp(out[i], mse(head.forward(out[i]), target[i])[1])[0] for i in range(100)])
    assert np.allclose(terms.sum(axis=1), per_sample, rtol=1e-6, atol=1e-12)


def test_ortho_maps_and_aliases():
    p = np.random.default_rng(3).normal(size=(10, 3, 3))
    assert np.array_equal(ortho_forward("id", p), p)
    assert is_rotation(ortho_forward("gs", p), tol=1e-9)
    assert is_rotation(ortho_forward("svd", p), tol=1e-9)
    g = np.ones_like(p)
    assert np.array_equal(ortho_vjp("identity", p, g), g)
    with pytest.raises(InvalidInputError):
        ortho_forward("qr", p)
    with pytest.raises(InvalidInputError):
        get_head("rodrigues")


def test_loss_config_validation_and_label():
    assert LossConfig(ortho_in_theta="gs").label == "gs-id"
    assert LossConfig(ortho_in_theta="6d", ortho_in_downstream="svd").label == "gs-svd"
    with pytest.raises(InvalidInputError):
        LossConfig(use_rotation_loss=False, use_downstream_loss=False)


def test_perfect_predictor_scores_zero():
    rng = np.random.default_rng(4)
    r = sample_rotations(rng, 50)
    net = Mlp([9, 9], activation=[], bias=True)
    net.set_params(np.concatenate([np.eye(9).ravel(), np.zeros(9)]))
    err = evaluate_head(get_head("prom"), net, flatten(r), r)
    assert np.all(err < 1e-5)


def test_untrained_network_is_far_off():
    res = train_rotation_recovery("prom", TrainConfig(epochs=0, eval_size=300))
    assert res.records == []
    assert 10 < res.mean < 180


def test_rotation_recovery_learns_quickly():
    res = train_rotation_recovery("prom", TrainConfig(**QUICK))
    assert res.mean < 10
    assert res.records[0].step == 0
    steps = [r.step for r in res.records]
    assert steps == sorted(steps)
    assert math.isfinite(res.records[0].eval_geodesic_deg)


def test_runs_are_deterministic():
    a = train_rotation_recovery("six_d", TrainConfig(**QUICK, seed=5))
    b = train_rotation_recovery("six_d", TrainConfig(**QUICK, seed=5))
    assert a.records == b.records
    assert np.array_equal(a.errors_deg, b.errors_deg)


def test_divergence_is_recorded_not_raised():
    res = train_rotation_recovery("prom", TrainConfig(epochs=1, steps_per_epoch=50, optimizer="sgd",
                                                       lr=1e4, eval_size=50))
    assert res.diverged_at is not None
    assert res.records[-1].diverged
    assert len(res.errors_deg) == 0
    assert res.summary()["diverged_at"] == res.diverged_at


def test_point_cloud_identity_targets():
    def identity(rng, n):
        return np.broadcast_to(np.eye(3), (n, 3, 3)).copy()

    for head in ("prom", "six_d"):
        res = train_point_cloud(head, TrainConfig(**QUICK), target_sampler=identity)
        assert res.mean < 0.5


def test_point_cloud_downstream_only():
    res = train_point_cloud("prom", TrainConfig(epochs=10, eval_size=300), use_rotation_loss=False)
    assert res.mean < 5
    assert all(r.loss_theta == 0.0 for r in res.records)


def test_point_cloud_needs_three_points():
    with pytest.raises(InvalidInputError):
        train_point_cloud("prom", n_points=2)


def test_single_joint_fixed_target_is_fit_exactly():
    chain = KinematicChain.default(1)
    res = train_chain("prom", LossConfig(), chain, TrainConfig(**QUICK), max_angle=0.0)
    assert res.records[-1].total_loss < 1e-4


def test_chain_downstream_only_converges():
    cfg = TrainConfig(epochs=5, eval_size=200)
    res = train_chain("prom", LossConfig(use_rotation_loss=False), cfg=cfg)
    losses = [r.total_loss for r in res.records]
    assert losses[-1] < 0.1 * losses[0]
    assert all(r.loss_theta == 0.0 for r in res.records)


@pytest.mark.parametrize("theta,down", [("id", "id"), ("gs", "id"), ("id", "gs"), ("gs", "gs"), ("svd", "svd")])
def test_chain_variants_complete(theta, down):
    res = train_chain("prom", LossConfig(ortho_in_theta=theta, ortho_in_downstream=down),
                      cfg=TrainConfig(**QUICK))
    assert res.diverged_at is None
    assert res.extra["variant"] == LossConfig(ortho_in_theta=theta, ortho_in_downstream=down).label
    assert math.isfinite(res.extra["position_mse"])


def test_csv_writers_use_lf_and_blank_nans(tmp_path):
    path = tmp_path / "runs.csv"
    write_run_records(path, [RunRecord(0, 1.5, 1.0, 0.5, 2.0), RunRecord(10, 0.5, 0.25, 0.25, 1.0, 3.0, True)])
    text = path.read_bytes().decode()
    assert "\r" not in text
    lines = text.splitlines()
    assert lines[0] == "step,total_loss,loss_theta,loss_y,grad_norm,eval_geodesic_deg,diverged"
    assert lines[1] == "0,1.5,1.0,0.5,2.0,,0"
    assert lines[2] == "10,0.5,0.25,0.25,1.0,3.0,1"
    write_rows(tmp_path / "rows.csv", ("a", "b"), [{"a": 1}])
    assert (tmp_path / "rows.csv").read_text() == "a,b\n1,\n"
