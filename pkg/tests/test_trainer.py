import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rfnet.bench import gen_instance, instance_rng, named_suite
from rfnet.model import RfnModel, center, covariance
from rfnet.projection import ProjectionKind, Stage
from rfnet.trainer import (
    IterationRecord,
    TrainConfig,
    TrainTrace,
    TrainingError,
    bound_params,
    dropout,
    init_model,
    mstep,
    stack,
    train,
    transform,
    weight_decay,
)

from conftest import random_spd


def approx_error(W, U, S, C):
    UWt = U @ W.T
    return C - UWt - UWt.T + W @ S @ W.T


def small_problem(rng, n=60, m=8, l=3):
    W = rng.standard_normal((m, l))
    H = np.maximum(rng.standard_normal((n, l)), 0)
    return H @ W.T + 0.3 * rng.standard_normal((n, m))


# -- config ---------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"l": 0}, {"eta": 0.0}, {"eta": 1.5}, {"iterations": -1}, {"psi_min": 0.0},
    {"dropout_rate": 1.0}, {"psi_mode": "banded"}, {"estep": "exact"}, {"tau": -1.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = TrainConfig(l=7, eta=0.3, projection="rectify", estep="projection", seed=9)
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert back.projection is ProjectionKind.RECTIFY


# -- building blocks ------------------------------------------------------------

def test_init_model_auto_tau(rng):
    model = init_model(2, TrainConfig(l=3), rng, C=np.diag([2.0, 4.0]))
    assert_array_equal(model.psi, [3.0, 3.0])
    assert model.W.shape == (2, 3)
    assert np.all(np.abs(model.W) <= 0.01)


def test_init_model_full_psi_and_fixed_tau(rng):
    model = init_model(3, TrainConfig(l=2, tau=0.5, psi_mode="full", rho=0.0), rng)
    assert_array_equal(model.psi, 0.5 * np.eye(3))
    assert_array_equal(model.W, 0.0)


def test_mstep_unit_rate_is_closed_form(rng):
    model = RfnModel(W=rng.standard_normal((5, 2)), psi=np.ones(5))
    U = rng.standard_normal((5, 2))
    S = random_spd(rng, 2)
    C = random_spd(rng, 5)
    new, E = mstep(model, U, S, C, 1.0)
    assert_allclose(new.W, U @ np.linalg.inv(S), atol=1e-12)
    assert_allclose(E, approx_error(model.W, U, S, C), atol=1e-12)
    assert_allclose(new.psi, np.diag(E), atol=1e-12)


def test_mstep_fixed_point(rng):
    W = rng.standard_normal((4, 2))
    S = random_spd(rng, 2)
    U = W @ S
    C = random_spd(rng, 4) + W @ S @ W.T
    psi = np.diag(approx_error(W, U, S, C))
    new, _ = mstep(RfnModel(W=W, psi=psi), U, S, C, 0.5)
    assert_allclose(new.W, W, atol=1e-12)
    assert_allclose(new.psi, psi, atol=1e-12)


def test_mstep_partial_step_lowers_error(rng):
    model = RfnModel(W=rng.standard_normal((6, 3)), psi=np.ones(6))
    U = rng.standard_normal((6, 3))
    S = random_spd(rng, 3)
    C = random_spd(rng, 6)
    new, E = mstep(model, U, S, C, 0.5)
    assert np.trace(approx_error(new.W, U, S, C)) <= np.trace(E)


def test_mstep_full_psi_stays_symmetric(rng):
    model = RfnModel(W=rng.standard_normal((4, 2)), psi=np.eye(4))
    new, _ = mstep(model, rng.standard_normal((4, 2)), random_spd(rng, 2), random_spd(rng, 4), 0.3)
    assert_allclose(new.psi, new.psi.T, atol=0)


def test_bound_params():
    model = RfnModel(W=np.array([[200.0, -300.0]]), psi=np.array([1e-9]))
    out = bound_params(model, np.array([[2.0]]), 1e-4, 100.0)
    assert_array_equal(out.W, [[100.0, -100.0]])
    assert_array_equal(out.psi, [1e-4])
    out = bound_params(RfnModel(W=np.zeros((1, 1)), psi=[5.0]), np.array([[2.0]]), 1e-4, 100.0)
    assert_array_equal(out.psi, [2.0])


def test_weight_decay():
    assert_allclose(weight_decay(np.array([[0.3, 2.0, -2.0]]), gamma_L=0.5), [[0.0, 1.5, -1.5]])
    assert_allclose(weight_decay(np.array([[2.0]]), gamma_G=0.25), [[1.5]])
    W = np.ones((2, 2))
    assert_array_equal(weight_decay(W), W)


def test_dropout_fraction(rng):
    mu = np.ones((200, 50))
    out = dropout(mu, 0.3, rng)
    assert np.mean(out == 0) == pytest.approx(0.3, abs=0.02)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert_array_equal(dropout(mu, 0.0, rng), mu)
    with pytest.raises(ValueError):
        dropout(mu, 1.0, rng)


# -- training -------------------------------------------------------------------

def test_train_shapes_and_trace(rng):
    V = small_problem(rng)
    model, code, trace = train(V, TrainConfig(l=4, iterations=20))
    assert model.W.shape == (8, 4) and code.shape == (60, 4)
    assert len(trace) == 20
    assert isinstance(trace.records[0], IterationRecord)
    assert trace.to_text().startswith(TrainTrace.HEADER)
    assert len(trace.to_text().splitlines()) == 21
    assert_allclose(model.mean, V.mean(axis=0))
    assert np.all(code >= 0)
    for key in ("F", "SP", "ER", "S", "dead_units"):
        assert key in trace.final


def test_train_zero_iterations(rng):
    model, code, trace = train(small_problem(rng), TrainConfig(l=2, iterations=0))
    assert len(trace) == 0 and np.isnan(trace.final["F"])
    assert code.shape == (60, 2)


def test_train_zero_data_flags_dead_units(caplog):
    with caplog.at_level(logging.WARNING, logger="rfnet.trainer"):
        _, code, trace = train(np.zeros((10, 4)), TrainConfig(l=3, iterations=5))
    assert np.all(np.isfinite(code))
    assert_array_equal(trace.final["dead_units"], [1, 2])
    assert "zero for every sample" in caplog.text


def test_train_needs_two_samples():
    with pytest.raises(ValueError):
        train(np.ones((1, 3)), TrainConfig(l=1))


def test_train_reports_numeric_failure(rng, monkeypatch):
    import rfnet.trainer as tr

    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("boom")

    monkeypatch.setattr(tr, "posterior", broken)
    with pytest.raises(TrainingError) as info:
        train(small_problem(rng), TrainConfig(l=2, iterations=3))
    assert info.value.iteration == 0


@pytest.mark.parametrize("kind", list(ProjectionKind))
def test_cascade_training_raises_F(rng, kind):
    V = small_problem(rng)
    _, _, trace = train(V, TrainConfig(l=4, iterations=150, projection=kind))
    F = trace.column("F")
    assert np.min(np.diff(F)) > -1e-8
    assert trace.stages()[0] is Stage.NEWTON


def test_training_is_deterministic(rng):
    V = small_problem(rng)
    cfg = TrainConfig(l=3, iterations=30, dropout_rate=0.2, seed=4)
    a, b = train(V, cfg), train(V, cfg)
    assert_array_equal(a.model.W, b.model.W)
    assert_array_equal(a.code, b.code)


def test_full_psi_training(rng):
    model, _, trace = train(small_problem(rng), TrainConfig(l=3, iterations=40, psi_mode="full"))
    assert model.psi.shape == (8, 8)
    assert np.all(np.diag(model.psi) >= 1e-4)
    assert np.all(np.isfinite(trace.column("F")))


def test_stop_tol_ends_early(rng):
    _, _, trace = train(small_problem(rng), TrainConfig(l=3, iterations=2000, stop_tol=1e-6))
    assert len(trace) < 2000


def test_d1_sparseness_in_projection_mode():
    V = gen_instance(named_suite("D1"), instance_rng(0, "D1", 0)).data
    _, _, trace = train(V, TrainConfig(l=50, estep="projection"))
    assert 70.0 <= trace.final["SP"] <= 80.0


# -- transform / stacking ----------------------------------------------------------

def test_transform_reproduces_training_code_scale(rng):
    V = small_problem(rng, n=80)
    model, _, trace = train(V, TrainConfig(l=3, iterations=60))
    code = transform(model, V)
    live = model.column_rms > 0
    assert_allclose(np.mean(code[:, live] ** 2, axis=0), 1.0, rtol=1e-10)
    assert trace.final["SP"] == pytest.approx(100 * np.mean(code == 0))


def test_transform_single_sample_matches_batch(rng):
    V = small_problem(rng)
    model, _, _ = train(V, TrainConfig(l=3, iterations=30))
    batch = transform(model, V)
    for i in (0, 17, 59):
        assert_allclose(transform(model, V[i]), batch[i:i + 1], atol=1e-12)


def test_transform_centered_flag(rng):
    V = small_problem(rng)
    model, _, _ = train(V, TrainConfig(l=3, iterations=10))
    assert_allclose(transform(model, V), transform(model, center(V)[0], centered=True), atol=1e-12)


def test_stack_dimensions(rng):
    V = rng.standard_normal((100, 20))
    models = stack(V, [TrainConfig(l=8, iterations=20), TrainConfig(l=4, iterations=20)])
    assert [mdl.W.shape for mdl in models] == [(20, 8), (8, 4)]
    with pytest.raises(ValueError):
        stack(V, [])


def test_train_covariance_unchanged_by_centering_flag(rng):
    V = center(small_problem(rng))[0]
    a = train(V, TrainConfig(l=2, iterations=10))
    b = train(V, TrainConfig(l=2, iterations=10), center_data=False)
    assert_allclose(a.model.W, b.model.W, atol=1e-10)
    assert_allclose(covariance(V), covariance(V - a.model.mean), atol=1e-12)
