from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import central_difference, exact_weighted_mean

from fedcohort.errors import DivergenceError, FormatError, ShapeError
from fedcohort.fl import (
    Algorithm,
    Dyn,
    FedDynState,
    LocalSpec,
    ModelParams,
    Prox,
    evaluate,
    fedavg_aggregate,
    feddyn_server_update,
    federate,
    ifca_round,
    load_params,
    local_train,
    loss_and_grad,
    model_init,
    objective,
    save_params,
)


def vec(*xs) -> ModelParams:
    return ModelParams(np.array(xs, dtype=np.float64), (("w", (len(xs),)),))


def make_client(cid, rng, n=60, d=5, classes=3, shift=0.0):
    centres = np.eye(classes, d) * 3 + shift
    y = rng.integers(0, classes, n)
    x = centres[y] + rng.standard_normal((n, d))
    yt = rng.integers(0, classes, 30)
    xt = centres[yt] + rng.standard_normal((30, d))
    return SimpleNamespace(client_id=cid, train_x=x, train_y=y, test_x=xt, test_y=yt)


@pytest.fixture(scope="module")
def clients():
    rng = np.random.default_rng(0)
    return [make_client(i, rng, shift=0.3 * i) for i in range(3)]


# --------------------------------------------------------------------------
# model and gradients


def test_model_init_size_and_validation():
    assert len(model_init([50, 64, 10], 0).values) == 3914
    with pytest.raises(ValueError):
        model_init([50, 0, 10], 0)
    a, b = model_init([4, 3, 2], 5), model_init([4, 3, 2], 5)
    assert np.array_equal(a.values, b.values)


@pytest.mark.parametrize("kind", ["plain", "prox", "dyn"])
def test_gradient_matches_central_difference(kind):
    rng = np.random.default_rng(1)
    p = model_init([4, 5, 3], 2)
    x = rng.standard_normal((7, 4))
    y = rng.integers(0, 3, 7)
    w = p.values
    mode = {
        "plain": None,
        "prox": Prox(0.3, w + rng.standard_normal(len(w))),
        "dyn": Dyn(rng.standard_normal(len(w)), 0.2),
    }[kind]
    loss, g = loss_and_grad(p, x, y, mode)
    assert loss == pytest.approx(objective(p, x, y, mode), abs=1e-12)
    numeric = central_difference(lambda v: objective(p.with_values(v), x, y, mode), w.copy())
    assert np.allclose(g, numeric, atol=1e-6)


def test_local_train_reduces_loss(clients):
    c = clients[0]
    p = model_init([5, 16, 3], 0)
    spec = LocalSpec(learning_rate=0.05, batch_size=16, epochs_per_round=5)
    after = local_train(p, c.train_x, c.train_y, spec)
    assert objective(after, c.train_x, c.train_y) < objective(p, c.train_x, c.train_y)
    assert after.values is not p.values


def test_divergence_reports_batch():
    p = model_init([2, 3, 2], 0)
    y = np.zeros(8, dtype=int)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as exc:
        local_train(p, np.full((8, 2), np.inf), y, LocalSpec(batch_size=4))
    assert exc.value.batch_index == 0
    # a huge step stays finite on the first batch and blows up afterwards
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as exc:
        local_train(p, np.full((8, 2), 1e300), y, LocalSpec(learning_rate=1e10, batch_size=4))
    assert exc.value.batch_index >= 1


def test_mode_shape_checked():
    p = model_init([2, 2], 0)
    with pytest.raises(ShapeError):
        local_train(p, np.zeros((2, 2)), np.zeros(2, dtype=int), LocalSpec(), Prox(0.1, np.zeros(3)))


def test_evaluate():
    p = model_init([2, 2], 0).with_values(np.zeros(6))
    # all logits tie, so the prediction is class 0
    assert evaluate(p, np.ones((4, 2)), np.array([0, 0, 1, 1])) == 0.5
    with pytest.raises(ValueError):
        evaluate(p, np.zeros((0, 2)), np.zeros(0, dtype=int))


# --------------------------------------------------------------------------
# aggregation


def test_fedavg_examples():
    assert fedavg_aggregate([(vec(0, 2), 1), (vec(2, 0), 1)]).values.tolist() == [1.0, 1.0]
    assert fedavg_aggregate([(vec(4), 3), (vec(0), 1)]).values.tolist() == [3.0]
    single = vec(0.1, 0.7)
    assert np.array_equal(fedavg_aggregate([(single, 9)]).values, single.values)
    with pytest.raises(ValueError):
        fedavg_aggregate([])
    with pytest.raises(ShapeError):
        fedavg_aggregate([(vec(1), 1), (vec(1, 2), 1)])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=1, max_size=6), st.integers(0, 10_000))
def test_fedavg_matches_exact_mean(sizes, seed):
    rng = np.random.default_rng(seed)
    vs = [rng.standard_normal(4) for _ in sizes]
    out = fedavg_aggregate([(ModelParams(v, (("w", (4,)),)), n) for v, n in zip(vs, sizes)]).values
    exact = exact_weighted_mean(vs, sizes)
    assert np.allclose(out, exact, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_fedavg_identical_inputs_bitwise(k, seed):
    v = np.random.default_rng(seed).standard_normal(5)
    ups = [(ModelParams(v.copy(), (("w", (5,)),)), i + 1) for i in range(k)]
    assert np.array_equal(fedavg_aggregate(ups).values, v)


def test_feddyn_server_example():
    prev = vec(0, 0)
    new = vec(1, -1)
    state = FedDynState(np.zeros(2), 0.1)
    _, states = feddyn_server_update([(new, 1)], [state], prev, 0.1)
    assert np.allclose(states[0].h, [-0.1, 0.1])
    _, same = feddyn_server_update([(new, 1)], [FedDynState(np.array([0.5, 0.5]), 0.0)], prev, 0.0)
    assert same[0].h.tolist() == [0.5, 0.5]


# --------------------------------------------------------------------------
# reductions between algorithms


def run(algorithm, clients, rounds=3, init=None):
    spec = LocalSpec(learning_rate=0.05, batch_size=16, seed=4)
    init = model_init([5, 8, 3], 1) if init is None else init
    return federate(init, clients, clients[0], algorithm, spec, rounds)


def test_fedprox_mu_zero_is_fedavg(clients):
    a = run(Algorithm("fedavg"), clients)
    b = run(Algorithm("fedprox", mu=0.0), clients)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.global_params.values, rb.global_params.values)


def test_feddyn_lambda_zero_is_fedavg(clients):
    a = run(Algorithm("fedavg"), clients)
    b = run(Algorithm("feddyn", lam=0.0), clients)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.global_params.values, rb.global_params.values)


def test_ifca_single_cluster_is_fedavg(clients):
    init = model_init([5, 8, 3], 1)
    a = run(Algorithm("fedavg"), clients, init=init)
    b = run(Algorithm("ifca", k=1), clients, init=[init])
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.global_params.values, rb.global_params.values)
        assert ra.target_test_accuracy == rb.target_test_accuracy


def test_regularised_algorithms_differ(clients):
    a = run(Algorithm("fedavg"), clients)[-1].global_params.values
    assert not np.array_equal(a, run(Algorithm("fedprox", mu=0.5), clients)[-1].global_params.values)
    assert not np.array_equal(a, run(Algorithm("feddyn", lam=0.1), clients)[-1].global_params.values)


def test_federate_rounds_and_determinism(clients):
    a = run(Algorithm("fedavg"), clients, rounds=2)
    assert [r.round for r in a] == [0, 1, 2]
    b = run(Algorithm("fedavg"), clients, rounds=2)
    assert [r.target_test_accuracy for r in a] == [r.target_test_accuracy for r in b]
    zero = run(Algorithm("fedavg"), clients, rounds=0)
    assert len(zero) == 1
    with pytest.raises(ValueError):
        federate(model_init([5, 3], 0), clients[1:], clients[0], Algorithm(), LocalSpec(), 1)


def test_ifca_unpicked_cluster_is_unchanged(clients):
    good = model_init([5, 8, 3], 1)
    # huge output bias makes this model's loss far worse for every client
    bad_vals = good.values.copy()
    bad_vals[-3:] = [-50.0, -50.0, 100.0]
    bad = good.with_values(bad_vals)
    models, assign = ifca_round([good, bad], clients, LocalSpec(learning_rate=0.01, seed=0))
    assert assign == [0, 0, 0]
    assert np.array_equal(models[1].values, bad.values)


def test_ifca_assignments_are_loss_minimisers(clients):
    from fedcohort.fl import data_loss

    ms = [model_init([5, 8, 3], s) for s in range(3)]
    _, assign = ifca_round(ms, clients, LocalSpec(seed=1))
    for c, j in zip(clients, assign):
        losses = [data_loss(m, c.train_x, c.train_y) for m in ms]
        assert j == int(np.argmin(losses))


def test_algorithm_validation():
    with pytest.raises(ValueError):
        Algorithm("sgd")
    with pytest.raises(ValueError):
        Algorithm("ifca", k=0)
    with pytest.raises(ValueError):
        LocalSpec(learning_rate=0.0)


# --------------------------------------------------------------------------
# persistence


def test_params_roundtrip(tmp_path):
    p = model_init([3, 4, 2], 7)
    save_params(p, tmp_path)
    back = load_params(tmp_path)
    assert back.layout == p.layout
    assert np.array_equal(back.values, p.values)
    assert (tmp_path / "model_layout.txt").read_text().splitlines()[0] == "W0 3x4"


def test_bad_layout_file(tmp_path):
    save_params(model_init([2, 2], 0), tmp_path)
    (tmp_path / "model_layout.txt").write_text("W0\n")
    with pytest.raises(FormatError):
        load_params(tmp_path)
