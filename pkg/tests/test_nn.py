
import numpy as np
import pytest

from dqntrade.errors import DataError
from dqntrade.nn import (
    AdamState,
    DQNModel,
    MlpSpec,
    QNetwork,
    adam_step,
    layer_norm,
    load_model,
    save_model,
)
from dqntrade.rng import make_rng
from oracles import fd_gradients, max_relative_error


def randomized_net(spec, seed=0):
    """Network with non-trivial LayerNorm gains/offsets and biases."""
    rng = make_rng(seed)
    net = QNetwork.create(spec, rng)
    for name, p in net.params.items():
        if not name.endswith("/w"):
            p += 0.3 * rng.standard_normal(p.shape)
    return net


@pytest.mark.parametrize("input_dim,expected", [(180, 64_521), (4500, 1_170_441)])
def test_parameter_counts(input_dim, expected):
    model = DQNModel.create(MlpSpec(input_dim), make_rng(0))
    assert model.n_parameters() == expected


def test_init_is_seeded_and_glorot():
    a = QNetwork.create(MlpSpec(180), make_rng(3))
    b = QNetwork.create(MlpSpec(180), make_rng(3))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    w = a.params["action_value/fc0/w"]
    assert np.abs(w).max() <= np.sqrt(6 / (180 + 64))
    assert np.all(a.params["state_value/ln1/gamma"] == 1)
    assert np.all(a.params["state_value/fc1/b"] == 0)


def test_layer_norm_examples():
    assert np.allclose(layer_norm(np.full(5, 3.0), 1.0, 0.0), 0.0)
    y = layer_norm(np.array([1.0, -1.0]), 1.0, 0.0)
    assert np.allclose(y, np.array([1.0, -1.0]) / np.sqrt(1 + 1e-5), rtol=1e-15)
    beta = np.array([0.5, -2.0, 3.0])
    assert np.array_equal(layer_norm(np.array([1.0, 7.0, -3.0]), 0.0, beta), beta)


def test_zero_output_layers_give_zero_q():
    net = QNetwork.create(MlpSpec(12), make_rng(0))
    for t in ("action_value", "state_value"):
        net.params[f"{t}/out/w"][:] = 0
    assert np.array_equal(net.q_values(np.zeros(12)), np.zeros(3))


def test_dueling_identities():
    net = randomized_net(MlpSpec(12), 1)
    x = make_rng(2).standard_normal((7, 12))
    q = net.q_values(x)
    shifted = net.copy()
    shifted.params["action_value/out/b"] += 5.0
    assert np.allclose(shifted.q_values(x), q, atol=1e-12)
    vshift = net.copy()
    vshift.params["state_value/out/b"] += 3.0
    assert np.array_equal(np.argmax(vshift.q_values(x), axis=1), np.argmax(q, axis=1))
    # q - v has zero mean over actions
    v = q.mean(axis=1, keepdims=True)
    assert np.abs((q - v).mean(axis=1)).max() < 1e-12


def test_single_and_batch_forward_agree():
    net = randomized_net(MlpSpec(12), 4)
    x = make_rng(5).standard_normal((3, 12))
    for i in range(3):
        assert np.allclose(net.q_values(x[i]), net.q_values(x)[i], rtol=1e-14)


def test_shape_mismatch():
    net = QNetwork.create(MlpSpec(12), make_rng(0))
    with pytest.raises(DataError):
        net.q_values(np.zeros(11))


def test_zero_upstream_gradient():
    net = randomized_net(MlpSpec(12), 6)
    _, cache = net.forward(make_rng(7).standard_normal((4, 12)))
    grads = net.backward(cache, np.zeros((4, 3)))
    assert set(grads) == set(net.params)
    assert all(np.all(g == 0) for g in grads.values())


def test_eps_is_not_trainable():
    model = DQNModel.create(MlpSpec(12), make_rng(0))
    _, cache = model.online.forward(np.ones(12))
    grads = model.online.backward(cache, np.ones(3))
    assert not any("eps" in k for k in grads)
    assert model.eps.tolist() == [1.0]


@pytest.mark.parametrize("input_dim,hidden", [(12, (8, 8)), (30, (16, 5))])
def test_gradients_match_finite_differences(input_dim, hidden):
    spec = MlpSpec(input_dim, hidden)
    net = randomized_net(spec, 8)
    rng = make_rng(9)
    x = rng.standard_normal((20, input_dim))
    w = rng.standard_normal((20, 3))
    _, cache = net.forward(x)
    analytic = net.backward(cache, w)
    numeric = fd_gradients(net, x, w)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    st = AdamState.zeros_like(p)
    adam_step(p, {"w": np.zeros(2)}, st, 0.001)
    assert np.array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step():
    # m1 = 0.1, v1 = 0.001; bias-corrected mhat = 1, vhat = 1 -> step = lr / (1 + 1e-8)
    p = {"w": np.array([0.5])}
    st = AdamState.zeros_like(p)
    adam_step(p, {"w": np.array([1.0])}, st, 0.001)
    assert p["w"][0] - 0.5 == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_deterministic_trajectory():
    def run():
        net = randomized_net(MlpSpec(12, (8, 8)), 10)
        st = AdamState.zeros_like(net.params)
        rng = make_rng(11)
        for _ in range(20):
            q, cache = net.forward(rng.standard_normal((5, 12)))
            adam_step(net.params, net.backward(cache, q), st, 0.001)
        return net
    a, b = run(), run()
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_hard_update_target():
    model = DQNModel.create(MlpSpec(12), make_rng(12))
    x = make_rng(13).standard_normal((4, 12))
    assert np.array_equal(model.online.q_values(x), model.target.q_values(x))
    model.online.params["state_value/out/b"] += 1.0
    model.online.params["action_value/out/w"] *= 1.1
    assert not np.allclose(model.online.q_values(x), model.target.q_values(x))
    model.hard_update_target()
    once = {k: v.copy() for k, v in model.target.params.items()}
    assert np.array_equal(model.online.q_values(x), model.target.q_values(x))
    model.hard_update_target()
    for k in once:
        assert np.array_equal(once[k], model.target.params[k])
    # target keeps its own storage
    model.online.params["action_value/out/b"] += 1.0
    assert not np.array_equal(model.online.params["action_value/out/b"], model.target.params["action_value/out/b"])


def test_checkpoint_round_trip(tmp_path):
    model = DQNModel.create(MlpSpec(180), make_rng(14))
    model.online.params["action_value/ln0/beta"] += 0.25
    path = save_model(model, tmp_path / "m.bin")
    raw = path.read_bytes()
    assert raw[:5] == b"DQNQ<"
    assert len(raw) == 5 + 16 + 8 + 8 + 8 * (model.n_parameters() - 1)
    back = load_model(path)
    assert back.spec == model.spec
    for a, b in ((model.online, back.online), (model.target, back.target)):
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])
    assert save_model(back, tmp_path / "m2.bin").read_bytes() == raw


def test_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "x.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(DataError):
        load_model(bad)
