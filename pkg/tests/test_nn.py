import numpy as np
import pytest

from opsched.nn import (Adam, AdamState, BiLSTM, ConfigError, Dense, EncoderLayer, LayerNorm, MLP,
                        MultiHeadSelfAttention, ShapeError, Tensor, adam_step)
from opsched.nn import tensor as T
from opsched.nn.checkpoint import dump_params, load_params, parse_params, save_params
from opsched.nn.gradcheck import check_gradients

TOL = 1e-5


def _p(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "exp", "square"])
def test_unary_gradients(rng, op):
    x = _p(rng, 3, 4)
    fn = getattr(T, op)
    assert check_gradients(lambda: fn(x).sum(), [x]) < TOL


def test_log_and_division_gradients(rng):
    x = Tensor(rng.uniform(0.5, 2.0, (3, 2)), requires_grad=True)
    y = Tensor(rng.uniform(0.5, 2.0, (3, 2)), requires_grad=True)
    assert check_gradients(lambda: (T.log(x) * T.div(x, y)).sum(), [x, y]) < TOL


def test_broadcast_gradients(rng):
    a, b = _p(rng, 4, 3), _p(rng, 3)
    assert check_gradients(lambda: T.mul(T.add(a, b), b).sum(), [a, b]) < TOL


def test_matmul_softmax_layernorm_gradients(rng):
    a, b = _p(rng, 2, 3, 4), _p(rng, 4, 5)
    g, beta = _p(rng, 5), _p(rng, 5)
    w = Tensor(rng.normal(size=(2, 3, 5)))

    def loss():
        h = T.layer_norm(T.matmul(a, b), g, beta)
        return T.mul(T.softmax(h, -1), w).sum()
    assert check_gradients(loss, [a, b, g, beta]) < TOL


def test_indexing_concat_stack_gradients(rng):
    a, b = _p(rng, 2, 5), _p(rng, 2, 3)
    w = Tensor(rng.normal(size=(2, 2, 4)))

    def loss():
        c = T.concat([a[:, 1:3], b[:, :2]], axis=-1)
        return T.mul(T.stack([c, T.tanh(c)], axis=1), w).sum()
    assert check_gradients(loss, [a, b]) < TOL


def test_attention_gradient(rng):
    att = MultiHeadSelfAttention(8, 2, rng)
    x = _p(rng, 2, 3, 8)
    ps = [x] + att.parameters()
    assert check_gradients(lambda: T.square(att(x)).sum(), ps) < TOL


def test_encoder_and_bilstm_gradient(rng):
    enc = EncoderLayer(4, 2, rng)
    lstm = BiLSTM(4, 3, rng)
    x = _p(rng, 1, 3, 4)
    ps = [x] + enc.parameters() + lstm.parameters()
    assert check_gradients(lambda: T.square(lstm(enc(x))).sum(), ps) < TOL


def test_attention_weights_sum_to_one(rng):
    att = MultiHeadSelfAttention(8, 4, rng)
    att(Tensor(rng.normal(size=(2, 5, 8))))
    np.testing.assert_allclose(att.last_weights.sum(-1), 1.0)


def test_shape_errors(rng):
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        Dense(3, 2, rng)(Tensor(np.zeros((1, 4))))
    with pytest.raises(ConfigError):
        MultiHeadSelfAttention(10, 3, rng)


def test_layer_norm_normalizes(rng):
    y = LayerNorm(6)(Tensor(rng.normal(3.0, 5.0, size=(4, 6)))).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(-1), 1.0, atol=1e-4)


def test_checkpoint_round_trip(tmp_path, rng):
    m = MLP([3, 5, 2], rng)
    path = tmp_path / "m.json"
    save_params(path, m.state_dict(), {"note": "x"})
    other = MLP([3, 5, 2], np.random.default_rng(99))
    state, extra = load_params(path)
    other.load_state_dict(state)
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(m(x).data, other(x).data)
    assert extra == {"note": "x"}


def test_checkpoint_rejects_bad_docs(rng):
    doc = dump_params({"w": np.ones(2)})
    with pytest.raises(ValueError):
        parse_params({**doc, "version": 99})
    with pytest.raises(ValueError):
        parse_params({**doc, "format": "other"})
    m = MLP([2, 2], rng)
    with pytest.raises(KeyError):
        m.load_state_dict({})


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -3.0])
    opt = Adam([p], lr=0.1)
    opt.step()
    # bias-corrected first step is lr * sign(g)
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    state = AdamState(lr=0.1)
    for _ in range(500):
        p.zero_grad()
        T.square(p).sum().backward()
        adam_step([p], state)
    assert np.abs(p.data).max() < 1e-2


def test_grad_clip_bounds_update_norm():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([3e6, 4e6])
    opt = Adam([p], lr=1.0, grad_clip=1.0)
    opt.step()
    assert np.all(np.isfinite(p.data))
