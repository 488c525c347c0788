import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sttran.numerics import (
    AdamW,
    BatchNormStats,
    Checkpoint,
    CheckpointError,
    NumericError,
    ParameterSet,
    ShapeError,
    Tensor,
    batch_norm,
    clip_global_norm,
    concat,
    conv2d,
    corrupted_backward,
    cross_entropy,
    dropout,
    grad_check,
    layer_norm,
    linear,
    precision,
    relu,
    sigmoid,
    softmax,
    take,
)
from sttran.numerics.checkpoint import dumps, loads


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=float), requires_grad=grad)


# -- linear ---------------------------------------------------------------


def test_linear_identity():
    y = linear(T([[1, 2]]), T([[1, 0], [0, 1]]))
    np.testing.assert_allclose(y.data, [[1, 2]])


def test_linear_with_bias():
    y = linear(T([[1, 1]]), T([[2], [3]]), T([1]))
    np.testing.assert_allclose(y.data, [[6]])


def test_linear_paper_shape():
    y = linear(Tensor(np.zeros((10, 1936))), Tensor(np.zeros((1936, 2048))))
    assert y.shape == (10, 2048)


def test_linear_shape_error_mentions_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_linear_additive(f64, rng):
    w, b = T(rng.normal(size=(4, 3))), T(rng.normal(size=3))
    x1, x2 = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    lhs = linear(T(x1 + x2), w, b).data
    rhs = linear(T(x1), w, b).data + linear(T(x2), w, b).data - b.data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


# -- softmax --------------------------------------------------------------


def test_softmax_examples(f64):
    np.testing.assert_allclose(softmax(T([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(softmax(T([1000.0, 0.0])).data, [1.0, 0.0], atol=1e-6)
    np.testing.assert_allclose(softmax(T([np.log(2.0), 0.0])).data, [2 / 3, 1 / 3], atol=1e-12)


def test_softmax_nan_rejected():
    with pytest.raises(NumericError):
        softmax(T([np.nan, 0.0]))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-1e4, 1e4)))
def test_softmax_simplex_property(x):
    with precision(64):
        y = softmax(Tensor(x), axis=1).data
    assert (y >= 0).all()
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)


def test_masked_softmax_zeroes_disallowed(f64):
    mask = np.array([[True, False, True]])
    y = softmax(T([[1.0, 50.0, 1.0]]), mask=mask).data
    np.testing.assert_allclose(y, [[0.5, 0.0, 0.5]])


# -- normalisation ----------------------------------------------------------


def test_layer_norm_examples(f64):
    one, zero = T([1.0, 1.0, 1.0]), T([0.0, 0.0, 0.0])
    np.testing.assert_allclose(layer_norm(T([[1, 1, 1]]), one, zero).data, [[0, 0, 0]])
    np.testing.assert_allclose(layer_norm(T([[1, -1]]), T([1, 1]), T([0, 0])).data, [[1, -1]], atol=1e-5)
    np.testing.assert_allclose(layer_norm(T([[0, 2]]), T([2, 2]), T([1, 1])).data, [[-1, 3]], atol=1e-4)


def test_layer_norm_moments(f64, rng):
    x = T(rng.normal(3.0, 5.0, size=(6, 9)))
    y = layer_norm(x, T(np.ones(9)), T(np.zeros(9))).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-5)


def test_batch_norm_train_example(f64):
    stats = BatchNormStats(1)
    y = batch_norm(T([[0.0], [2.0]]), T([1.0]), T([0.0]), stats, train=True)
    np.testing.assert_allclose(y.data, [[-1.0], [1.0]], atol=1e-4)


def test_batch_norm_eval_identity(f64, rng):
    stats = BatchNormStats(3)
    x = rng.normal(size=(4, 3))
    y = batch_norm(T(x), T(np.ones(3)), T(np.zeros(3)), stats, train=False)
    np.testing.assert_allclose(y.data, x, rtol=1e-5)


def test_batch_norm_running_mean_momentum(f64):
    stats = BatchNormStats(1, momentum=0.1)
    batch_norm(T([[0.0], [2.0]]), T([1.0]), T([0.0]), stats, train=True)
    np.testing.assert_allclose(stats.running_mean, [0.1])


def test_batch_norm_single_row_falls_back(f64, caplog):
    stats = BatchNormStats(2)
    y = batch_norm(T([[3.0, -1.0]]), T([1.0, 1.0]), T([0.0, 0.0]), stats, train=True)
    np.testing.assert_allclose(y.data, [[3.0, -1.0]], atol=1e-4)
    assert "batch of size 1" in caplog.text


# -- backward ---------------------------------------------------------------


def test_backward_square():
    w = T([3.0], grad=True)
    (w * w).sum().backward()
    np.testing.assert_allclose(w.grad, [6.0])


def test_backward_constant_loss():
    w = T([3.0], grad=True)
    (w * 0.0 + 1.0).sum().backward()
    np.testing.assert_allclose(w.grad, [0.0])


def test_backward_rejects_non_scalar():
    w = T([1.0, 2.0], grad=True)
    with pytest.raises(ShapeError):
        (w * 2.0).backward()


def test_backward_clears_tape():
    w = T([1.0, 2.0], grad=True)
    y = (w * w).sum()
    y.backward()
    assert y._parents == () and y._backward is None


def _fd(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        o = x[i]
        x[i] = o + h
        up = f()
        x[i] = o - h
        dn = f()
        x[i] = o
        g[i] = (up - dn) / (2 * h)
    return g


def test_composite_linear_softmax_margin_matches_fd(f64, rng):
    x = T(rng.normal(size=(3, 4)))
    w = T(rng.normal(size=(4, 5)), grad=True)
    pos = np.array([[1, 0, 0, 1, 0]] * 3, dtype=float)

    def loss():
        s = softmax(linear(x, w), axis=1)
        diff = 1.0 - s.reshape(3, 5, 1) + s.reshape(3, 1, 5)
        wts = pos[:, :, None] * (1 - pos[:, None, :])
        return (relu(diff) * Tensor(wts)).sum()

    w.grad = None
    loss().backward()
    num = _fd(lambda: loss().item(), w.data)
    rel = np.abs(w.grad - num) / np.maximum(np.maximum(np.abs(w.grad), np.abs(num)), 1e-6)
    assert rel.max() <= 1e-4


# -- per-op gradient checks ---------------------------------------------------

OPS = {
    "add_broadcast": (lambda a, b: (a + b.reshape(1, 4)).sum(), [(3, 4), (4,)]),
    "mul": (lambda a, b: (a * b).sum(), [(3, 4), (3, 4)]),
    "div": (lambda a, b: (a / (b * b + 1.0)).sum(), [(3, 4), (3, 4)]),
    "matmul": (lambda a, b: ((a @ b) * (a @ b)).sum(), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: ((a @ b) * (a @ b)).sum(), [(2, 3, 4), (2, 4, 2)]),
    "softmax": (lambda a, b: (softmax(a, axis=1) * b).sum(), [(3, 4), (3, 4)]),
    "sigmoid": (lambda a, b: (sigmoid(a) * b).sum(), [(3, 4), (3, 4)]),
    "relu": (lambda a, b: (relu(a) * b).sum(), [(3, 4), (3, 4)]),
    "layer_norm": (lambda a, b: (layer_norm(a, b, b * 0.5) * a).sum(), [(3, 4), (4,)]),
    "transpose_concat_take": (
        lambda a, b: (take(concat([a, b], axis=0), [0, 4, 4, 2]).T * take(a, [0]).T).sum(),
        [(3, 4), (2, 4)],
    ),
    "mean": (lambda a, b: ((a * b).mean(axis=0) * (a * b).mean(axis=0)).sum(), [(3, 4), (3, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_random_trials(name, f64):
    f, shapes = OPS[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    ps = ParameterSet(0)
    worst = 0.0
    for trial in range(100 if name != "batched_matmul" else 30):
        params = [ps.constant(f"{name}.{trial}.{i}", rng.normal(size=s)) for i, s in enumerate(shapes)]
        rep = grad_check(lambda: f(*params), params)
        worst = max(worst, rep.max_rel_error)
    assert worst <= 1e-4, worst


def test_cross_entropy_gradient(f64, rng):
    ps = ParameterSet(0)
    z = ps.constant("z", rng.normal(size=(5, 4)))
    rep = grad_check(lambda: cross_entropy(z, [0, 3, 1, 1, 2]), [z])
    assert rep.max_rel_error <= 1e-4


def test_cross_entropy_value(f64):
    z = T([[np.log(3.0), 0.0]])
    np.testing.assert_allclose(cross_entropy(z, [0]).item(), -np.log(3 / 4))


def test_batch_norm_gradient(f64, rng):
    ps = ParameterSet(0)
    x = ps.constant("x", rng.normal(size=(5, 3)))
    g = ps.constant("g", rng.normal(size=3))
    b = ps.constant("b", rng.normal(size=3))
    w = rng.normal(size=(5, 3))
    stats = BatchNormStats(3)
    rep = grad_check(lambda: (batch_norm(x, g, b, stats, train=True) * Tensor(w)).sum(), [x, g, b])
    assert rep.max_rel_error <= 1e-4


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (4, 3)])
def test_conv2d_gradient(f64, rng, stride, padding):
    ps = ParameterSet(0)
    x = ps.constant("x", rng.normal(size=(2, 2, 9, 9)))
    w = ps.constant("w", rng.normal(size=(3, 2, 3, 3)))
    b = ps.constant("b", rng.normal(size=3))

    def f():
        y = conv2d(x, w, b, stride=stride, padding=padding)
        return (y * y).sum()

    assert grad_check(f, [x, w, b]).max_rel_error <= 1e-4


def test_conv2d_against_loop(f64, rng):
    x = rng.normal(size=(1, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    y = conv2d(T(x), T(w), None, stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = (xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]).sum()
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_grad_check_quadratic_form(f64, rng):
    ps = ParameterSet(0)
    a = rng.normal(size=(4, 4))
    A = Tensor(a @ a.T)
    x = ps.constant("x", rng.normal(size=(4, 1)))
    rep = grad_check(lambda: (x.T @ A @ x).sum(), [x])
    assert rep.max_rel_error < 1e-8


def test_grad_check_negative_control(f64, rng):
    ps = ParameterSet(0)
    w = ps.constant("w", rng.normal(size=(3, 3)))
    x = Tensor(rng.normal(size=(2, 3)))
    with corrupted_backward():
        rep = grad_check(lambda: (sigmoid(x @ w)).sum(), [w])
    assert rep.max_rel_error > 1e-2


# -- dropout ------------------------------------------------------------------


def test_dropout_deterministic_and_scaled(f64):
    x = T(np.ones((50, 40)))
    a = dropout(x, 0.1, np.random.default_rng((3, 7, 1))).data
    b = dropout(x, 0.1, np.random.default_rng((3, 7, 1))).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1 / 0.9}
    assert dropout(x, 0.1, None) is x


# -- clipping and optimiser ----------------------------------------------------


def _param_with_grad(ps, name, value, grad):
    p = ps.constant(name, np.asarray(value, dtype=float))
    p.grad = np.asarray(grad, dtype=float)
    return p


def test_clip_global_norm_examples():
    ps = ParameterSet(0)
    p = _param_with_grad(ps, "a", [0.0, 0.0], [6.0, 8.0])
    assert clip_global_norm([p], 5.0) == pytest.approx(10.0)
    np.testing.assert_allclose(p.grad, [3.0, 4.0], rtol=1e-6)
    q = _param_with_grad(ps, "b", [0.0], [3.0])
    assert clip_global_norm([q], 5.0) == pytest.approx(3.0)
    np.testing.assert_allclose(q.grad, [3.0])
    z = _param_with_grad(ps, "c", [0.0, 0.0], [0.0, 0.0])
    assert clip_global_norm([z], 5.0) == 0.0
    np.testing.assert_array_equal(z.grad, [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-100, 100)), st.floats(0.1, 10))
def test_clip_idempotent(g, max_norm):
    with precision(64):
        ps = ParameterSet(0)
        p = _param_with_grad(ps, "a", np.zeros(6), g)
        clip_global_norm([p], max_norm)
        once = p.grad.copy()
        clip_global_norm([p], max_norm)
        np.testing.assert_allclose(p.grad, once, rtol=1e-12)
        assert np.linalg.norm(p.grad) <= max_norm + 1e-6


def test_adamw_zero_grad_no_decay_is_identity(f64):
    ps = ParameterSet(0)
    p = _param_with_grad(ps, "a", [1.0, -2.0], [0.0, 0.0])
    AdamW([p], lr=1e-3, weight_decay=0.0).step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_magnitude(f64):
    ps = ParameterSet(0)
    p = _param_with_grad(ps, "a", [1.0, 1.0], [0.3, -7.0])
    AdamW([p], lr=1e-5, weight_decay=0.0).step()
    delta = p.data - 1.0
    assert delta[0] < 0 < delta[1]
    assert np.all(np.abs(delta) <= 1e-5 * (1 + 1e-6))
    np.testing.assert_allclose(np.abs(delta), 1e-5, rtol=1e-4)


def test_adamw_decoupled_decay(f64):
    ps = ParameterSet(0)
    p = _param_with_grad(ps, "a", [2.0], [0.0])
    AdamW([p], lr=1e-5, weight_decay=0.01).step()
    np.testing.assert_allclose(p.data, [2.0 * (1 - 1e-7)], rtol=1e-14)


def test_adamw_step_counter_increases(f64):
    ps = ParameterSet(0)
    p = _param_with_grad(ps, "a", [1.0], [1.0])
    opt = AdamW([p])
    steps = []
    for _ in range(3):
        opt.step()
        steps.append(opt.state.step)
    assert steps == [1, 2, 3]
    assert opt.state.exp_avg["a"].shape == p.shape


# -- parameters and checkpoints -------------------------------------------------


def test_same_seed_bit_identical_init():
    def build(seed):
        ps = ParameterSet(seed)
        ps.weight("w", 5, 7)
        ps.normal("e", (2, 7), 0.02)
        return ps

    a, b = build(3), build(3)
    for pa, pb in zip(a, b):
        assert pa.data.tobytes() == pb.data.tobytes()
    assert build(4)["w"].data.tobytes() != a["w"].data.tobytes()


def test_duplicate_parameter_name_rejected():
    ps = ParameterSet(0)
    ps.zeros("x", 2)
    with pytest.raises(KeyError):
        ps.zeros("x", 3)


def test_checkpoint_byte_exact_round_trip(rng):
    ps = ParameterSet(0)
    w = ps.weight("layer.w", 3, 4)
    ps.zeros("layer.b", 4)
    ps.batch_norm_stats("bn", 4)
    w.grad = rng.normal(size=w.shape).astype(np.float32)
    opt = AdamW(list(ps), lr=1e-3)
    opt.step()
    ck = Checkpoint(ps.state_arrays(), opt.state, {"preset": "desk"})
    raw = dumps(ck)
    assert raw[:4] == b"STTC"
    back = loads(raw)
    assert dumps(back) == raw
    np.testing.assert_array_equal(back.arrays["layer.w"], w.data)
    assert back.optimizer.step == 1


def test_checkpoint_truncated_rejected():
    ps = ParameterSet(0)
    ps.weight("w", 3, 4)
    raw = dumps(Checkpoint(ps.state_arrays()))
    with pytest.raises(CheckpointError, match="unexpected end"):
        loads(raw[:-5])
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"XXXX" + raw[4:])


def test_relu_propagates_nan():
    out = relu(Tensor(np.array([-1.0, np.nan, 2.0])))
    assert out.data[0] == 0.0 and np.isnan(out.data[1]) and out.data[2] == 2.0
