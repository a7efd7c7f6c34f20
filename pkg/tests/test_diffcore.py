import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabbias.diffcore import (
    AdamState,
    MlpSpec,
    NonFiniteLossError,
    ParamSet,
    ShapeMismatchError,
    adam_step,
    grad_check,
    init_params,
    loss_and_grad,
    mlp_forward,
)
from tabbias.diffcore import autodiff as ad


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


UNARY = {
    "exp": (ad.exp, np.exp),
    "tanh": (ad.tanh, np.tanh),
    "sigmoid": (ad.sigmoid, lambda v: 1 / (1 + np.exp(-v))),
    "softplus": (ad.softplus, lambda v: np.logaddexp(0, v)),
    "log": (lambda t: ad.log(ad.exp(t) + 1.0), lambda v: np.log(np.exp(v) + 1.0)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    op, ref = UNARY[name]
    x = np.random.default_rng(1).normal(size=(3, 4))
    t = ad.Tensor(x, requires_grad=True)
    (g,) = ad.grad(op(t).sum(), [t])
    np.testing.assert_allclose(g.data, _numeric_grad(lambda v: ref(v).sum(), x), rtol=1e-6, atol=1e-8)


def test_broadcasting_matmul_and_logsumexp():
    rng = np.random.default_rng(2)
    a, w, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)

    def f_np(w_):
        z = a @ w_ + b
        m = z.max(axis=1, keepdims=True)
        return float(np.sum(np.log(np.exp(z - m).sum(axis=1)) + m[:, 0]) + np.sum(z[:, 1:3] ** 2))

    wt = ad.Tensor(w, requires_grad=True)
    z = ad.Tensor(a) @ wt + b
    loss = ad.logsumexp(z, axis=1).sum() + (z[:, 1:3] * z[:, 1:3]).sum()
    (g,) = ad.grad(loss, [wt])
    assert float(loss.data) == pytest.approx(f_np(w), rel=1e-12)
    np.testing.assert_allclose(g.data, _numeric_grad(f_np, w), rtol=1e-6, atol=1e-8)


def test_second_order_gradient():
    x = ad.Tensor(np.array([0.7, -1.3]), requires_grad=True)
    y = (x * x * x).sum()
    (g,) = ad.grad(y, [x], create_graph=True)
    (h,) = ad.grad(g.sum(), [x])
    np.testing.assert_allclose(h.data, 6 * x.data)


def test_unused_input_gets_zero_gradient():
    a = ad.Tensor(np.ones(3), requires_grad=True)
    b = ad.Tensor(np.ones(2), requires_grad=True)
    ga, gb = ad.grad((a * 2.0).sum(), [a, b])
    np.testing.assert_array_equal(ga.data, 2.0)
    np.testing.assert_array_equal(gb.data, 0.0)


def test_no_grad_records_no_graph():
    a = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = (a * 3.0).sum()
    assert not y.requires_grad


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    st.floats(-2, 2),
    st.floats(-2, 2),
)
def test_gradient_is_linear_in_the_loss(xs, alpha, beta):
    x = np.array(xs)
    t = ad.Tensor(x, requires_grad=True)
    f1 = ad.tanh(t).sum()
    f2 = (t * t).sum()
    (g1,) = ad.grad(f1, [t])
    (g2,) = ad.grad(f2, [t])
    (g,) = ad.grad(alpha * ad.tanh(t).sum() + beta * (t * t).sum(), [t])
    np.testing.assert_allclose(g.data, alpha * g1.data + beta * g2.data, atol=1e-12)


# -- ParamSet ------------------------------------------------------------------


def _pset(seed=0):
    rng = np.random.default_rng(seed)
    return ParamSet.from_arrays({"a.W": rng.normal(size=(2, 3)), "a.b": rng.normal(size=3), "z": rng.normal(size=())})


def test_paramset_roundtrip(tmp_path):
    p = _pset()
    p.save(tmp_path / "p.bin")
    q = ParamSet.load(tmp_path / "p.bin")
    assert q == p
    assert q.to_bytes() == p.to_bytes()
    assert q.arrays()["a.W"].shape == (2, 3)


def test_paramset_arithmetic_and_shape_errors():
    p, q = _pset(0), _pset(1)
    np.testing.assert_array_equal((p + q).flat, p.flat + q.flat)
    np.testing.assert_array_equal((p * 2.0 - p).flat, p.flat)
    other = ParamSet.from_arrays({"a.W": np.zeros((3, 2)), "a.b": np.zeros(3), "z": np.zeros(())})
    with pytest.raises(ShapeMismatchError):
        p + other
    assert list(p.select("a.").names) == ["a.W", "a.b"]


def test_paramset_arrays_are_read_only():
    p = _pset()
    with pytest.raises(ValueError):
        p.arrays()["a.b"][0] = 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_paramset_bytes_roundtrip_property(values):
    p = ParamSet.from_arrays({"v": np.array(values)})
    assert ParamSet.from_bytes(p.to_bytes()) == p


# -- MLP, init, Adam, grad check -------------------------------------------------


def test_init_is_seeded_and_glorot_bounded():
    spec = MlpSpec((4, 8, 2))
    a, b, c = init_params(spec, 3), init_params(spec, 3), init_params(spec, 4)
    assert a == b and not a == c
    limit = np.sqrt(6 / (4 + 8))
    assert np.all(np.abs(a.arrays()["net.0.W"]) <= limit)
    np.testing.assert_array_equal(a.arrays()["net.0.b"], 0.0)
    assert len(a) == spec.n_params


def test_mlp_forward_paramset_matches_manual():
    spec = MlpSpec((3, 5, 2), "tanh", "sigmoid")
    p = init_params(spec, 0)
    x = np.random.default_rng(0).normal(size=(4, 3))
    arr = p.arrays()
    h = np.tanh(x @ arr["net.0.W"] + arr["net.0.b"])
    want = 1 / (1 + np.exp(-(h @ arr["net.1.W"] + arr["net.1.b"])))
    np.testing.assert_allclose(mlp_forward(spec, p, x), want, rtol=1e-12)


def test_adam_first_step_moves_by_learning_rate():
    p = ParamSet.from_arrays({"w": np.array([1.0, -2.0, 0.5])})
    g = p.with_flat(np.array([0.3, -4.0, 1e-3]))
    new, state = adam_step(AdamState.zeros_like(p, lr=0.1), p, g)
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(new.flat, p.flat - 0.1 * np.sign(g.flat), rtol=1e-4)
    assert state.t == 1


def _mse_loss(spec):
    def loss(t, batch):
        x, y = batch
        r = mlp_forward(spec, t, x) - y
        return (r * r).mean()

    return loss


def test_grad_check_passes_on_correct_gradient():
    spec = MlpSpec((3, 6, 2), "tanh")
    rng = np.random.default_rng(5)
    batch = (rng.normal(size=(8, 3)), rng.normal(size=(8, 2)))
    rep = grad_check(_mse_loss(spec), init_params(spec, 1), batch, n_coords=20)
    assert rep.ok and rep.indices.size == 20 and rep.max_rel_error < 1e-6


def test_grad_check_flags_a_wrong_gradient():
    spec = MlpSpec((3, 6, 2), "tanh")
    rng = np.random.default_rng(5)
    batch = (rng.normal(size=(8, 3)), rng.normal(size=(8, 2)))
    params = init_params(spec, 1)
    _, g = loss_and_grad(_mse_loss(spec), params, batch)
    rep = grad_check(_mse_loss(spec), params, batch, n_coords=len(params), analytic=g * 1.1)
    assert len(rep.flagged) > 0


def test_grad_check_zero_tolerance_flags_everything():
    spec = MlpSpec((2, 3, 1), "tanh")
    rng = np.random.default_rng(0)
    batch = (rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    rep = grad_check(_mse_loss(spec), init_params(spec, 0), batch, tolerance=0.0, n_coords=5)
    assert len(rep.flagged) == 5


def test_non_finite_loss_raises():
    p = ParamSet.from_arrays({"w": np.array([1.0])})

    def loss(t, batch):
        return ad.log(t["w"] - 1.0).sum()

    with pytest.raises(NonFiniteLossError):
        loss_and_grad(loss, p, None)
