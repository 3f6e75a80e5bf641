"""Reverse-mode autodiff: oracle checks, finite differences, Adam, checkpoints."""

import numpy as np
import pytest

import atlasedit.autodiff as ad
from atlasedit.autodiff import (AdamOptimizer, CheckpointError, ContractViolation,
                                Parameter, Tensor)


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
    return np.max(np.abs(a - b) / denom)


# -- affine -------------------------------------------------------------------

def test_affine_zero_weights_returns_bias_rows():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32))
    w = Parameter(np.zeros((3, 2), np.float32), name="w")
    b = Parameter(np.array([1.0, -2.0], np.float32), name="b")
    out = ad.affine(x, w, b)
    assert np.allclose(out.values, np.tile([1.0, -2.0], (4, 1)))


def test_affine_identity_weights_is_identity():
    x = Tensor(np.random.default_rng(1).normal(size=(5, 3)).astype(np.float32))
    w = Parameter(np.eye(3, dtype=np.float32), name="w")
    b = Parameter(np.zeros(3, np.float32), name="b")
    out = ad.affine(x, w, b)
    assert np.allclose(out.values, x.values)


def test_affine_matches_triple_loop_oracle():
    rng = np.random.default_rng(2)
    xv = rng.normal(size=(4, 3))
    wv = rng.normal(size=(3, 2))
    bv = rng.normal(size=2)
    out = ad.affine(Tensor(xv), Parameter(wv, name="w"), Parameter(bv, name="b"))
    expect = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            acc = bv[j]
            for k in range(3):
                acc += xv[i, k] * wv[k, j]
            expect[i, j] = acc
    assert np.max(np.abs(out.values - expect)) < 1e-6


def test_affine_shape_mismatch_names_both_shapes():
    x = Tensor(np.zeros((2, 3), np.float32))
    w = Parameter(np.zeros((4, 2), np.float32), name="w")
    b = Parameter(np.zeros(2, np.float32), name="b")
    with pytest.raises(ContractViolation) as exc:
        ad.affine(x, w, b)
    assert "3" in str(exc.value) and "4" in str(exc.value)


# -- activations --------------------------------------------------------------

def test_activation_trivials():
    assert ad.activation(Tensor(np.array(-2.0)), "relu").values == 0.0
    assert ad.activation(Tensor(np.array(0.0)), "tanh").values == 0.0
    assert ad.activation(Tensor(np.array(0.0)), "sigmoid").values == 0.5


def test_activation_unknown_kind():
    with pytest.raises(ad.ConfigurationError):
        ad.activation(Tensor(np.array(0.0)), "swish")


def test_tanh_derivative_matches_finite_differences():
    rng = np.random.default_rng(3)
    xv = rng.normal(size=7)
    x = Parameter(xv.copy(), name="x", dtype=np.float64)
    out = ad.activation(x.tensor, "tanh").sum()
    ad.backward(out)
    fd = fd_grad(lambda: float(np.tanh(xv).sum()), xv, h=1e-4)
    assert rel_err(x.grad, fd) < 1e-5


@pytest.mark.parametrize("kind", ["relu", "tanh", "sigmoid"])
def test_activation_gradients(kind):
    rng = np.random.default_rng(4)
    xv = rng.normal(size=9) + 0.3   # keep relu away from the kink
    x = Parameter(xv.copy(), name="x", dtype=np.float64)
    ad.backward(ad.activation(x.tensor, kind).sum())
    fn = {"relu": lambda a: np.maximum(a, 0), "tanh": np.tanh,
          "sigmoid": lambda a: 1 / (1 + np.exp(-a))}[kind]
    fd = fd_grad(lambda: float(fn(xv).sum()), xv)
    assert rel_err(x.grad, fd) < 1e-5


# -- backward -----------------------------------------------------------------

def test_backward_sum_gives_ones():
    p = Parameter(np.arange(5, dtype=np.float32), name="p")
    ad.backward(p.tensor.sum())
    assert np.array_equal(p.grad, np.ones(5, np.float32))


def test_backward_unreached_parameter_has_no_grad():
    p = Parameter(np.ones(3, np.float32), name="p")
    q = Parameter(np.ones(3, np.float32), name="q")
    ad.backward(p.tensor.sum())
    assert q.grad is None or not np.any(q.grad)


def test_backward_rejects_non_scalar_root():
    p = Parameter(np.ones(3, np.float32), name="p")
    with pytest.raises(ContractViolation):
        ad.backward(p.tensor * 2.0)


def test_backward_root_grad_is_one():
    p = Parameter(np.array(2.0, np.float32), name="p")
    root = p.tensor * p.tensor
    ad.backward(root)
    assert float(root.grad) == 1.0


def test_backward_twice_accumulates_exactly_double():
    p = Parameter(np.array([1.0, 2.0], np.float32), name="p")
    ad.backward((p.tensor * p.tensor).sum())
    once = p.grad.copy()
    ad.backward((p.tensor * p.tensor).sum())
    assert np.array_equal(p.grad, 2 * once)


def _tiny_mlp_loss(params, xv, dtype):
    w1, b1, w2, b2, w3, b3 = params
    h = ad.activation(ad.affine(Tensor(xv.astype(dtype)), w1, b1), "relu")
    h = ad.activation(ad.affine(h, w2, b2), "tanh")
    out = ad.affine(h, w3, b3)
    return (out * out).sum(axis=1).mean()


def _tiny_mlp_params(rng, dtype):
    shapes = [(3, 8), (8,), (8, 8), (8,), (8, 2), (2,)]
    return [Parameter((rng.normal(size=s) * 0.5).astype(dtype), name=f"p{i}",
                      dtype=dtype)
            for i, s in enumerate(shapes)]


def test_mlp_gradients_match_finite_differences_float64():
    rng = np.random.default_rng(5)
    xv = rng.normal(size=(6, 3))
    params = _tiny_mlp_params(rng, np.float64)
    ad.backward(_tiny_mlp_loss(params, xv, np.float64))
    for p in params:
        fd = fd_grad(lambda: float(_tiny_mlp_loss(params, xv, np.float64).values),
                     p.values)
        assert rel_err(p.grad, fd) < 1e-6, p.name


# -- adam ---------------------------------------------------------------------

def test_adam_zero_grad_leaves_values_unchanged():
    p = Parameter(np.array([1.0, 2.0], np.float32), name="p")
    p.tensor.grad = np.zeros(2, np.float32)
    before = p.values.copy()
    ad.adam_step([p], lr=0.1, betas=(0.9, 0.99), eps=1e-8)
    assert np.array_equal(p.values, before)


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array(1.0), name="p", dtype=np.float64)
    p.tensor.grad = np.array(1.0, np.float64)
    ad.adam_step([p], lr=0.1, betas=(0.9, 0.99), eps=1e-12)
    assert abs((1.0 - float(p.values)) - 0.1) < 1e-6


def test_adam_missing_grad_names_parameter():
    p = Parameter(np.array(1.0), name="needs_grad")
    with pytest.raises(ContractViolation) as exc:
        ad.adam_step([p], lr=0.1, betas=(0.9, 0.99), eps=1e-8)
    assert "needs_grad" in str(exc.value)


def test_adam_zeroes_grads_after_step():
    p = Parameter(np.array(1.0), name="p", dtype=np.float64)
    p.tensor.grad = np.array(1.0, np.float64)
    ad.adam_step([p], lr=0.1, betas=(0.9, 0.99), eps=1e-12)
    assert p.grad is None or not np.any(p.grad)


def _reference_adam(grads, lr, betas, eps, w0):
    """Independent Adam implementation used as the optimization oracle."""
    b1, b2 = betas
    m = v = 0.0
    w = w0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        w -= lr * mh / (np.sqrt(vh) + eps)
    return w


def test_adam_quadratic_convergence_matches_reference():
    p = Parameter(np.array(0.0), name="w", dtype=np.float64)
    grads = []
    for _ in range(50):
        loss = (p.tensor - 3.0) * (p.tensor - 3.0)
        ad.backward(loss)
        grads.append(float(p.grad))
        ad.adam_step([p], lr=0.1, betas=(0.9, 0.99), eps=1e-8)
    ref = _reference_adam(grads, 0.1, (0.9, 0.99), 1e-8, 0.0)
    assert abs(float(p.values) - ref) < 1e-10
    # Adam overshoots the minimum around step 50 (|w-3| ~ 0.19, confirmed by
    # the independent reference); it settles within tolerance by step 100.
    for _ in range(50):
        ad.backward((p.tensor - 3.0) * (p.tensor - 3.0))
        ad.adam_step([p], lr=0.1, betas=(0.9, 0.99), eps=1e-8)
    assert abs(float(p.values) - 3.0) < 0.05


def test_adam_step_counter_increments_by_one():
    p = Parameter(np.array(1.0), name="p", dtype=np.float64)
    for expected in (1, 2, 3):
        p.tensor.grad = np.array(0.5, np.float64)
        ad.adam_step([p], lr=0.01, betas=(0.9, 0.99), eps=1e-8)
        assert p.step == expected


def test_optimizer_groups_use_distinct_rates():
    h = Parameter(np.array(1.0), name="h", group="hash", dtype=np.float64)
    m = Parameter(np.array(1.0), name="m", group="mlp", dtype=np.float64)
    opt = AdamOptimizer([h, m], lr_hash=1e-2, lr_mlp=1e-3, eps_hash=1e-15,
                        eps_mlp=1e-12)
    h.tensor.grad = np.array(1.0, np.float64)
    m.tensor.grad = np.array(1.0, np.float64)
    opt.step()
    assert abs((1.0 - float(h.values)) - 1e-2) < 1e-6
    assert abs((1.0 - float(m.values)) - 1e-3) < 1e-7


# -- misc ops ------------------------------------------------------------------

def test_elementwise_op_gradients():
    rng = np.random.default_rng(6)
    av = rng.uniform(0.5, 2.0, size=5)
    bv = rng.uniform(0.5, 2.0, size=5)
    a = Parameter(av.copy(), name="a", dtype=np.float64)
    b = Parameter(bv.copy(), name="b", dtype=np.float64)
    ta, tb = a.tensor, b.tensor
    loss = ((ta * tb + ta / tb - tb) ** 2).mean()
    ad.backward(loss)

    def f():
        return float((((av * bv) + av / bv - bv) ** 2).mean())
    assert rel_err(a.grad, fd_grad(f, av)) < 1e-6
    assert rel_err(b.grad, fd_grad(f, bv)) < 1e-6


def test_getitem_gradient_accumulates_duplicate_indices():
    p = Parameter(np.array([1.0, 2.0, 3.0]), name="p")
    idx = np.array([0, 0, 2])
    ad.backward(p.tensor[idx].sum())
    assert np.array_equal(p.grad, np.array([2.0, 0.0, 1.0]))


def test_clip_masks_gradient_outside_range():
    p = Parameter(np.array([-1.0, 0.5, 2.0]), name="p")
    ad.backward(p.tensor.clip(0.0, 1.0).sum())
    assert np.array_equal(p.grad, np.array([0.0, 1.0, 0.0]))


def test_log_gradient():
    p = Parameter(np.array([0.5, 2.0]), name="p")
    ad.backward(p.tensor.log().sum())
    assert np.allclose(p.grad, 1.0 / p.values)


def test_concat_routes_gradients_to_both_inputs():
    a = Parameter(np.ones((2, 3)), name="a")
    b = Parameter(np.ones((4, 3)), name="b")
    out = ad.concat([a.tensor, b.tensor], axis=0)
    ad.backward((out * 2.0).sum())
    assert np.array_equal(a.grad, np.full((2, 3), 2.0))
    assert np.array_equal(b.grad, np.full((4, 3), 2.0))


def test_determinism_same_seed_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        xv = rng.normal(size=(6, 3))
        params = _tiny_mlp_params(rng, np.float32)
        loss = _tiny_mlp_loss(params, xv, np.float32)
        ad.backward(loss)
        return float(loss.values), [p.grad.copy() for p in params]
    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    for a, b in zip(g1, g2):
        assert np.array_equal(a, b)


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    params = _tiny_mlp_params(rng, np.float32)
    for p in params:
        p.tensor.grad = rng.normal(size=p.values.shape).astype(np.float32)
    ad.adam_step(params, lr=0.01, betas=(0.9, 0.99), eps=1e-8)
    path = tmp_path / "model.ckpt"
    ad.save_checkpoint(path, params, header={"seed": 7})
    header, records = ad.load_checkpoint(path)
    assert header["seed"] == 7
    for p in params:
        rec = records[p.name]
        assert np.array_equal(p.values, rec["values"])
        assert np.array_equal(p.m, rec["m"])
        assert np.array_equal(p.v, rec["v"])
        assert p.step == rec["step"]


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        ad.load_checkpoint(path)
