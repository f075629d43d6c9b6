"""Tensor ops, reverse-mode gradients, grad_check, and AdamW."""

from __future__ import annotations

import numpy as np
import pytest

from pcbgnn import autodiff as ad
from pcbgnn.autodiff import AdamW, Tape, Tensor, grad_check


def test_sigmoid_at_zero():
    assert float(ad.sigmoid(Tensor(0.0)).data) == 0.5


def test_softmax_uniform():
    y = ad.softmax(Tensor([1.0, 1.0, 1.0]), axis=0)
    assert np.allclose(y.data, [1 / 3] * 3)


def test_softmax_empty_axis_rejected():
    with pytest.raises(ValueError, match="empty axis"):
        ad.softmax(Tensor(np.zeros((2, 0))), axis=1)


def test_scatter_add_duplicate_targets():
    r = np.array([[1.0, 2.0], [10.0, 20.0]])
    out = ad.scatter_add_rows(Tensor(r), np.array([0, 0]), 2)
    assert np.array_equal(out.data[0], [11.0, 22.0])
    assert np.array_equal(out.data[1], [0.0, 0.0])


def test_backward_elementwise_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = ad.tsum(ad.multiply(x, x))
    tape.backward(loss)
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_matmul_pattern():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.tsum(ad.matmul(a, b))
    tape.backward(loss)
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))
    # cross-check against central differences
    err = grad_check(lambda t: ad.tsum(ad.matmul(t, Tensor(b.data))), Tensor(a.data.copy()), eps=1e-6)
    assert err < 1e-9


def test_softmax_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros(3), requires_grad=True)
    with Tape() as tape:
        p = ad.softmax(logits, axis=0)
        loss = ad.multiply(ad.tlog(ad.slice_axis(p, 0, 0, 1)), -1.0)
        loss = ad.tsum(loss)
    tape.backward(loss)
    assert np.allclose(logits.grad, [-2 / 3, 1 / 3, 1 / 3])


def test_shared_subexpression_accumulates():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        loss = ad.tsum(ad.add(x, x))
    tape.backward(loss)
    assert np.array_equal(x.grad, [2.0])


def test_repeated_backward_accumulates_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    for expected in ([2.0, 4.0], [4.0, 8.0]):
        with Tape() as tape:
            loss = ad.tsum(ad.multiply(x, x))
        tape.backward(loss)
        assert np.array_equal(x.grad, expected)
    x.zero_grad()
    with Tape() as tape:
        loss = ad.tsum(ad.multiply(x, x))
    tape.backward(loss)
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ad.multiply(x, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_no_recording_without_tape():
    x = Tensor([1.0], requires_grad=True)
    y = ad.multiply(x, x)
    assert y.requires_grad
    tape = Tape()
    with tape:
        pass
    assert len(tape) == 0


# ---------------------------------------------------------------------------
# grad_check battery over all ops
# ---------------------------------------------------------------------------

_SEEDS = list(range(10))


def _op_cases(rng):
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((4, 5))
    w = rng.standard_normal((5, 3))
    idx = rng.integers(0, 4, 7)
    seg = np.sort(rng.integers(0, 3, 6))
    return [
        ("add", lambda x: ad.tsum(ad.add(x, Tensor(b))), a),
        ("add_broadcast", lambda x: ad.tsum(ad.add(Tensor(a), x)), rng.standard_normal(5)),
        ("subtract", lambda x: ad.tsum(ad.subtract(x, Tensor(b))), a),
        ("multiply", lambda x: ad.tsum(ad.multiply(x, Tensor(b))), a),
        ("divide", lambda x: ad.tsum(ad.divide(x, Tensor(np.abs(b) + 1.0))), a),
        ("divide_denom", lambda x: ad.tsum(ad.divide(Tensor(a), x)), np.abs(b) + 1.0),
        ("matmul", lambda x: ad.tsum(ad.matmul(x, Tensor(w))), a),
        ("concat", lambda x: ad.tsum(ad.concat([x, Tensor(b)], axis=1)), a),
        ("slice", lambda x: ad.tsum(ad.slice_axis(x, 1, 1, 4)), a),
        ("reshape", lambda x: ad.tsum(ad.reshape(x, (2, 10))), a),
        ("sum_axis", lambda x: ad.tsum(ad.tsum(x, axis=1)), a),
        ("mean", lambda x: ad.tmean(x), a),
        ("mean_axis", lambda x: ad.tsum(ad.tmean(x, axis=0)), a),
        ("relu", lambda x: ad.tsum(ad.relu(x)), a + 0.05),
        ("leaky_relu", lambda x: ad.tsum(ad.leaky_relu(x, 0.2)), a + 0.05),
        ("sigmoid", lambda x: ad.tsum(ad.sigmoid(x)), a),
        ("softmax", lambda x: ad.tsum(ad.multiply(ad.softmax(x, axis=1), Tensor(b))), a),
        ("log", lambda x: ad.tsum(ad.tlog(x)), np.abs(a) + 0.5),
        ("exp", lambda x: ad.tsum(ad.texp(x)), a * 0.3),
        ("clip", lambda x: ad.tsum(ad.clip(x, -0.8, 0.8)), a),
        ("gather", lambda x: ad.tsum(ad.gather_rows(x, idx)), a),
        ("scatter", lambda x: ad.tsum(ad.multiply(ad.scatter_add_rows(x, idx[:4], 6), 1.5)), a),
        (
            "gather_scatter_composed",
            lambda x, c=Tensor(rng.standard_normal((6, 5))): ad.tsum(
                ad.multiply(ad.gather_rows(ad.scatter_add_rows(x, idx[:4], 5), idx[:6] % 5), c)
            ),
            a,
        ),
        (
            "segment_softmax",
            lambda x, c=Tensor(rng.standard_normal((6, 5))): ad.tsum(ad.multiply(ad.segment_softmax(x, seg, 3), c)),
            rng.standard_normal((6, 5)),
        ),
    ]


@pytest.mark.parametrize("seed", _SEEDS)
def test_all_ops_grad_check(seed):
    rng = np.random.default_rng(seed)
    for name, f, x0 in _op_cases(rng):
        err = grad_check(f, Tensor(np.array(x0, dtype=np.float64)), eps=1e-6)
        assert err < 1e-4, f"op {name} failed grad check with {err}"


def test_grad_check_identity_tight():
    # exact gradient of 1 everywhere; zero-sum x keeps the finite-difference
    # cancellation error at the machine-precision floor
    err = grad_check(lambda x: ad.tsum(x), Tensor(np.linspace(-1.0, 1.0, 7)), eps=1e-6)
    assert err <= 1e-10


def test_grad_check_eps_domain():
    with pytest.raises(ValueError):
        grad_check(lambda x: ad.tsum(x), Tensor(np.ones(2)), eps=1e-2)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


def test_adamw_zero_gradient_no_decay():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    opt.zero_grad()
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_value():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))
    assert abs(float(p.data[0]) - expected) < 1e-15


def test_adamw_decoupled_decay():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.01)
    p.grad = np.array([0.0])
    opt.step()
    assert abs(float(p.data[0]) - 2.0 * (1 - 0.1 * 0.01)) < 1e-15


def test_adamw_missing_gradient_errors():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    with pytest.raises(ValueError, match="missing gradient"):
        opt.step()


def _reference_adam(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    # Textbook Adam, written independently for the equivalence check.
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    traj = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        traj.append(x.copy())
    return traj


def test_adamw_wd0_equals_adam_on_quadratic():
    # minimize 0.5 * x^T diag(c) x from a fixed start, 100 steps
    c = np.array([1.0, 3.0, 0.5])
    p = Tensor(np.array([1.0, -2.0, 0.7]), requires_grad=True)
    opt = AdamW([p], lr=0.05, weight_decay=0.0)
    ours = []
    grads = []
    x_ref = p.data.copy()
    for _ in range(100):
        p.grad = c * p.data
        grads.append(p.grad.copy())
        opt.step()
        ours.append(p.data.copy())
    # reference replays the same gradient sequence
    ref = _reference_adam(x_ref, grads, lr=0.05)
    assert max(np.max(np.abs(a - b)) for a, b in zip(ours, ref)) < 1e-12


def test_adamw_state_roundtrip():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = AdamW([p], lr=0.01)
    for _ in range(3):
        p.grad = p.data * 0.1
        opt.step()
    state = opt.state_dict()
    p2 = Tensor(p.data.copy(), requires_grad=True)
    opt2 = AdamW([p2], lr=0.01)
    opt2.load_state_dict(state)
    p.grad = np.array([0.3, -0.2])
    p2.grad = np.array([0.3, -0.2])
    opt.step()
    opt2.step()
    assert np.array_equal(p.data, p2.data)
