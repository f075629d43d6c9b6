"""Dense float64 tensors with reverse-mode autodiff, plus AdamW.

A Tape records every op whose output needs gradients while it is active;
Tape.backward walks the records in reverse, accumulating gradients into the
.grad of leaf tensors (parameters and inputs). Everything is float64 and the
op set is the minimum the model needs: affine algebra, pointwise
nonlinearities, softmax, and gather/scatter over row indices for message
passing. Scatter accumulation is deterministic and order-invariant (see
pcbgnn.kernels), so a fixed seed reproduces training bit-for-bit on one
platform.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels

_TAPE_STACK: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all arithmetic routes through the op functions below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return multiply(self, -1.0)


class Tape:
    """Records (output, inputs, backward_fn) triples in execution order."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self._records.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate .grad of every requires_grad leaf reachable from loss.

        Repeated calls accumulate into existing .grad arrays.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(out) for out, _, _ in self._records}
        leaves: dict[int, Tensor] = {}
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            input_grads = backward_fn(g)
            for inp, gin in zip(inputs, input_grads):
                if gin is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
                if key not in produced:
                    leaves[key] = inp
        if id(loss) in grads and loss.requires_grad and id(loss) not in produced:
            leaves[id(loss)] = loss
        for key, tensor in leaves.items():
            g = grads[key]
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise RuntimeError("backward requires an active or explicit tape")
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        ),
    )


def divide(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D tensors, got {a.data.shape} @ {b.data.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        ),
    )


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), backward_fn)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(x.data[index].copy(), (x,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward_fn)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.data.shape).copy(),)

    return _make(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward_fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(
        np.where(mask, x.data, slope * x.data),
        (x,),
        lambda g: (g * np.where(mask, 1.0, slope),),
    )


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))), np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    if x.data.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward_fn(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _make(y, (x,), backward_fn)


def tlog(x) -> Tensor:
    x = _as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def texp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through where lo < x < hi."""
    x = _as_tensor(x)
    mask = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def gather_rows(x, idx) -> Tensor:
    """Select rows of a 2-D tensor; adjoint is scatter_add over the same idx.

    The adjoint uses the fast (row-order) scatter: gradients are exact and
    deterministic, they just skip the canonical value sort of the forward
    scatter op.
    """
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D tensor, got shape {x.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    return _make(
        x.data[idx],
        (x,),
        lambda g: (kernels.scatter_add_rows_fast(g, idx, x.data.shape[0]),),
    )


def scatter_add_rows(x, idx, num_rows: int) -> Tensor:
    """out[i] = sum of rows of x mapped to i; adjoint is gather_rows."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"scatter_add_rows expects a 2-D tensor, got shape {x.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    return _make(
        kernels.scatter_add_rows(x.data, idx, num_rows),
        (x,),
        lambda g: (g[idx],),
    )


def segment_softmax(scores, seg_idx, num_segments: int) -> Tensor:
    """Softmax of a 2-D score tensor within row segments (per column).

    The per-segment max is treated as a constant shift, which leaves the
    softmax value and its gradient unchanged.
    """
    scores = _as_tensor(scores)
    seg_idx = np.asarray(seg_idx, dtype=np.int64)
    shift = kernels.segment_max(scores.data, seg_idx, num_segments)[seg_idx]
    e = texp(subtract(scores, Tensor(shift)))
    denom = gather_rows(scatter_add_rows(e, seg_idx, num_segments), seg_idx)
    return divide(e, denom)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(f, x: Tensor, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
    """
    if not (1e-8 <= eps <= 1e-4):
        raise ValueError(f"eps {eps} outside [1e-8, 1e-4]")
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        loss = f(x)
    tape.backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data)
        flat[i] = orig - eps
        fm = float(f(x).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    a = analytic.reshape(-1)
    return float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.abs(a))))


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


class AdamW:
    """AdamW with decoupled weight decay and bias-corrected moments."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ValueError("AdamW.step called with a missing gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        """Reset gradients to zero arrays.

        Zeros rather than None: a parameter that does not participate in a
        step's loss (e.g. the pair head when no pairs survive the filter)
        then legitimately steps with a zero gradient.
        """
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
            "lr": self.lr,
            "betas": [self.beta1, self.beta2],
            "eps": self.eps,
            "weight_decay": self.weight_decay,
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = state["step"]
        self.m = [np.asarray(m, dtype=np.float64).reshape(p.data.shape) for m, p in zip(state["m"], self.params)]
        self.v = [np.asarray(v, dtype=np.float64).reshape(p.data.shape) for v, p in zip(state["v"], self.params)]
        self.lr = state["lr"]
        self.beta1, self.beta2 = state["betas"]
        self.eps = state["eps"]
        self.weight_decay = state["weight_decay"]
