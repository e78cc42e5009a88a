"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays (float64 by default, float32 for training).
Operations record onto a thread-local :class:`Tape` when one is active;
without an active tape they behave as plain inference-mode math.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense N-d array with an optional gradient buffer.

    Tensors are immutable once produced by an op; leaf tensors (parameters,
    inputs) may have their ``data`` rewritten between forward passes, which
    is how the optimizer and finite-difference probes work.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw values, not another Tensor")
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float64)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the functional forms below do the real work.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Tape:
    """Ordered record of executed ops; recording order is topological.

    One tape per thread may be active at a time.  Usage::

        with Tape():
            loss = forward(...)
            backward(loss)
    """

    __slots__ = ("nodes",)

    def __init__(self):
        # node: (op name, inputs tuple, output, backward fn)
        self.nodes: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        if getattr(_state, "tape", None) is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None


def active_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def _record(name: str, inputs: tuple[Tensor, ...], out: Tensor, bwd: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append((name, inputs, out, bwd))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf.

    Repeated calls without clearing grads keep accumulating.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {loss.shape}")
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() requires an active Tape")

    produced = {id(out) for _, _, out, _ in tape.nodes}
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for _, inputs, out, bwd in reversed(tape.nodes):
        out_grad = flowing.get(id(out))
        if out_grad is None:
            continue
        in_grads = bwd(out_grad)
        for t, g in zip(inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in flowing:
                flowing[key] = flowing[key] + g
            else:
                flowing[key] = g

    for _, inputs, _, _ in tape.nodes:
        for t in inputs:
            if t.requires_grad and id(t) not in produced and id(t) in flowing:
                g = flowing.pop(id(t))
                t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------

def _check_same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)
    return _record("add", (a, b), out, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)
    return _record("sub", (a, b), out, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)
    return _record("mul", (a, b), out, lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record("neg", (a,), out, lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated w.r.t. c)."""
    out = Tensor(a.data * a.dtype.type(c))
    return _record("scale", (a,), out, lambda g: (g * c,))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a single-element tensor; differentiable in both."""
    if s.data.size != 1:
        raise ShapeError(f"scale_by: scaling tensor must hold one value, shape is {s.shape}")
    sval = s.data.reshape(-1)[0]
    out = Tensor(a.data * sval)

    def bwd(g):
        return g * sval, np.sum(g * a.data).reshape(s.shape).astype(s.dtype)

    return _record("scale_by", (a, s), out, bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m-by-n matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    out = Tensor(x.data + b.data[None, :])
    return _record("add_bias", (x, b), out, lambda g: (g, g.sum(axis=0)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record("matmul", (a, b), out, lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.T))
    return _record("transpose", (a,), out, lambda g: (np.ascontiguousarray(g.T),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (per-slice max is subtracted first)."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} out of bounds for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax", (x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function; outputs clamped to the open interval (0, 1)."""
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    info = np.finfo(d.dtype)
    y = np.clip(y.astype(d.dtype), info.tiny, 1.0 - info.epsneg)
    out = Tensor(y)
    return _record("sigmoid", (x,), out, lambda g: (g * y * (1.0 - y),))


def gelu(x: Tensor) -> Tensor:
    """Exact erf-form GELU: x * Phi(x).  The tanh approximation is not used."""
    d = x.data
    phi_cdf = 0.5 * (1.0 + erf(d / _SQRT2))
    out = Tensor(d * phi_cdf)

    def bwd(g):
        pdf = np.exp(-0.5 * d * d) * _INV_SQRT_2PI
        return (g * (phi_cdf + d * pdf),)

    return _record("gelu", (x,), out, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dimension, then apply the learned affine."""
    d = x.data
    n = d.shape[-1]
    if n == 0:
        raise ShapeError("layer_norm: normalization axis has zero length")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match last dim {n}")
    mu = d.mean(axis=-1, keepdims=True)
    var = ((d - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def bwd(g):
        dg = (g * xhat).reshape(-1, n).sum(axis=0)
        db = g.reshape(-1, n).sum(axis=0)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dg, db

    return _record("layer_norm", (x, gamma, beta), out, bwd)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat: ranks differ, {a.shape} vs {b.shape}")
    ax = axis % a.data.ndim if a.data.ndim else 0
    for i, (ea, eb) in enumerate(zip(a.shape, b.shape)):
        if i != ax and ea != eb:
            raise ShapeError(f"concat: non-axis extents differ, {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=ax))
    split = a.shape[ax]

    def bwd(g):
        ga = np.take(g, range(split), axis=ax)
        gb = np.take(g, range(split, g.shape[ax]), axis=ax)
        return ga, gb

    return _record("concat", (a, b), out, bwd)


def concat_all(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat_all: need at least one tensor")
    out = tensors[0]
    for t in tensors[1:]:
        out = concat(out, t, axis=axis)
    return out


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Select rows of a 2-d table by index; gradients scatter-add back."""
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-d table, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: ids must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record("gather_rows", (table,), out, bwd)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over rows of an m-by-n matrix, keeping shape (1, n)."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_rows needs a 2-d tensor, got {x.shape}")
    m = x.shape[0]
    out = Tensor(x.data.mean(axis=0, keepdims=True))
    return _record("mean_rows", (x,), out, lambda g: (np.repeat(g / m, m, axis=0),))


def index(x: Tensor, i: int, j: int) -> Tensor:
    """Pick one entry of a 2-d tensor as a (1, 1) tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"index needs a 2-d tensor, got {x.shape}")
    out = Tensor(x.data[i:i + 1, j:j + 1].copy())

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[i, j] = g[0, 0]
        return (gx,)

    return _record("index", (x,), out, bwd)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    return _record("sum_all", (x,), out, lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


def cross_entropy(logits: Tensor, targets: Sequence[int], mask: Sequence[bool],
                  reduction: str = "mean") -> Tensor:
    """Cross-entropy of ``targets`` under ``logits`` at mask-selected rows.

    Computed via log-sum-exp; ``mean`` (default) averages over unmasked rows,
    ``sum`` matches the raw summed negative log-likelihood.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-d, got {logits.shape}")
    t_rows, vocab = logits.shape
    tgt = np.asarray(targets, dtype=np.int64)
    msk = np.asarray(mask, dtype=bool)
    if tgt.shape != (t_rows,) or msk.shape != (t_rows,):
        raise ShapeError(
            f"cross_entropy: targets {tgt.shape} / mask {msk.shape} must match rows {t_rows}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"cross_entropy: unknown reduction {reduction!r}")
    count = int(msk.sum())
    if count == 0:
        raise ValueError("cross_entropy: mask selects no positions")
    scored = tgt[msk]
    if scored.min() < 0 or scored.max() >= vocab:
        raise IndexError(f"cross_entropy: target id outside vocabulary of {vocab}")
    tgt_safe = np.where(msk, tgt, 0)

    d = logits.data
    mx = d.max(axis=1, keepdims=True)
    shifted = d - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + mx
    nll = lse[:, 0] - d[np.arange(t_rows), tgt_safe]
    total = nll[msk].sum()
    value = total / count if reduction == "mean" else total
    out = Tensor(np.asarray(value, dtype=d.dtype))

    def bwd(g):
        probs = np.exp(d - lse)
        grad = probs.copy()
        grad[np.arange(t_rows), tgt_safe] -= 1.0
        grad[~msk] = 0.0
        gscale = g / count if reduction == "mean" else g
        return (grad * gscale,)

    return _record("cross_entropy", (logits,), out, bwd)


# ---------------------------------------------------------------------------
# Parameter init and verification
# ---------------------------------------------------------------------------

def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 dtype=np.float64) -> Tensor:
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter tensor."""
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-4, richardson: bool = False) -> float:
    """Max relative error between backward grads and central differences.

    ``f(*inputs)`` must return a scalar tensor.  Inputs are probed in place
    coordinate by coordinate, so pass float64 leaves for tight tolerances.
    ``richardson=True`` extrapolates two central differences (step eps and
    eps/2) to 4th order; deep compositions need it because coordinates with
    near-zero gradients otherwise drown in subtraction noise.
    """
    for t in inputs:
        t.grad = None
    with Tape():
        out = f(*inputs)
        if out.data.size != 1:
            raise ShapeError(f"grad_check: f must return a scalar, got {out.shape}")
        backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    def central(flat, k, orig, step):
        flat[k] = orig + step
        fp = f(*inputs).item()
        flat[k] = orig - step
        fm = f(*inputs).item()
        flat[k] = orig
        return (fp - fm) / (2.0 * step)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            num = central(flat, k, orig, eps)
            if richardson:
                num = (4.0 * central(flat, k, orig, eps / 2.0) - num) / 3.0
            err = abs(aflat[k] - num) / max(abs(aflat[k]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
