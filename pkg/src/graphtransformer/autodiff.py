"""A small tape-based reverse-mode autodiff engine on top of numpy.

Every primitive computes its forward value with numpy and, when any input
requires a gradient, appends a record to the active :class:`Tape`.
``backward`` walks the tape in exact reverse order.

Precision is global: float32 by default, switch to float64 with
:func:`set_default_dtype` or the :func:`precision` context manager for
gradient checking.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_dtype = np.dtype(np.float32)
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    global _dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype = dtype


def get_default_dtype() -> np.dtype:
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    old = _dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


class ShapeError(ValueError):
    pass


class DetachedError(RuntimeError):
    pass


@dataclass
class Record:
    op: str
    out: "Tensor"
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered list of recorded primitive applications."""
    records: list[Record] = field(default_factory=list)

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.remove(self)

    def __len__(self):
        return len(self.records)

    def backward(self, loss: "Tensor", grad: np.ndarray | None = None) -> None:
        if loss._tape is not self:
            raise DetachedError("loss was not recorded on this tape")
        if grad is None:
            if loss.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): grad}
        for rec in reversed(self.records[: loss._index + 1]):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    t.grad = gi.astype(t.data.dtype, copy=True) if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi


_tapes: list[Tape] = [Tape()]


def active_tape() -> Tape:
    return _tapes[-1]


class Tensor:
    """An n-dimensional array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_index", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._index = -1
        self.name = name

    # -- bookkeeping ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        if self._tape is None:
            raise DetachedError("backward called on a tensor that is not part of a recorded computation")
        self._tape.backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._tape = None
    out._index = -1
    out.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = active_tape()
        out._tape = tape
        out._index = len(tape.records)
        tape.records.append(Record(op, out, tuple(inputs), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b), "div",
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the input is clamped from below first (no gradient through the clamp)."""
    xd = x.data if floor is None else np.maximum(x.data, floor)
    live = None if floor is None else (x.data >= floor)

    def bw(g):
        gx = g / xd
        return (gx if live is None else gx * live,)
    return _make(np.log(xd), (x,), "log", bw)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), "relu", lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape manipulation

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims (both inputs >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _make(out, (a, b), "matmul", bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(np.asarray(out), (x,), "sum", bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(x.shape[a] for a in axes)
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _make(out, (x,), "reshape", lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), "transpose", lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)
    return _make(np.array(out, copy=True), (x,), "getitem", bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + " and ".join(str(t.shape) for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(out, tensors, "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not add up to dim {x.shape[axis]} of {x.shape}")
    out = []
    start = 0
    for s in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + s)
        out.append(getitem(x, tuple(idx)))
        start += s
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in tensors]
    return concat(expanded, axis=axis)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: id out of range for table of {table.shape[0]} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)
    return _make(table.data[ids], (table,), "embedding_lookup", bw)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; no gradient flows to them."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, np.asarray(value, dtype=x.data.dtype), x.data)
    return _make(out, (x,), "masked_fill", lambda g: (np.where(mask, 0, g),))


def take_along_axis(x: Tensor, ids: np.ndarray, axis: int = -1) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        gx = np.zeros_like(x.data)
        idx = list(np.indices(ids.shape, sparse=True))
        idx[axis % x.ndim] = ids
        np.add.at(gx, tuple(idx), g)
        return (gx,)
    return _make(np.take_along_axis(x.data, ids, axis), (x,), "take_along_axis", bw)


# ---------------------------------------------------------------------------
# neural primitives

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), "softmax", bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), "log_softmax", lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = x.shape[-1]
    gd = gamma.data if gamma is not None else 1.0
    out = xhat * gd + (beta.data if beta is not None else 0.0)
    inputs = [x] + [t for t in (gamma, beta) if t is not None]

    def bw(g):
        gxhat = g * gd
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g, beta.shape))
        return grads
    return _make(out.astype(x.data.dtype, copy=False), inputs, "layer_norm", bw)


class DropoutStream:
    """Counter-based dropout masks: call ``k`` under key ``(seed, step)`` always draws the same mask."""

    def __init__(self, seed: int, step: int = 0):
        self.seed = seed
        self.step = step
        self.counter = 0

    def uniform(self, shape) -> np.ndarray:
        rng = np.random.default_rng([self.seed, self.step, self.counter])
        self.counter += 1
        return rng.random(shape)


def dropout(x: Tensor, p: float, stream: DropoutStream | None, training: bool = True) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0 or stream is None:
        return x
    keep = (stream.uniform(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Valid 1-D convolution. ``x``: [B, L, C_in]; ``w``: [K, C_in, C_out] -> [B, L-K+1, C_out]."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    bsz, length, cin = x.shape
    k, _, cout = w.shape
    if length < k:
        raise ShapeError(f"conv1d: input length {length} shorter than filter width {k}")
    lout = length - k + 1
    cols = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)  # [B, lout, C_in, K]
    cols = np.ascontiguousarray(np.swapaxes(cols, 2, 3)).reshape(bsz, lout, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def bw(g):
        gw = np.tensordot(cols, g, axes=([0, 1], [0, 1])).reshape(w.shape)
        gcols = (g @ wmat.T).reshape(bsz, lout, k, cin)
        gx = np.zeros_like(x.data)
        for t in range(k):
            gx[:, t:t + lout] += gcols[:, :, t]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1)))
        return grads
    return _make(out, inputs, "conv1d", bw)


def max_pool1d(x: Tensor, lengths=None) -> Tensor:
    """Max over the time axis of ``[B, L, C]``; positions at or beyond ``lengths[b]`` are ignored."""
    data = x.data
    if lengths is not None:
        lengths = np.asarray(lengths)
        valid = np.arange(x.shape[1])[None, :] < lengths[:, None]
        data = np.where(valid[:, :, None], data, -np.inf)
    arg = data.argmax(axis=1)  # [B, C]
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx,)
    return _make(out, (x,), "max_pool1d", bw)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)`` over the last axis."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    m = np.ones(targets.shape, dtype=logits.data.dtype) if mask is None else np.asarray(mask, dtype=logits.data.dtype)
    count = max(m.sum(), 1.0)
    out = np.asarray((nll * m).sum() / count, dtype=logits.data.dtype)

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((p - onehot) * (m / count)[..., None] * g,)
    return _make(out, (logits,), "cross_entropy", bw)


# ---------------------------------------------------------------------------
# recurrent cell

GRU_PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def gru_cell(h: Tensor, x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """One GRU step (Cho et al. 2014) on row-vector batches.

    ``h``: [B, H], ``x``: [B, E]; ``W_*``: [E, H], ``U_*``: [H, H], ``b_*``: [H].
    """
    for name in GRU_PARAM_NAMES:
        if name not in params:
            raise KeyError(f"gru_cell: missing parameter {name}")
    hdim = h.shape[-1]
    if params["U_z"].shape != (hdim, hdim) or params["W_z"].shape[0] != x.shape[-1]:
        raise ShapeError(
            f"gru_cell: state {h.shape} / input {x.shape} do not fit W_z {params['W_z'].shape}, U_z {params['U_z'].shape}"
        )
    p = params
    z = sigmoid(x @ p["W_z"] + h @ p["U_z"] + p["b_z"])
    r = sigmoid(x @ p["W_r"] + h @ p["U_r"] + p["b_r"])
    cand = tanh(x @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
    return (1.0 - z) * h + z * cand


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    passed: bool
    checked: int

    def __str__(self):
        return f"grad_check: max rel err {self.max_rel_error:.3e} over {self.checked} coords ({'ok' if self.passed else 'FAIL'})"


def _first_nonfinite(tape: Tape) -> str | None:
    for rec in tape.records:
        if not np.all(np.isfinite(rec.out.data)):
            return rec.op
    return None


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5, tol: float = 1e-5,
               max_coords: int = 64, seed: int = 0, floor: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Large inputs are subsampled to ``max_coords`` coordinates.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
        if out.size != 1:
            raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
        bad = _first_nonfinite(tape)
        if bad is not None or not np.isfinite(out.data).all():
            raise FloatingPointError(f"grad_check: non-finite value produced by primitive {bad or 'output'}")
        out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    rng = np.random.default_rng(seed)
    per_input = []
    checked = 0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            worst = 0.0
            for c in coords:
                orig = flat[c]
                flat[c] = orig + eps
                fp = float(f(*inputs).data)
                flat[c] = orig - eps
                fm = float(f(*inputs).data)
                flat[c] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise FloatingPointError("grad_check: non-finite value during finite differences")
                num = (fp - fm) / (2 * eps)
                a = float(ga.reshape(-1)[c])
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
                checked += 1
            per_input.append(worst)
    worst = max(per_input, default=0.0)
    return GradCheckReport(worst, per_input, worst < tol, checked)
