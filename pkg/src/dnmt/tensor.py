"""Dense tensors with tape-based reverse-mode differentiation.

Everything heavier in this package (attention, encoders, the training loop)
is expressed through the small set of operations below. Forward values are
plain numpy arrays; gradients are produced by replaying a recording tape
backwards. Recording only happens inside an active ``Tape`` context, so
inference-time code pays no bookkeeping cost.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "ShapeError",
    "RankError",
    "DegenerateMaskError",
    "EmptyInputError",
    "set_default_dtype",
    "get_default_dtype",
    "set_debug_checks",
    "tensor",
    "zeros",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "softmax_rows",
    "log_softmax_rows",
    "layer_norm",
    "mean_rows",
    "sum_all",
    "mean_all",
    "sum_axis1",
    "take_rows",
    "stack_rows",
    "concat_cols",
    "slice_cols",
    "pick",
    "dropout",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class RankError(ValueError):
    """Tensor rank is wrong for the requested operation."""


class DegenerateMaskError(ValueError):
    """A softmax row has every entry masked out."""


class EmptyInputError(ValueError):
    """An operation that needs at least one element received none."""


_default_dtype = np.float32
_debug_checks = False


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _default_dtype = dt.type


def get_default_dtype():
    return _default_dtype


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf checking after every forward op (slow, for tests)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """A dense array, optionally participating in gradient recording.

    ``requires_grad`` marks leaf parameters: after a backward pass their
    ``grad`` holds the accumulated gradient. Tensors are treated as
    immutable once created; only the optimizer mutates parameter data
    between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            # op results (arrays and numpy scalars) keep their computed
            # precision; everything else adopts the default dtype
            if not (isinstance(data, (np.ndarray, np.generic))
                    and arr.dtype in (np.float32, np.float64)):
                arr = arr.astype(_default_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


class Tape:
    """Ordered record of operations, replayed in reverse for gradients.

    Use as a context manager; ops executed inside record themselves when
    any input is a watched parameter or already lives on the tape.
    Independent tapes on different threads do not interact.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._live: set[int] = set()
        self._watched: list[Tensor] = []
        self._watched_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self

    def _watch(self, t: Tensor) -> None:
        if id(t) not in self._watched_ids:
            self._watched_ids.add(id(t))
            self._watched.append(t)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every watched tensor reachable from ``loss``."""
        if loss.data.shape != ():
            raise RankError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for out, inputs, backfn in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, tg in zip(inputs, backfn(g)):
                if tg is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = tg if acc is None else acc + tg
        for t in self._watched:
            g = grads.get(id(t))
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g if t.grad is None else t.grad + g


class no_grad:
    """Context manager that suspends recording on the active tape."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()


def _active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss to its parameters."""
    if loss.data.shape != ():
        raise RankError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not recorded on a tape; wrap the forward pass in `with Tape():`")
    tape.backward(loss)


def _record(out: Tensor, inputs: tuple, backfn) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by a forward op")
    tape = _active_tape()
    if tape is None:
        return out
    tracked = False
    for t in inputs:
        if t.requires_grad or id(t) in tape._live:
            tracked = True
            break
    if not tracked:
        return out
    for t in inputs:
        if t.requires_grad:
            tape._watch(t)
    tape._live.add(id(out))
    tape._records.append((out, inputs, backfn))
    out._tape = tape
    return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype if dtype is not None else _default_dtype),
                  requires_grad=requires_grad)


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _default_dtype
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = Tensor(a.data + b.data)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = Tensor(a.data - b.data)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    out = Tensor(a.data * b.data)

    def back(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects two tensors")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise RankError(f"matmul needs rank-2 operands, got {a.data.ndim} and {b.data.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise RankError("transpose is defined for rank-2 tensors")
    out = Tensor(a.data.T)

    def back(g):
        return (g.T,)

    return _record(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    out = Tensor(np.where(keep, a.data, 0.0))

    def back(g):
        return (g * keep,)

    return _record(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def back(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), back)


def _resolve_mask(mask, shape) -> np.ndarray:
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(bool)
    if m.shape != shape:
        m = np.broadcast_to(m, shape)
    return m


def softmax_rows(a: Tensor, mask=None) -> Tensor:
    """Row-wise softmax of a 2-D tensor; masked-out entries get exactly 0.

    ``mask`` is boolean with True marking entries that may receive weight.
    Stabilized by per-row max subtraction.
    """
    if a.data.ndim != 2:
        raise RankError("softmax_rows expects a rank-2 tensor")
    z = a.data
    if mask is not None:
        m = _resolve_mask(mask, z.shape)
        if not m.any(axis=1).all():
            raise DegenerateMaskError("softmax row with all entries masked")
        z = np.where(m, z, -np.inf)
    rowmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - rowmax)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def back(g):
        gy = g * y
        return (gy - y * gy.sum(axis=1, keepdims=True),)

    return _record(out, (a,), back)


def log_softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise RankError("log_softmax_rows expects a rank-2 tensor")
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    out = Tensor(y)

    def back(g):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)

    return _record(out, (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    lead = tuple(range(x.data.ndim - 1))

    def back(g):
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), back)


def mean_rows(a: Tensor) -> Tensor:
    """Arithmetic mean over the first axis of an m x d tensor."""
    if a.data.ndim != 2:
        raise RankError("mean_rows expects a rank-2 tensor")
    m = a.data.shape[0]
    if m == 0:
        raise EmptyInputError("mean_rows over zero rows")
    out = Tensor(a.data.mean(axis=0))

    def back(g):
        return (np.broadcast_to(g / m, a.data.shape),)

    return _record(out, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def back(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _record(out, (a,), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise EmptyInputError("mean_all over zero elements")
    out = Tensor(a.data.mean())

    def back(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _record(out, (a,), back)


def sum_axis1(a: Tensor) -> Tensor:
    """Sum over columns of an n x m tensor, keeping a trailing axis of 1."""
    if a.data.ndim != 2:
        raise RankError("sum_axis1 expects a rank-2 tensor")
    out = Tensor(a.data.sum(axis=1, keepdims=True))

    def back(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _record(out, (a,), back)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows by index; backward scatter-adds (also the embedding lookup)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise RankError("take_rows indices must be one-dimensional")
    if a.data.ndim != 2:
        raise RankError("take_rows expects a rank-2 tensor")
    out = Tensor(a.data[idx])

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _record(out, (a,), back)


def stack_rows(tensors) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix, one per row."""
    tensors = tuple(tensors)
    if not tensors:
        raise EmptyInputError("stack_rows of zero tensors")
    for t in tensors:
        if t.data.ndim != 1:
            raise RankError("stack_rows expects rank-1 tensors")
    out = Tensor(np.stack([t.data for t in tensors]))

    def back(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _record(out, tensors, back)


def concat_cols(tensors) -> Tensor:
    """Concatenate n x d_i tensors along the column axis."""
    tensors = tuple(tensors)
    if not tensors:
        raise EmptyInputError("concat_cols of zero tensors")
    widths = [t.data.shape[1] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    offsets = np.cumsum([0] + widths)

    def back(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _record(out, tensors, back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise RankError("slice_cols expects a rank-2 tensor")
    out = Tensor(a.data[:, start:stop])

    def back(g):
        z = np.zeros_like(a.data)
        z[:, start:stop] = g
        return (z,)

    return _record(out, (a,), back)


def pick(a: Tensor, indices) -> Tensor:
    """Select a[i, indices[i]] for every row i, as an n x 1 tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ShapeError("pick needs an n x m tensor and n indices")
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx][:, None])

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, (rows, idx), g[:, 0])
        return (z,)

    return _record(out, (a,), back)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is given."""
    if rate < 0 or rate >= 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return a
    keep = rng.random(a.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = Tensor(a.data * keep * scale)

    def back(g):
        return (g * keep * scale,)

    return _record(out, (a,), back)
