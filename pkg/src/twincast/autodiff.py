"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a 2-D numpy array. Operations executed while a Tape is active
are recorded in creation order; Tape.backward replays the records in exactly
the reverse order, accumulating gradients into every tensor that requires
them. Gradient flow is deterministic: same inputs, same graph, same bits.

Outside of a Tape context the same operations run as plain numpy forwards
with no recording, which keeps evaluation and finite-difference probing fast
and guarantees the tape adds nothing to the forward values.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import TrainingError, ValidationError

_ACTIVE_TAPES: list["Tape"] = []

_U64 = 0xFFFFFFFFFFFFFFFF


def _as_array(data) -> np.ndarray:
    # Fast path: op outputs are already 2-D float64 arrays.
    if type(data) is np.ndarray and data.ndim == 2 and data.dtype == np.float64:
        return data
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValidationError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # Sum the gradient back over axes that were broadcast on the forward pass.
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


class Tensor:
    """A 2-D float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_needs")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        # True when a backward pass must reach this tensor (itself trainable
        # or downstream of something trainable).
        self._needs = self.requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValidationError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data[0, 0])

    def grad_array(self) -> np.ndarray:
        """Gradient after backward; zeros if this tensor was never touched."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def _accumulate(self, g: np.ndarray) -> None:
        if not self._needs:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all routing goes through the module-level ops.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None):
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None):
        return reduce_mean(self, axis)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Records operations while active; replays them in reverse for backward.

    Use as a context manager::

        with Tape() as tape:
            loss = mse(model(x), y)
        tape.backward(loss)

    The backward traversal order is the exact reverse of the recording
    order, making gradient accumulation order-deterministic.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._owned: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self

    def _record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward_fn))
        self._owned.add(id(out))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and propagate through every record."""
        if loss.data.size != 1:
            raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._owned:
            raise ValidationError("loss was not produced under this tape")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


def _active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Create an op output, recording it if a tape is active and useful."""
    out = Tensor(data)
    needs = any(p._needs for p in parents)
    tape = _active_tape()
    if tape is not None and needs:
        out._needs = True
        tape._record(out, backward_fn(out))
    return out


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def bw(out):
        def run(g):
            a._accumulate(g)
            b._accumulate(g)

        return run

    return _make(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def bw(out):
        def run(g):
            a._accumulate(g)
            b._accumulate(-g)

        return run

    return _make(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data

    def bw(out):
        def run(g):
            a._accumulate(g * b.data)
            b._accumulate(g * a.data)

        return run

    return _make(data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data / b.data

    def bw(out):
        def run(g):
            a._accumulate(g / b.data)
            b._accumulate(-g * data / b.data)

        return run

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(out):
        def run(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        return run

    return _make(data, (a, b), bw)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias for weight of shape (n_out, n_in), bias (1, n_out)."""
    x, weight, bias = _coerce(x), _coerce(weight), _coerce(bias)
    if x.shape[1] != weight.shape[1]:
        raise ValidationError(f"affine mismatch: x {x.shape} vs weight {weight.shape}")
    if bias.shape != (1, weight.shape[0]):
        raise ValidationError(f"affine bias must be (1, {weight.shape[0]}), got {bias.shape}")
    data = x.data @ weight.data.T + bias.data

    def bw(out):
        def run(g):
            x._accumulate(g @ weight.data)
            weight._accumulate(g.T @ x.data)
            bias._accumulate(g.sum(axis=0, keepdims=True))

        return run

    return _make(data, (x, weight, bias), bw)


def tanh(x: Tensor) -> Tensor:
    x = _coerce(x)
    data = np.tanh(x.data)

    def bw(out):
        def run(g):
            x._accumulate(g * (1.0 - out.data * out.data))

        return run

    return _make(data, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    x = _coerce(x)
    # Via tanh for numerical symmetry: sigma(z) = (1 + tanh(z/2)) / 2.
    data = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(out):
        def run(g):
            x._accumulate(g * out.data * (1.0 - out.data))

        return run

    return _make(data, (x,), bw)


def exp(x: Tensor) -> Tensor:
    x = _coerce(x)
    data = np.exp(x.data)

    def bw(out):
        def run(g):
            x._accumulate(g * out.data)

        return run

    return _make(data, (x,), bw)


def sqrt(x: Tensor) -> Tensor:
    x = _coerce(x)
    data = np.sqrt(x.data)

    def bw(out):
        def run(g):
            x._accumulate(g * 0.5 / out.data)

        return run

    return _make(data, (x,), bw)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    x = _coerce(x)
    if axis is None:
        data = x.data.sum().reshape(1, 1)
    elif axis in (0, 1):
        data = x.data.sum(axis=axis, keepdims=True)
    else:
        raise ValidationError(f"axis must be None, 0 or 1, got {axis!r}")

    def bw(out):
        def run(g):
            x._accumulate(np.broadcast_to(g, x.data.shape))

        return run

    return _make(data, (x,), bw)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = _coerce(x)
    if axis is None:
        count = x.data.size
        data = x.data.mean().reshape(1, 1)
    elif axis in (0, 1):
        count = x.data.shape[axis]
        data = x.data.mean(axis=axis, keepdims=True)
    else:
        raise ValidationError(f"axis must be None, 0 or 1, got {axis!r}")

    def bw(out):
        def run(g):
            x._accumulate(np.broadcast_to(g, x.data.shape) / count)

        return run

    return _make(data, (x,), bw)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the column axis; all inputs share a row count."""
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ValidationError("concat_cols needs at least one tensor")
    rows = ts[0].shape[0]
    for t in ts:
        if t.shape[0] != rows:
            raise ValidationError("concat_cols inputs must share their row count")
    data = np.concatenate([t.data for t in ts], axis=1)
    widths = [t.shape[1] for t in ts]

    def bw(out):
        def run(g):
            offset = 0
            for t, w in zip(ts, widths):
                t._accumulate(g[:, offset : offset + w])
                offset += w

        return run

    return _make(data, ts, bw)


def split_cols(x: Tensor, widths: Sequence[int]) -> list[Tensor]:
    """Inverse of concat_cols: slice into blocks of the given column widths."""
    x = _coerce(x)
    if sum(widths) != x.shape[1]:
        raise ValidationError(f"split widths {list(widths)} do not cover {x.shape[1]} columns")
    parts = []
    offset = 0
    for w in widths:
        lo = offset
        data = x.data[:, lo : lo + w]

        def bw(out, lo=lo, w=w):
            def run(g):
                full = np.zeros_like(x.data)
                full[:, lo : lo + w] = g
                x._accumulate(full)

            return run

        parts.append(_make(data, (x,), bw))
        offset += w
    return parts


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of elementwise squared differences, over every element."""
    pred, target = _coerce(pred), _coerce(target)
    if pred.shape != target.shape:
        raise ValidationError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return reduce_mean(mul(diff, diff))


def l2_norm_sq(params: Iterable[Tensor]) -> Tensor:
    """Sum of squares of every element across all given tensors."""
    total: Tensor | None = None
    for p in params:
        term = reduce_sum(mul(p, p))
        total = term if total is None else add(total, term)
    if total is None:
        raise ValidationError("l2_norm_sq needs at least one tensor")
    return total


class Adam:
    """Adam with bias correction; update is lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise ValidationError("Adam can only optimize trainable tensors")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad_array()
            if not np.all(np.isfinite(g)):
                raise TrainingError("non-finite gradient", step=self.t)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Rng:
    """Counter-based random stream with hierarchical substream derivation.

    Two Rng objects built from the same seed and derivation path produce
    identical draws regardless of what any other stream consumed. derive()
    returns an independent child stream keyed by the given path, so run-level
    seeds can fan out into per-phase and per-stage seeds without coupling.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) & _U64 for k in _spawn_key)
        ss = np.random.SeedSequence(entropy=self.seed & _U64, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, *path: int) -> "Rng":
        if not path:
            raise ValidationError("derive needs at least one path component")
        return Rng(self.seed, self.spawn_key + tuple(int(p) for p in path))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size=size).astype(np.float64, copy=False)

    def normal(self, loc: float, scale: float, size) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size).astype(np.float64, copy=False)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def derive_seed(seed: int, *path: int) -> int:
    """A plain int seed derived from (seed, path); stable across processes."""
    ss = np.random.SeedSequence(entropy=int(seed) & _U64, spawn_key=tuple(int(p) & _U64 for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
