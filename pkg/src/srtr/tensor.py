"""Dense tensors with reverse-mode automatic differentiation.

Every array the model learns or differentiates through is a :class:`Tensor`.
Ops operate on the trailing axes so a leading batch axis rides along for
free; ``matmul`` follows ``numpy.matmul`` semantics.

Two precisions are supported:

* ``reference``: float64, BLAS pinned to one thread. Gradient checks and
  bit-reproducibility assertions run here.
* ``fast``: float32, BLAS left at its default thread count.
"""

from __future__ import annotations

import contextlib
import itertools
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError

_ids = itertools.count()

_MODE = "reference"
_DTYPE: type = np.float64
_blas_limiter = None


def _pin_blas(threads: int | None) -> None:
    global _blas_limiter
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return
    if _blas_limiter is not None:
        _blas_limiter.restore_original_limits()
        _blas_limiter = None
    if threads is not None:
        _blas_limiter = threadpool_limits(limits=threads, user_api="blas")


def set_mode(mode: str) -> None:
    """Switch between ``"reference"`` (float64, 1 BLAS thread) and ``"fast"``."""
    global _MODE, _DTYPE
    if mode == "reference":
        _DTYPE = np.float64
        _pin_blas(1)
    elif mode == "fast":
        _DTYPE = np.float32
        _pin_blas(None)
    else:
        raise ConfigError(f"unknown precision mode {mode!r}")
    _MODE = mode


def get_mode() -> str:
    return _MODE


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    previous = _MODE
    set_mode(mode)
    try:
        yield
    finally:
        set_mode(previous)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op; ``backward_fn(g)`` returns one grad per parent."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


custom_op = _node


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ----------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if not np.all(a.data > 0):
        raise NumericError("log of non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign so neither branch overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.data, b.data), (a, b), bw)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.data, b.data), (a, b), bw)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    keep = out == a.data
    return _node(out, (a,), lambda g: (g * keep,))


# ----------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(a, index) -> Tensor:
    """Slice or gather; repeated fancy indices accumulate in the backward pass."""
    a = as_tensor(a)
    out = a.data[index]

    basic = _is_basic(index)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out, copy=True) if np.ndim(out) else np.asarray(out), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(
                f"concat axis {axis} mismatch: {[t.shape for t in ts]}"
            )
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _node(np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw)


def split(a, parts: int, axis: int = -1) -> list[Tensor]:
    a = as_tensor(a)
    n = a.shape[axis]
    if n % parts:
        raise DimensionError(f"cannot split extent {n} into {parts} equal parts")
    w = n // parts
    idx = [slice(None)] * a.ndim
    out = []
    for i in range(parts):
        idx[axis % a.ndim] = slice(i * w, (i + 1) * w)
        out.append(getitem(a, tuple(idx)))
    return out


# ----------------------------------------------------------------------
# reductions and normalizers


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite input to {what}")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data, "softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_finite(a.data, "log_softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), bw)


def logsumexp(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """log-sum-exp along ``axis``; ``mask`` (bool, same shape) selects members.

    Rows with no selected member yield ``-inf`` and receive zero gradient.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    masked = np.where(mask, x, -np.inf)
    m = masked.max(axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(x - m_safe), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = np.log(s) + m_safe
    w = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def bw(g):
        return (np.expand_dims(g, axis) * w,)

    return _node(np.squeeze(out, axis=axis), (a,), bw)


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Unit-norm rows; all-zero rows map to zero with zero gradient."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    live = norm > eps
    inv = np.divide(1.0, norm, out=np.zeros_like(norm), where=live)
    out = a.data * inv

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) * inv,)

    return _node(out, (a,), bw)


def layer_norm(a, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    parents = [a]
    out = xhat
    w = b = None
    if weight is not None:
        w = as_tensor(weight)
        parents.append(w)
        out = out * w.data
    if bias is not None:
        b = as_tensor(bias)
        parents.append(b)
        out = out + b.data
    d = x.shape[-1]

    def bw(g):
        gx = g * w.data if w is not None else g
        gin = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                      - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        grads = [gin]
        if w is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0))
        if b is not None:
            grads.append(g.reshape(-1, d).sum(axis=0))
        return tuple(grads)

    return _node(out, tuple(parents), bw)


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ----------------------------------------------------------------------
# graph traversal


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: "ParamStore | None" = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    When ``params`` is given, all of its gradients are reset to zero first so
    parameters outside the graph end with an exact zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        params.zero_grad()
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg


# ----------------------------------------------------------------------
# parameters


class ParamStore:
    """Ordered name -> trainable Tensor mapping.

    Each parameter's initial values come from an RNG keyed on (seed, name),
    so adding a parameter never perturbs the others.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def rng_for(self, name: str) -> np.random.Generator:
        key = [self.seed] + [b for b in name.encode("utf-8")]
        return np.random.default_rng(key)

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=_DTYPE), requires_grad=trainable, name=name)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def xavier(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng_for(name).uniform(-bound, bound, (fan_in, fan_out)))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def normal(self, name: str, shape, std: float = 1.0) -> Tensor:
        return self.add(name, self.rng_for(name).normal(0.0, std, shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def trainable(self, name: str) -> bool:
        return self._trainable[name]

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ContractError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for k, t in self._params.items():
            if state[k].shape != t.shape:
                raise DimensionError(f"{k}: stored {state[k].shape} vs model {t.shape}")
            t.data = np.array(state[k], dtype=t.data.dtype)

    def astype(self, dtype) -> None:
        for t in self._params.values():
            t.data = t.data.astype(dtype)


class ParamScope:
    """Prefix view over a ParamStore; creation and lookup share the prefix."""

    def __init__(self, store: ParamStore, prefix: str):
        self.store = store
        self.prefix = prefix.rstrip(".") + "." if prefix else ""

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self.prefix + name]

    def __contains__(self, name: str) -> bool:
        return self.prefix + name in self.store

    def scope(self, sub: str) -> "ParamScope":
        return ParamScope(self.store, self.prefix + sub)

    def xavier(self, name, fan_in, fan_out):
        return self.store.xavier(self.prefix + name, fan_in, fan_out)

    def zeros(self, name, shape):
        return self.store.zeros(self.prefix + name, shape)

    def ones(self, name, shape):
        return self.store.ones(self.prefix + name, shape)

    def normal(self, name, shape, std=1.0):
        return self.store.normal(self.prefix + name, shape, std)

    def add(self, name, value, trainable=True):
        return self.store.add(self.prefix + name, value, trainable)


# ----------------------------------------------------------------------
# finite-difference checking


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor] | ParamStore,
    eps: float = 1e-5,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-5,
) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` must rebuild its graph from the current ``.data`` of ``params``.
    With ``max_probes`` set, that many coordinates per tensor are sampled;
    otherwise every coordinate is probed. Relative error uses the
    denominator ``max(|a|, |b|, floor)``: derivatives smaller than
    ``floor`` sit below what a float64 central difference can resolve on a
    loss of order ten, so they are compared on that absolute scale.
    """
    if isinstance(params, ParamStore):
        params = [t for _, t in params.items()]
    rng = rng or np.random.default_rng(0)

    first = fn()
    second = fn()
    if first.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    if not np.array_equal(first.data, second.data):
        raise ContractError("function is not deterministic across repeated evaluation")

    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(fn())
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_probes is None or max_probes >= n:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_probes, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(ga.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
