"""Small dense tensor engine with reverse-mode differentiation.

Storage is a numpy array (float64 unless the caller hands in float32).
Every op:

* checks its output for NaN/Inf and raises ``FloatingPointError`` naming the op,
* appends its name to any active :func:`record_ops` trace,
* adds its scalar multiply-accumulates to the global :data:`counter`
  (forward pass only; backward work is not counted).

The autograd graph is a tape that lives from the forward pass until the
first :meth:`Tensor.backward` call on it; a consumed tape cannot be replayed.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

# GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
GELU_C = 0.7978845608028654
GELU_A = 0.044715

INIT_SCALE = 1.0  # weights ~ U(-INIT_SCALE/sqrt(fan_in), +INIT_SCALE/sqrt(fan_in))


class OpCounter:
    """Counts scalar multiply-accumulates issued by matmul/conv/linear paths."""

    LIMIT = 2**63 - 1

    def __init__(self) -> None:
        self.mult_adds = 0

    def add(self, n: int) -> None:
        self.mult_adds += int(n)
        if self.mult_adds > self.LIMIT:
            raise OverflowError("mult-add counter exceeded 2**63 - 1")

    def reset(self) -> None:
        self.mult_adds = 0


counter = OpCounter()

_traces: list[list[str]] = []
_grad_enabled = True


@contextmanager
def record_ops() -> Iterator[list[str]]:
    """Collect the names of every op executed inside the block."""
    ops: list[str] = []
    _traces.append(ops)
    try:
        yield ops
    finally:
        _traces.remove(ops)


@contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Rng:
    """Seeded PCG64 stream; numpy guarantees its bit stream across platforms."""

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def init_uniform(rng: Rng, shape, fan_in: int, scale: float = INIT_SCALE) -> "Tensor":
    """Centered uniform init, bound ``scale / sqrt(fan_in)``.

    Values are rounded through float32 so that a fresh parameter set survives
    a float32 checkpoint round-trip unchanged.
    """
    bound = scale / np.sqrt(fan_in)
    data = rng.uniform(shape, -bound, bound).astype(np.float32).astype(np.float64)
    return Tensor(data, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._leaf = True
        self._freed = False
        self.op = "leaf"

    # -- bookkeeping -------------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op}: produced a non-finite value")
        for ops in _traces:
            ops.append(op)
        out = Tensor(data)
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._leaf = False
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` on every requires_grad leaf upstream of this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._freed:
            raise RuntimeError("backward() called twice on the same graph; its tape was already freed")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor with requires_grad=True")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._leaf:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if node._freed:
                raise RuntimeError(f"graph through op '{node.op}' was already freed by an earlier backward()")
            if g is not None:
                for p, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not p.requires_grad:
                        continue
                    key = id(p)
                    grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None
            node._freed = True

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; divide by a scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def swap_last(self):
        return swap_last(self)

    def abs(self):
        return tabs(self)


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,), "scale")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.data.dtype)
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form keeps the op exp-free and overflow-free
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def gelu(a: Tensor) -> Tensor:
    x = a.data
    u = GELU_C * (x + GELU_A * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du),)

    return Tensor._make(out, (a,), backward, "gelu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (a,), backward, "softmax")


# -- reductions and shape ------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(ax % a.ndim for ax in axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                        lambda g: (g.transpose(inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(a.data[idx]), (a,), backward, "getitem")


def index_select(a: Tensor, axis: int, index: np.ndarray) -> Tensor:
    """Gather along one axis with an integer index array (repeats allowed)."""
    axis = axis % a.ndim
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._make(np.take(a.data, index, axis=axis), (a,), backward, "index_select")


def take_last(table: Tensor, index: np.ndarray) -> Tensor:
    """``out[..., *I] = table[..., index[*I]]`` for an integer index array."""
    index = np.asarray(index, dtype=np.int64)
    shape = table.shape
    lead = shape[:-1]

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        g2 = g.reshape(lead + (-1,))
        flat = index.reshape(-1)
        moved = np.moveaxis(full, -1, 0)
        np.add.at(moved, flat, np.moveaxis(g2, -1, 0))
        return (full,)

    return Tensor._make(table.data[..., index], (table,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def pad_reflect(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the last two axes at the bottom/right edge."""
    if pad_h:
        x = index_select(x, -2, _reflect_index(x.shape[-2], pad_h))
    if pad_w:
        x = index_select(x, -1, _reflect_index(x.shape[-1], pad_w))
    return x


def _reflect_index(n: int, pad: int) -> np.ndarray:
    if n == 1:
        return np.zeros(n + pad, dtype=np.int64)
    return np.pad(np.arange(n), (0, pad), mode="reflect")


# -- contractions --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    m, k = a.shape[-2:]
    k2, n = b.shape[-2:]
    if k != k2:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape} ({k} != {k2})")
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    counter.add(int(np.prod(batch, dtype=np.int64)) * m * k * n)
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` with weight stored as [in, out]."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, x.shape[-1])), weight)
    y = reshape(y, lead + (weight.shape[1],))
    return y if bias is None else add(y, bias)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, pad: int | None = None,
           groups: int = 1) -> Tensor:
    """Zero-padded stride-1 cross-correlation.

    x: [..., C_in, H, W]; w: [C_out, C_in/groups, k, k]. ``pad`` defaults to
    (k-1)/2 which keeps the spatial size.
    """
    c_out, c_in_g, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    c_in = x.shape[-3]
    if c_in % groups or c_out % groups or c_in // groups != c_in_g:
        raise ValueError(f"conv2d: input has {c_in} channels but weight expects {c_in_g * groups} "
                         f"(groups={groups})")
    k = kh
    pad = (k - 1) // 2 if pad is None else pad
    lead = x.shape[:-3]
    H, W = x.shape[-2:]
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    b = int(np.prod(lead, dtype=np.int64))
    counter.add(b * c_out * c_in_g * k * k * Ho * Wo)

    G, co_g = groups, c_out // groups
    xd = x.data.reshape((b, G, c_in_g, H, W))
    xp = np.pad(xd, ((0, 0), (0, 0), (0, 0), (pad, pad), (pad, pad)))
    wd = w.data.reshape((G, co_g, c_in_g, k, k))
    out = np.zeros((b, G, co_g, Ho, Wo), dtype=np.result_type(xd, wd))
    for i in range(k):
        for j in range(k):
            out += np.einsum("goc,bgchw->bgohw", wd[..., i, j], xp[..., i:i + Ho, j:j + Wo])
    out = out.reshape(lead + (c_out, Ho, Wo))
    parents: tuple[Tensor, ...] = (x, w)
    if bias is not None:
        out = out + bias.data.reshape((c_out, 1, 1))
        parents = (x, w, bias)

    def backward(g):
        gd = g.reshape((b, G, co_g, Ho, Wo))
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for i in range(k):
            for j in range(k):
                gxp[..., i:i + Ho, j:j + Wo] += np.einsum("goc,bgohw->bgchw", wd[..., i, j], gd)
                gw[..., i, j] = np.einsum("bgohw,bgchw->goc", gd, xp[..., i:i + Ho, j:j + Wo])
        gx = gxp[..., pad:pad + H, pad:pad + W].reshape(x.shape)
        grads = [gx, gw.reshape(w.shape)]
        if bias is not None:
            grads.append(g.reshape((b, c_out, Ho * Wo)).sum(axis=(0, 2)))
        return grads

    return Tensor._make(out, parents, backward, "conv2d")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by gamma and shift by beta."""
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"layer_norm: expected gamma/beta of shape ({C},), got {gamma.shape}/{beta.shape}")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return Tensor._make(out, (x, gamma, beta), backward, "layer_norm")


# -- rearrangements ------------------------------------------------------------


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """[..., C*s*s, H, W] -> [..., C, s*H, s*W]; channel c*s*s + i*s + j lands at (i, j)."""
    cs, H, W = x.shape[-3:]
    if cs % (s * s):
        raise ValueError(f"pixel_shuffle: {cs} channels not divisible by {s}^2")
    if s == 1:
        return x
    lead = x.shape[:-3]
    C = cs // (s * s)
    n = len(lead)
    y = reshape(x, lead + (C, s, s, H, W))
    y = transpose(y, tuple(range(n)) + (n, n + 3, n + 1, n + 4, n + 2))
    return reshape(y, lead + (C, H * s, W * s))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    C, Hs, Ws = x.shape[-3:]
    if Hs % s or Ws % s:
        raise ValueError(f"pixel_unshuffle: spatial size {Hs}x{Ws} not divisible by {s}")
    if s == 1:
        return x
    lead = x.shape[:-3]
    n = len(lead)
    H, W = Hs // s, Ws // s
    y = reshape(x, lead + (C, H, s, W, s))
    y = transpose(y, tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3))
    return reshape(y, lead + (C * s * s, H, W))


# -- gradient checking ---------------------------------------------------------


def grad_check(f: Callable, x: Tensor | Sequence[Tensor], h: float = 1e-6,
               max_coords: int | None = None, rng: Rng | None = None) -> float:
    """Max relative error between backward() and central finite differences.

    ``f`` is called with ``x`` and must return a scalar Tensor. When ``x`` is
    a list, every tensor in it is checked. ``max_coords`` limits the check to
    a seeded random subset of coordinates per tensor.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        loss = f(x)
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("grad_check: f(x) is not finite")
        loss.backward()
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]
        rng = rng or Rng(0)
        worst = 0.0
        with no_grad():
            for t, a in zip(xs, analytic):
                t.data = np.ascontiguousarray(t.data)
                flat = t.data.reshape(-1)
                coords = np.arange(flat.size)
                if max_coords is not None and flat.size > max_coords:
                    coords = np.sort(rng._gen.choice(flat.size, max_coords, replace=False))
                af = a.reshape(-1)
                for i in coords:
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = f(x).item()
                    flat[i] = orig - h
                    fm = f(x).item()
                    flat[i] = orig
                    num = (fp - fm) / (2.0 * h)
                    err = abs(af[i] - num) / max(abs(af[i]), abs(num), 1e-8)
                    worst = max(worst, err)
        return worst
    finally:
        for t, (rg, g) in zip(xs, saved):
            t.requires_grad = rg
            t.grad = g
