"""Array-valued reverse-mode differentiation over an explicit tape.

Every differentiable op records a node on the active :class:`Tape` with a
closure that maps the output gradient to parent gradients. Nodes are replayed
in reverse creation order, which is always a valid topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class Tensor:
    """A float64 array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__}{label} shape={self.shape}>"

    def item(self) -> float:
        return float(self.value.reshape(()))

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: ``g`` may be shared with sibling parents
        self.grad = g if self.grad is None else self.grad + g

    # Operator sugar, kept to what the models actually use.
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Param(Tensor):
    """Leaf tensor owned by a model. Frozen params never receive gradient."""

    __slots__ = ("_frozen",)

    def __init__(self, value, name: str = "", frozen: bool = False):
        super().__init__(value, requires_grad=not frozen, name=name)
        self._frozen = frozen
        self.grad = np.zeros_like(self.value)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, flag: bool) -> None:
        self._frozen = bool(flag)
        self.requires_grad = not self._frozen
        self.grad[...] = 0.0

    def _accumulate(self, g: np.ndarray) -> None:
        if not self._frozen:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records differentiable ops while active; ``backward`` replays them."""

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._active[-1] if cls._active else None

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if loss.value.size != 1:
                raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.value)
        loss._accumulate(seed)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is not None and parent.requires_grad:
                    parent._accumulate(g)
            # intermediate grads are no longer needed once propagated
            node.grad = None
        self.nodes.clear()


@contextlib.contextmanager
def no_tape():
    """Evaluate without recording, even inside an enclosing tape."""
    saved = Tape._active[:]
    Tape._active.clear()
    try:
        yield
    finally:
        Tape._active.extend(saved)


def _node(value: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(value)
    tape = Tape.current()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ----------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value

    def backward(g):
        ga = _unbroadcast(g * bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(av * bv, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.value * c, (a,), lambda g: (g * c,))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    v = x.value
    k = np.sqrt(2.0 / np.pi)
    v2 = v * v
    t = v2 * 0.044715
    t += 1.0
    t *= v
    t *= k
    np.tanh(t, out=t)
    out = t + 1.0
    out *= v
    out *= 0.5

    def backward(g):
        d = v2 * (3 * 0.044715 * k)
        d += k
        d *= 1.0 - t * t
        d *= v
        d += 1.0 + t
        d *= 0.5
        d *= g
        return (d,)

    return _node(out, (x,), backward)


# ----------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward)


def repeat_cols(x: Tensor, times: int) -> Tensor:
    """Repeat each entry of the last axis ``times`` times: (..., K) -> (..., K*times)."""
    shape = x.shape

    def backward(g):
        return (g.reshape(*shape, times).sum(axis=-1),)

    return _node(np.repeat(x.value, times, axis=-1), (x,), backward)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table: out[...] = table[ids[...]]."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]

    def backward(g):
        flat = g.reshape(-1, g.shape[-1])
        out = np.zeros_like(table.value)
        np.add.at(out, ids.reshape(-1), flat)
        return (out,)

    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"row id out of range for table with {n} rows")
    return _node(table.value[ids], (table,), backward)


def scatter_rows(base: Tensor, index: tuple[np.ndarray, ...], rows: Tensor) -> Tensor:
    """Copy of ``base`` with ``base[index] = rows`` (index selects leading axes)."""
    out = base.value.copy()
    out[index] = rows.value

    def backward(g):
        gb = None
        if base.requires_grad:
            gb = g.copy()
            gb[index] = 0.0
        return gb, g[index]

    return _node(out, (base, rows), backward)


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")

    def backward(g):
        ga = _unbroadcast(g @ _swap(bv), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(av) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(av @ bv, (a, b), backward)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """Apply ``w`` (d_out x d_in) to the last axis of ``x``: returns x @ w.T."""
    xv, wv = x.value, w.value
    if xv.shape[-1] != wv.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {xv.shape} vs weight {wv.shape}")
    lead = xv.shape[:-1]

    def backward(g):
        gx = g @ wv if x.requires_grad else None
        gw = None
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = g2.T @ xv.reshape(-1, xv.shape[-1])
        return gx, gw

    out = (xv.reshape(-1, xv.shape[-1]) @ wv.T).reshape(*lead, wv.shape[0])
    return _node(out, (x, w), backward)


# ----------------------------------------------------------------------------
# normalisation and attention


def softmax_rows(m: Tensor, temperature: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``m / temperature``, max-shifted for stability."""
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    z = m.value / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return ((p * (g - dot)) / temperature,)

    return _node(p, (m,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def backward(g):
        gx = gg = gb = None
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, xv.shape[-1]).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, xv.shape[-1]).sum(axis=0)
        if x.requires_grad:
            gh = g * gain.value
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _node(out, (x, gain, bias), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, allowed: np.ndarray) -> Tensor:
    """Scaled dot-product attention on (B, H, T, dh) inputs.

    ``allowed`` broadcasts to (B, H, T, T); every query row must allow at least
    one key.
    """
    qv, kv, vv = q.value, k.value, v.value
    s = 1.0 / np.sqrt(qv.shape[-1])
    logits = (qv @ _swap(kv)) * s
    logits = np.where(allowed, logits, -np.inf)
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ vv

    def backward(g):
        gv = _swap(p) @ g
        gp = g @ _swap(vv)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * s
        gq = gs @ kv if q.requires_grad else None
        gk = _swap(gs) @ qv if k.requires_grad else None
        return gq, gk, gv

    return _node(out, (q, k, v), backward)


# ----------------------------------------------------------------------------
# reductions and losses


class UndefinedLossError(ValueError):
    pass


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _node(np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    shape, n = x.shape, x.value.size
    return _node(np.asarray(x.value.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def cross_entropy(logits: Tensor, targets, ignore_id: int = -100) -> Tensor:
    """Mean negative log-likelihood over positions whose target is not ``ignore_id``.

    ``logits`` has shape (..., V); ``targets`` has the leading shape.
    """
    lv = logits.value
    V = lv.shape[-1]
    flat = lv.reshape(-1, V)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise DimensionError(f"targets length {t.shape[0]} != logit rows {flat.shape[0]}")
    keep = t != ignore_id
    n = int(keep.sum())
    if n == 0:
        raise UndefinedLossError("every target position is ignored; loss is undefined")
    if np.any(t[keep] >= V) or np.any(t[keep] < 0):
        raise IndexError(f"target id outside vocabulary of size {V}")
    rows = np.nonzero(keep)[0]
    sel = flat[rows]
    mx = sel.max(axis=-1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(sel - mx).sum(axis=-1))
    picked = sel[np.arange(n), t[rows]]
    loss = float((lse - picked).mean())

    def backward(g):
        p = np.exp(sel - lse[:, None])
        p[np.arange(n), t[rows]] -= 1.0
        out = np.zeros_like(flat)
        out[rows] = p * (float(g) / n)
        return (out.reshape(lv.shape),)

    return _node(np.asarray(loss), (logits,), backward)


def parameters_finite(params: Iterable[Param]) -> bool:
    return all(np.isfinite(p.value).all() for p in params)
