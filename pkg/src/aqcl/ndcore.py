"""Dense float64 kernels with a small reverse-mode tape.

Every op takes :class:`Tensor` (or array-likes, treated as constants) and
returns a :class:`Tensor`. When a :class:`Tape` is active (``with tape:``) and
at least one input is tracked on it, the op records a node holding a
vector-Jacobian closure. :meth:`Tape.backward` walks the recorded nodes in
reverse creation order, which is a valid reverse topological order because a
node can only reference nodes created before it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "gather",
    "mean_pool",
    "concat",
    "reshape",
    "transpose",
    "expand_dims",
    "sum",
    "mean",
    "leaky_relu",
    "sigmoid",
    "log",
    "exp",
    "clip",
    "l2_normalize",
    "dot_rows",
    "softmax",
    "logsumexp",
    "stop_gradient",
]

NORM_GUARD = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {joined}")


class Tensor:
    __slots__ = ("data", "tape", "index", "parents", "vjp", "name")

    def __init__(self, data, *, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape: Tape | None = None
        self.index = -1
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    __add__ = lambda self, o: add(self, o)  # noqa: E731
    __radd__ = lambda self, o: add(o, self)  # noqa: E731
    __sub__ = lambda self, o: sub(self, o)  # noqa: E731
    __rsub__ = lambda self, o: sub(o, self)  # noqa: E731
    __mul__ = lambda self, o: mul(self, o)  # noqa: E731
    __rmul__ = lambda self, o: mul(o, self)  # noqa: E731
    __truediv__ = lambda self, o: div(self, o)  # noqa: E731
    __matmul__ = lambda self, o: matmul(self, o)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731


_ACTIVE: list["Tape"] = []


class Tape:
    """Records ops for one forward pass; single writer.

    Usage::

        tape = Tape()
        with tape:
            w = tape.watch(w0, "w")
            loss = sum(mul(w, w))
        grads = tape.backward(loss)   # {"w": 2 * w0}
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[str, Tensor] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def _record(self, t: Tensor) -> Tensor:
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append(t)
        return t

    def watch(self, data, name: str) -> Tensor:
        """Register a leaf whose gradient :meth:`backward` will report."""
        if name in self.leaves:
            raise KeyError(f"leaf {name!r} already watched on this tape")
        t = Tensor(np.array(data, dtype=np.float64), name=name)
        self._record(t)
        self.leaves[name] = t
        return t

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.data.size != 1:
            raise ShapeError("backward (loss must be scalar)", loss.shape)
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        out = {name: np.zeros_like(leaf.data) for name, leaf in self.leaves.items()}
        if loss.tape is not self:
            return out
        grads[loss.index] = np.ones_like(loss.data)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads[node.index]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or parent.tape is not self:
                    continue
                prev = grads[parent.index]
                grads[parent.index] = pg if prev is None else prev + pg
        for name, leaf in self.leaves.items():
            g = grads[leaf.index]
            if g is not None:
                out[name] = np.array(g, dtype=np.float64).reshape(leaf.shape)
        return out


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*ts: Tensor) -> "Tape | None":
    if not _ACTIVE:
        return None
    tape = _ACTIVE[-1]
    for t in ts:
        if t.tape is tape:
            return tape
    return None


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    tape = _tracked(*parents)
    if tape is not None:
        out.parents = parents
        out.vjp = vjp
        tape._record(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a) -> Tensor:
    a = constant(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = constant(a)
    d = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * d, (a,), lambda g: (g * d,))


def sigmoid(a) -> Tensor:
    a = constant(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = constant(a)
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def exp(a) -> Tensor:
    a = constant(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the adjoint is passed only where ``lo < x < hi``."""
    a = constant(a)
    x = a.data
    inside = (x > lo) & (x < hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def stop_gradient(a) -> Tensor:
    """Forward identity; nothing flows back to ``a``."""
    return Tensor(constant(a).data.copy())


# ----------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D ``a``/``b`` or batched 3-D ``a`` with 2-D ``b``."""
    a, b = constant(a), constant(b)
    if a.data.ndim not in (2, 3) or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), vjp)


def gather(table, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer index array of any shape."""
    table = constant(table)
    idx = np.asarray(idx, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError("gather", table.shape, idx.shape)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather: index out of range for table with {n} rows")
    shape = table.shape

    def vjp(g):
        # segment sums over sorted indices; much faster than np.add.at
        flat = idx.reshape(-1)
        order = np.argsort(flat, kind="stable")
        rows, starts = np.unique(flat[order], return_index=True)
        out = np.zeros(shape)
        if len(rows):
            out[rows] = np.add.reduceat(g.reshape(-1, shape[1])[order], starts, axis=0)
        return (out,)

    return _make(table.data[idx], (table,), vjp)


def mean_pool(x, mask) -> Tensor:
    """Masked mean over axis 1 of a ``B x L x D`` tensor; all-masked rows give zeros."""
    x = constant(x)
    mask = np.asarray(mask, dtype=np.float64)
    if x.data.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError("mean_pool", x.shape, mask.shape)
    count = mask.sum(axis=1, keepdims=True)
    w = mask / np.maximum(count, 1.0)
    return _make(
        np.einsum("bl,bld->bd", w, x.data), (x,), lambda g: (w[:, :, None] * g[:, None, :],)
    )


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = tuple(constant(p) for p in parts)
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(p.shape for p in parts)) from None
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(data, parts, vjp)


def reshape(a, shape) -> Tensor:
    a = constant(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return _make(data, (a,), lambda g: (g.reshape(src),))


def transpose(a) -> Tensor:
    a = constant(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def expand_dims(a, axis: int) -> Tensor:
    a = constant(a)
    src = a.shape
    return _make(np.expand_dims(a.data, axis), (a,), lambda g: (g.reshape(src),))


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = constant(a)
    src = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- composites
# These have hand-written adjoints for numerical stability; each is checked
# against finite differences in the test suite.


def l2_normalize(a, axis: int = -1) -> Tensor:
    """``x / (||x|| + 1e-12)`` along ``axis``."""
    a = constant(a)
    x = a.data
    r = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    d = r + NORM_GUARD
    y = x / d

    def vjp(g):
        # d/dx [x / (r + c)] = I/d - x x^T / (r d^2)
        proj = np.sum(g * x, axis=axis, keepdims=True)
        safe_r = np.where(r > 0, r, 1.0)
        return (g / d - x * proj / (safe_r * d * d),)

    return _make(y, (a,), vjp)


def dot_rows(a, b) -> Tensor:
    """Row-wise dot product of two ``B x D`` tensors, giving ``B``."""
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError("dot_rows", a.shape, b.shape)
    return sum(mul(a, b), axis=-1)


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is 0 get probability 0."""
    a = constant(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    z = np.sum(e, axis=axis, keepdims=True)
    s = e / np.where(z > 0, z, 1.0)

    def vjp(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make(s, (a,), vjp)


def logsumexp(a, axis: int = -1, mask=None) -> Tensor:
    """``log(sum(exp(a)))`` along ``axis``, reduced, over entries where ``mask`` is 1."""
    a = constant(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("logsumexp: a reduction has no unmasked entries")
    e = np.exp(x - m)
    z = np.sum(e, axis=axis, keepdims=True)
    out = (np.log(z) + m).squeeze(axis)
    s = e / z

    def vjp(g):
        return (np.expand_dims(g, axis) * s,)

    return _make(out, (a,), vjp)
