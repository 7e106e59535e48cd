"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and records, for every op, the parent tensors and a
vector-Jacobian product closure. Backward closures are themselves written in
terms of Tensor ops, so gradients can be differentiated again (grad-of-grad)
when ``create_graph=True`` is passed to :func:`grad`.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float64


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class default_dtype:
    """Context manager selecting the dtype new tensors are created with.

    float64 is the default everywhere; image-model training and sampling run
    under float32 for memory-bandwidth reasons. Ops derive their dtype from
    operands, so the switch only acts at Tensor construction boundaries.
    """

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)

    def __enter__(self):
        global _DEFAULT_DTYPE
        self._prev = _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self.dtype
        return self

    def __exit__(self, *exc):
        global _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self._prev
        return False


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=_DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- arithmetic -----------------------------------------------------------

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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def backward(self, out_grad=None) -> None:
        """Populate ``.grad`` on every requires_grad tensor in this graph."""
        if out_grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without out_grad needs a scalar")
            out_grad = Tensor(np.ones_like(self.data))
        nodes = _toposort(self)
        grads = _backward_pass(self, out_grad, set(nodes), create_graph=False)
        for node in nodes:
            if node.requires_grad and node in grads:
                g = grads[node]
                node.grad = g if node.grad is None else Tensor(node.grad.data + g.data)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- broadcasting helper -------------------------------------------------------


def _sum_to_shape(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return reshape(g, shape)


# -- elementwise ops -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(mul(g, -1.0), b.shape)

    return Tensor._make(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        return _sum_to_shape(mul(g, b), a.shape), _sum_to_shape(mul(g, a), b.shape)

    return Tensor._make(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        ga = div(g, b)
        gb = mul(mul(g, -1.0), div(a, mul(b, b)))
        return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

    return Tensor._make(a.data / b.data, (a, b), vjp)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    exponent = float(exponent)

    def vjp(g):
        return (mul(g, mul(exponent, power(a, exponent - 1.0))),)

    return Tensor._make(a.data**exponent, (a,), vjp)


def exp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)

    def vjp(g):
        # rebuild as a graph node only when a higher-order graph is being
        # taped; otherwise reuse the saved forward value
        e = exp(a) if _GRAD_ENABLED else Tensor(out_data)
        return (mul(g, e),)

    return Tensor._make(out_data, (a,), vjp)


def log(a) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        return (div(g, a),)

    return Tensor._make(np.log(a.data), (a,), vjp)


def sqrt(a) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        return (div(g, mul(2.0, sqrt(a))),)

    return Tensor._make(np.sqrt(a.data), (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out_data = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    out_data = np.where(a.data >= 0, out_data, 1.0 - out_data)

    def vjp(g):
        # rebuild as a graph node only when a higher-order graph is being
        # taped; otherwise reuse the saved forward value
        s = sigmoid(a) if _GRAD_ENABLED else Tensor(out_data)
        return (mul(g, mul(s, sub(1.0, s))),)

    return Tensor._make(out_data, (a,), vjp)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out_data = np.tanh(a.data)

    def vjp(g):
        t = tanh(a) if _GRAD_ENABLED else Tensor(out_data)
        return (mul(g, sub(1.0, mul(t, t))),)

    return Tensor._make(out_data, (a,), vjp)


def silu(a) -> Tensor:
    return mul(a, sigmoid(a))


# -- reductions and shape ops ---------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    out_data = a.data.sum(axis=axes if axis is not None else None, keepdims=keepdims)

    def vjp(g):
        if not keepdims and axes:
            kd_shape = list(a.shape)
            for ax in axes:
                kd_shape[ax] = 1
            g = reshape(g, tuple(kd_shape))
        return (broadcast_to(g, a.shape),)

    return Tensor._make(np.asarray(out_data), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        count = a.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = 1
        for ax in axis:
            count *= a.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def broadcast_to(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)

    def vjp(g):
        return (_sum_to_shape(g, a.shape),)

    return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)
    src_shape = a.shape

    def vjp(g):
        return (reshape(g, src_shape),)

    return Tensor._make(a.data.reshape(shape), (a,), vjp)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inverse),)

    return Tensor._make(np.transpose(a.data, axes), (a,), vjp)


def swap_last(a) -> Tensor:
    """Transpose the trailing two axes (batch dims untouched)."""
    a = _wrap(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g):
        return tuple(
            narrow(g, axis, int(offsets[i]), sizes[i]) for i in range(len(tensors))
        )

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp
    )


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    axis = axis % (tensors[0].ndim + 1)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _wrap(a)
    axis = axis % a.ndim
    index = tuple(
        slice(start, start + length) if i == axis else slice(None) for i in range(a.ndim)
    )
    src_shape = a.shape

    def vjp(g):
        return (pad_insert(g, axis, start, src_shape[axis]),)

    return Tensor._make(a.data[index].copy(), (a,), vjp)


def pad_insert(a, axis: int, start: int, total: int) -> Tensor:
    """Embed ``a`` into a zero tensor of size ``total`` along ``axis``."""
    a = _wrap(a)
    axis = axis % a.ndim
    length = a.shape[axis]
    out_shape = list(a.shape)
    out_shape[axis] = total
    out_data = np.zeros(out_shape, dtype=a.data.dtype)
    index = tuple(
        slice(start, start + length) if i == axis else slice(None) for i in range(a.ndim)
    )
    out_data[index] = a.data

    def vjp(g):
        return (narrow(g, axis, start, length),)

    return Tensor._make(out_data, (a,), vjp)


def getitem(a, key) -> Tensor:
    a = _wrap(a)
    if isinstance(key, np.ndarray) and key.dtype.kind in "iu":
        return gather_rows(a, key)
    out_data = a.data[key]
    src_shape = a.shape

    def vjp(g):
        return (_scatter_slice(g, key, src_shape),)

    return Tensor._make(np.ascontiguousarray(out_data), (a,), vjp)


def _scatter_slice(g, key, shape) -> Tensor:
    g = _wrap(g)
    out_data = np.zeros(shape, dtype=g.data.dtype)
    out_data[key] = g.data.reshape(out_data[key].shape)

    def vjp(gg):
        return (getitem(gg, key),)

    return Tensor._make(out_data, (g,), vjp)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0 by an integer index array."""
    a = _wrap(a)
    idx = np.asarray(idx)
    nrows = a.shape[0]

    def vjp(g):
        return (scatter_rows(g, idx, nrows),)

    return Tensor._make(a.data[idx], (a,), vjp)


def scatter_rows(g, idx: np.ndarray, nrows: int) -> Tensor:
    g = _wrap(g)
    out_data = np.zeros((nrows,) + g.shape[1:], dtype=g.data.dtype)
    np.add.at(out_data, idx, g.data)

    def vjp(gg):
        return (gather_rows(gg, idx),)

    return Tensor._make(out_data, (g,), vjp)


def pick(a, idx: np.ndarray) -> Tensor:
    """Per-row element selection: out[i] = a[i, idx[i]] for a 2D tensor."""
    a = _wrap(a)
    idx = np.asarray(idx)
    rows = np.arange(a.shape[0])
    ncols = a.shape[1]

    def vjp(g):
        return (unpick(g, idx, ncols),)

    return Tensor._make(a.data[rows, idx], (a,), vjp)


def unpick(g, idx: np.ndarray, ncols: int) -> Tensor:
    g = _wrap(g)
    rows = np.arange(g.shape[0])
    out_data = np.zeros((g.shape[0], ncols), dtype=g.data.dtype)
    out_data[rows, idx] = g.data

    def vjp(gg):
        return (pick(gg, idx),)

    return Tensor._make(out_data, (g,), vjp)


# -- linear algebra --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def vjp(g):
        ga = _sum_to_shape(matmul(g, swap_last(b)), a.shape)
        gb = _sum_to_shape(matmul(swap_last(a), g), b.shape)
        return ga, gb

    return Tensor._make(np.matmul(a.data, b.data), (a, b), vjp)


def inv(a) -> Tensor:
    a = _wrap(a)
    out_data = np.linalg.inv(a.data)

    def vjp(g):
        ainv = inv(a)
        return (mul(-1.0, matmul(matmul(swap_last(ainv), g), swap_last(ainv))),)

    return Tensor._make(out_data, (a,), vjp)


def logdet(a) -> Tensor:
    a = _wrap(a)
    sign, value = np.linalg.slogdet(a.data)
    if np.any(sign <= 0):
        raise np.linalg.LinAlgError("logdet requires a positive-definite matrix")
    out_shape = np.asarray(value).shape

    def vjp(g):
        gexp = reshape(g, out_shape + (1, 1))
        return (mul(gexp, swap_last(inv(a))),)

    return Tensor._make(np.asarray(value), (a,), vjp)


# -- spatial primitives (adjoint pairs) -------------------------------------------


def _conv_geometry(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def im2col(x, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Unfold (B,C,H,W) into (B, C*kh*kw, OH*OW) patches."""
    x = _wrap(x)
    b, c, h, w = x.shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sb, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    out_data = view.reshape(b, c * kh * kw, oh * ow)  # single gather copy
    geom = (h, w, kh, kw, stride, pad)

    def vjp(g):
        return (col2im(g, geom),)

    return Tensor._make(out_data, (x,), vjp)


def col2im(cols, geom) -> Tensor:
    """Adjoint of :func:`im2col`: fold (B, C*kh*kw, OH*OW) back to (B,C,H,W)."""
    cols = _wrap(cols)
    h, w, kh, kw, stride, pad = geom
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    b = cols.shape[0]
    c = cols.shape[1] // (kh * kw)
    g6 = cols.data.reshape(b, c, kh, kw, oh, ow)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g6[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]

    def vjp(g):
        return (im2col(g, kh, kw, stride, pad),)

    return Tensor._make(np.ascontiguousarray(out), (cols,), vjp)


def upsample2(x) -> Tensor:
    """Nearest-neighbor 2x upsampling on (B,C,H,W)."""
    x = _wrap(x)
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        return (sumpool2(g),)

    return Tensor._make(out_data, (x,), vjp)


def sumpool2(x) -> Tensor:
    """2x2 non-overlapping sum pooling, the adjoint of :func:`upsample2`."""
    x = _wrap(x)
    b, c, h, w = x.shape
    out_data = x.data.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

    def vjp(g):
        return (upsample2(g),)

    return Tensor._make(out_data, (x,), vjp)


# -- softmax family ---------------------------------------------------------------


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    # detached max shift: softmax is shift invariant so this is exact
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    z = sub(x, shift)
    return sub(z, log(tsum(exp(z), axis=axis, keepdims=True)))


def softmax(x, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    out = add(log(tsum(exp(sub(x, shift)), axis=axis, keepdims=True)), shift)
    if not keepdims:
        out_shape = list(x.shape)
        ax = axis % x.ndim
        out_shape.pop(ax)
        out = reshape(out, tuple(out_shape))
    return out


# -- graph traversal ---------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents before children


def _needed_set(order: list[Tensor], targets: set[int]) -> set[int]:
    """Nodes through which a gradient path from root to any target runs."""
    needed: set[int] = set()
    for node in order:  # parents first
        if id(node) in targets or any(id(p) in needed for p in node._parents):
            needed.add(id(node))
    return needed


def _backward_pass(root, out_grad, target_nodes, create_graph: bool):
    order = _toposort(root)
    targets = {id(t) for t in target_nodes}
    needed = _needed_set(order, targets)
    grads: dict[Tensor, Tensor] = {}
    if id(root) not in needed:
        return {}
    grads[root] = _wrap(out_grad)
    for node in reversed(order):  # children before parents
        g = grads.pop(node, None)
        if g is None or node._vjp is None or not any(id(p) in needed for p in node._parents):
            if g is not None and id(node) in targets:
                grads[node] = g
            continue
        keep = id(node) in targets
        if create_graph:
            parent_grads = node._vjp(g)
        else:
            with no_grad():
                parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or id(parent) not in needed:
                continue
            if parent in grads:
                grads[parent] = add(grads[parent], pg) if create_graph else Tensor(grads[parent].data + pg.data)
            else:
                grads[parent] = pg
        if keep:
            grads[node] = g
    return {n: g for n, g in grads.items() if id(n) in targets}


def grad(output: Tensor, inputs, out_grad=None, create_graph: bool = False):
    """Gradients of ``output`` w.r.t. ``inputs``; does not touch ``.grad``.

    Returns a list aligned with ``inputs``. Unreached inputs get zeros of the
    right shape. With ``create_graph=True`` the returned tensors carry their
    own graphs, so they can be differentiated again.
    """
    single = isinstance(inputs, Tensor)
    inputs_list = [inputs] if single else list(inputs)
    if out_grad is None:
        if output.data.size != 1:
            raise ValueError("grad() without out_grad needs a scalar output")
        out_grad = Tensor(np.ones_like(output.data))
    grads = _backward_pass(output, out_grad, set(inputs_list), create_graph)
    result = []
    for t in inputs_list:
        g = grads.get(t)
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        result.append(g)
    return result[0] if single else result
