"""Reverse-mode automatic differentiation over float64 numpy arrays.

Tensors record their parents and a backward closure as they are produced,
forming an acyclic graph; ``backward`` walks it in reverse topological
order exactly once per node. Everything runs in f64 and every operation
checks its output for NaN/Inf.
"""

import numpy as np


def _finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None):
        return reduce_sum(self, axis=axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op: str, parents, backward_fn) -> Tensor:
    _finite(data, op)
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d tensor into .grad of every requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, "add", (a, b), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accumulate(a, -g)

    return _make(-a.data, "neg", (a,), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, "mul", (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul needs operands of rank >= 2, got {a.data.shape} @ {b.data.shape}"
        )
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}") from exc

    def back(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(data, "matmul", (a, b), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def back(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), "relu", (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    def back(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), "reshape", (a,), back)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, "sum", (a,), back)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / count, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg / count, a.data.shape).copy())

    return _make(data, "mean", (a,), back)


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient routes to the first argmax entry."""
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    data = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        _accumulate(a, full)

    return _make(data, "max", (a,), back)


# ---------------------------------------------------------------------------
# neural-network ops


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); x may carry leading batch dimensions."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def _same_padding(size: int, kernel: int, stride: int) -> tuple:
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2D convolution, NCHW layout, zero padding in 'same' mode.

    x: (B, C, H, W), w: (F, C, kh, kw), b: (F,).
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4D input and kernel, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}"
        )
    if padding not in ("same", "valid"):
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    batch, chans, height, width = x.data.shape
    filters, _, kh, kw = w.data.shape
    if padding == "same":
        ph = _same_padding(height, kh, stride)
        pw = _same_padding(width, kw, stride)
    else:
        ph = pw = (0, 0)
    xp = np.pad(x.data, ((0, 0), (0, 0), ph, pw))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {w.data.shape} larger than input {x.data.shape}")

    cols = np.empty((batch, chans, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols_mat = cols.reshape(batch, chans * kh * kw, ho * wo)
    w_mat = w.data.reshape(filters, chans * kh * kw)
    data = (w_mat @ cols_mat).reshape(batch, filters, ho, wo)
    if b is not None:
        data = data + b.data[None, :, None, None]

    def back(g):
        g_mat = g.reshape(batch, filters, ho * wo)
        if w.requires_grad:
            dw = np.einsum("bfo,bko->fk", g_mat, cols_mat).reshape(w.data.shape)
            _accumulate(w, dw)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (w_mat.T @ g_mat).reshape(batch, chans, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
            _accumulate(x, dxp[:, :, ph[0] : hp - ph[1], pw[0] : wp - pw[1]])

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, "conv2d", parents, back)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must be divisible by size."""
    batch, chans, height, width = x.data.shape
    if height % size or width % size:
        raise ValueError(f"maxpool2d size {size} does not divide input {x.data.shape}")
    ho, wo = height // size, width // size
    windows = x.data.reshape(batch, chans, ho, size, wo, size)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(batch, chans, ho, wo, size * size)
    idx = np.argmax(windows, axis=-1)
    data = np.take_along_axis(windows, idx[..., None], axis=-1).squeeze(-1)

    def back(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(batch, chans, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        _accumulate(x, dx.reshape(x.data.shape))

    return _make(data, "maxpool2d", (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    batch, chans, height, width = x.data.shape
    data = x.data.mean(axis=(2, 3))

    def back(g):
        _accumulate(x, np.broadcast_to(g[:, :, None, None] / (height * width), x.data.shape).copy())

    return _make(data, "global_avg_pool", (x,), back)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, exact identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def back(g):
        _accumulate(x, g * mask)

    return _make(x.data * mask, "dropout", (x,), back)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (B, C) logits against integer labels (B,)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {logits.data.shape}")
    batch, classes = logits.data.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError("label out of range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    losses = lse[:, 0] - z[np.arange(batch), labels]
    probs = np.exp(z - lse)

    def back(g):
        dz = probs.copy()
        dz[np.arange(batch), labels] -= 1.0
        _accumulate(logits, g * dz / batch)

    return _make(losses.mean(), "softmax_cross_entropy", (logits,), back)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain softmax on raw arrays (no graph), for reporting probabilities."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
