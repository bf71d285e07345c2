"""Minimal reverse-mode autodiff engine over dense numpy arrays.

Only the primitives the SIRM forward pass needs: matmul, 1-D convolution,
elementwise nonlinearities, pooling, concatenation, gradient reversal, and
the two loss heads. Graphs are built implicitly through parent links and
torn down with each forward pass; backward() walks a fresh topological
order every time.
"""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class SequenceTooShortError(ShapeError):
    """Input sequence shorter than the convolution window under valid padding."""


class EmptyPoolError(ValueError):
    """mask_count pooling received a mask with no valid rows."""


_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """Dense n-dimensional real array with an optional gradient slot.

    data is stored flat-compatible (row-major numpy array). Tensors created
    by ops carry parent links and a backward rule; leaves carry neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _from_op(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(parents)
    out._backward = backward if out.requires_grad else None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Graph:
    """Topologically ordered list of tensors reachable from a root."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
        stack = [(root, iter(root._parents))]
        seen.add(id(root))
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                order.append(node)
        return cls(order)


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    graph = Graph.trace(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _from_op(out_data, (a, b), bwd)


def conv1d(x, w, b, padding="valid"):
    """1-D convolution over the sequence axis, full width over features.

    x: (L, d_in); w: (h, d_in, d_out); b: (d_out,).
    valid: output length L-h+1. same_zero: zero-padded so output length is L.
    """
    if w.data.ndim != 3:
        raise ShapeError(f"conv1d weight must be rank 3, got {w.data.shape}")
    h, d_in, d_out = w.data.shape
    if x.data.ndim != 2 or x.data.shape[1] != d_in:
        raise ShapeError(f"conv1d input {x.data.shape} incompatible with weight {w.data.shape}")
    L = x.data.shape[0]
    if padding == "valid":
        if L < h:
            raise SequenceTooShortError(f"sequence length {L} shorter than window {h}")
        pad_l = pad_r = 0
        xp = x.data
    elif padding == "same_zero":
        pad_l = h // 2
        pad_r = h - 1 - pad_l
        xp = np.pad(x.data, ((pad_l, pad_r), (0, 0)))
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    l_out = xp.shape[0] - h + 1
    cols = np.concatenate([xp[j:j + l_out] for j in range(h)], axis=1)
    w2 = w.data.reshape(h * d_in, d_out)
    out_data = cols @ w2 + b.data

    def bwd(g):
        if x.requires_grad:
            dcols = g @ w2.T
            dxp = np.zeros_like(xp)
            for j in range(h):
                dxp[j:j + l_out] += dcols[:, j * d_in:(j + 1) * d_in]
            _accum(x, dxp[pad_l:pad_l + L])
        if w.requires_grad:
            _accum(w, (cols.T @ g).reshape(h, d_in, d_out))
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    return _from_op(out_data, (x, w, b), bwd)


def relu(x):
    out_data = np.maximum(x.data, 0)

    def bwd(g):
        _accum(x, g * (x.data > 0))

    return _from_op(out_data, (x,), bwd)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return _from_op(out_data, (x,), bwd)


def softmax_lastaxis(x):
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(x, (g - dot) * out_data)

    return _from_op(out_data, (x,), bwd)


def mean_pool(x, mask=None, denominator="fixed_L"):
    """Per-feature mean over rows of a (L, d) tensor.

    fixed_L divides by L regardless of the mask; mask_count divides by the
    number of valid rows. Masked-out rows never contribute to the sum.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"mean_pool expects rank 2, got {x.data.shape}")
    L = x.data.shape[0]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (L,):
            raise ShapeError(f"mask shape {mask.shape} does not match {L} rows")
    if denominator == "fixed_L":
        denom = float(L)
    elif denominator == "mask_count":
        count = int(mask.sum()) if mask is not None else L
        if count == 0:
            raise EmptyPoolError("mask_count pooling with all-false mask")
        denom = float(count)
    else:
        raise ValueError(f"unknown denominator mode {denominator!r}")
    rows = x.data if mask is None else x.data * mask[:, None]
    out_data = rows.sum(axis=0) / denom

    def bwd(g):
        dx = np.repeat(g[None, :] / denom, L, axis=0)
        if mask is not None:
            dx = dx * mask[:, None]
        _accum(x, dx)

    return _from_op(out_data, (x,), bwd)


def concat_lastaxis(parts):
    parts = list(parts)
    lead = parts[0].data.shape[:-1]
    for p in parts[1:]:
        if p.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat leading-shape mismatch: {parts[0].data.shape} vs {p.data.shape}")
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            _accum(p, g[..., off:off + w])
            off += w

    return _from_op(out_data, parts, bwd)


def grad_reverse(x, scale_factor):
    """Identity forward; backward multiplies the incoming gradient by -scale."""
    if scale_factor < 0:
        raise ValueError(f"grad_reverse scale must be >= 0, got {scale_factor}")
    out_data = x.data.copy()

    def bwd(g):
        _accum(x, -scale_factor * g)

    return _from_op(out_data, (x,), bwd)


def add(a, b):
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def _reduce(g, target):
        if target.data.size == 1 and g.size != 1:
            return g.sum().reshape(target.data.shape)
        return g

    def bwd(g):
        _accum(a, _reduce(g, a))
        _accum(b, _reduce(g, b))

    return _from_op(out_data, (a, b), bwd)


def add_bias(x, b):
    """Add a (d,) bias row to every row of a (L, d) tensor."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_bias shapes: {x.data.shape} + {b.data.shape}")
    out_data = x.data + b.data

    def bwd(g):
        _accum(x, g)
        _accum(b, g.sum(axis=0))

    return _from_op(out_data, (x, b), bwd)


def scale(x, s):
    out_data = x.data * s

    def bwd(g):
        _accum(x, g * s)

    return _from_op(out_data, (x,), bwd)


def sum_all(x):
    out_data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def bwd(g):
        _accum(x, np.full_like(x.data, g.item()))

    return _from_op(out_data, (x,), bwd)


def reshape(x, shape):
    out_data = x.data.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _from_op(out_data, (x,), bwd)


def slice_rows(x, start, stop):
    if x.data.ndim != 2:
        raise ShapeError(f"slice_rows expects rank 2, got {x.data.shape}")
    out_data = x.data[start:stop].copy()

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[start:stop] = g
        _accum(x, dx)

    return _from_op(out_data, (x,), bwd)


def stack_rows(parts):
    """Stack (d,) vectors into an (m, d) matrix."""
    parts = list(parts)
    out_data = np.stack([p.data for p in parts], axis=0)

    def bwd(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _from_op(out_data, parts, bwd)


def vstack(parts):
    """Concatenate (Lᵢ, d) matrices along the row axis."""
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=0)
    lengths = [p.data.shape[0] for p in parts]

    def bwd(g):
        off = 0
        for p, L in zip(parts, lengths):
            _accum(p, g[off:off + L])
            off += L

    return _from_op(out_data, parts, bwd)


def repeat_row(v, L):
    """Broadcast a (d,) vector to (L, d); backward sums over rows."""
    out_data = np.repeat(v.data[None, :], L, axis=0)

    def bwd(g):
        _accum(v, g.sum(axis=0))

    return _from_op(out_data, (v,), bwd)


def embedding_lookup(table, ids):
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    V = table.data.shape[0]
    if ids.size and (ids.max() >= V or ids.min() < 0):
        raise IndexError(f"token id out of range for vocabulary of size {V}")
    out_data = table.data[ids].copy()

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _from_op(out_data, (table,), bwd)


_EPS_PROB = 1e-7


def bce_loss(p, y):
    """Binary cross entropy of a scalar probability against a 0/1 label.

    p is clamped to [1e-7, 1-1e-7] before the log so exact 0/1 stay finite.
    """
    if p.data.size != 1:
        raise ShapeError(f"bce_loss expects a scalar probability, got {p.data.shape}")
    y = int(y)
    pc = float(np.clip(p.data, _EPS_PROB, 1.0 - _EPS_PROB))
    val = -(y * np.log(pc) + (1 - y) * np.log(1.0 - pc))
    out_data = np.asarray(val, dtype=p.data.dtype)

    def bwd(g):
        dp = (pc - y) / (pc * (1.0 - pc))
        _accum(p, np.full_like(p.data, g.item() * dp))

    return _from_op(out_data, (p,), bwd)


def nll_loss(probs, y):
    """Negative log likelihood of class y under a probability vector."""
    if probs.data.ndim != 1:
        raise ShapeError(f"nll_loss expects a rank-1 probability vector, got {probs.data.shape}")
    y = int(y)
    py = float(np.clip(probs.data[y], _EPS_PROB, None))
    out_data = np.asarray(-np.log(py), dtype=probs.data.dtype)

    def bwd(g):
        dp = np.zeros_like(probs.data)
        dp[y] = -g.item() / py
        _accum(probs, dp)

    return _from_op(out_data, (probs,), bwd)


def finite_diff_check(f, x, eps=1e-5):
    """Max relative error between f's analytic gradient at x and central differences.

    f must be a deterministic scalar-valued function of x rebuilding its
    graph on every call. x's data is perturbed in place and restored.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).data.item()
        flat[i] = orig - eps
        fm = f(x).data.item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    a = analytic.reshape(-1).astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
