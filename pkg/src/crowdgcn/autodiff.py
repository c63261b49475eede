"""Dense float64 tensors with a reverse-mode gradient tape.

The engine is deliberately small: it supports exactly the operations the
trajectory model needs (batched matmul, 1-D convolution along one axis,
PReLU, exp/log/tanh, reductions, slicing, cumulative sums) plus a
finite-difference checker used to verify every gradient path.  All data is
row-major float64; forward values and backward contributions are checked
for NaN/Inf and raise :class:`NumericError` naming the offending op.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericError, ShapeError

_LOG_FLOOR = 1e-30


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode AD.

    ``requires_grad`` marks trainable leaves.  Interior nodes created by ops
    carry a backward closure and links to their parents; calling
    :meth:`backward` on a scalar accumulates gradients into every reachable
    trainable leaf's ``grad`` buffer (which makes multi-sample gradient
    accumulation a plain sequence of backward calls).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode pass from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise NumericError(f"backward() from non-finite value (op '{self.op}')")
        tape = _toposort(self)
        seed = {id(self): np.ones_like(self.data)}
        for node in tape:
            g = seed.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, contrib in node._backward(g):
                if not np.isfinite(contrib).all():
                    raise NumericError(f"non-finite gradient produced by op '{node.op}'")
                key = id(parent)
                if key in seed:
                    seed[key] += contrib
                else:
                    seed[key] = np.asarray(contrib, dtype=np.float64).copy()

    # Operator sugar used by loss construction.
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

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _toposort(root):
    """Tape in reverse topological order (root first), iteratively."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)

def _check_finite(data, op):
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by op '{op}'")
    return data


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data, op, parents, backward):
    needs = any(isinstance(p, Tensor) and (p.requires_grad or p._parents) for p in parents)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, op=op, _parents=parents, _backward=backward)


# ---------------------------------------------------------------------------
# Elementwise arithmetic (full numpy broadcasting, unbroadcast on the way back)

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(out, "add", (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(out, "sub", (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _make(out, "mul", (a, b), backward)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _check_finite(a.data / b.data, "div")

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return (
                (a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
            )

    return _make(out, "div", (a, b), backward)


# ---------------------------------------------------------------------------
# Matrix products

def matmul(a, b):
    """Matrix product ``a @ b``.

    Two supported layouts: weights on the right (``a: ...xMxK, b: KxP``) and
    batch-matching products (``a: BxMxK, b: BxKxP`` with equal leading dims).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if b.ndim == 2:
        out = a.data @ b.data

        def backward(g):
            ga = g @ b.data.T
            k, p = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, p)
            return ((a, ga), (b, gb))

        return _make(out, "matmul", (a, b), backward)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, ga), (b, gb))

    return _make(out, "matmul", (a, b), backward)


def conv_time(x, kernel, padding):
    """1-D convolution along the middle axis, independent per trailing column.

    ``x: C_in x T x F``, ``kernel: C_out x C_in x k`` with odd ``k``;
    ``padding = (k-1)//2`` preserves T.  Cross-correlation orientation.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv_time needs 3-D input and kernel, got {x.shape} x {kernel.shape}")
    c_out, c_in, k = kernel.shape
    if k % 2 == 0:
        raise ShapeError(f"conv_time kernel width must be odd, got {k}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv_time channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    t_out = xp.shape[1] - k + 1
    if t_out < 1:
        raise ShapeError(f"conv_time kernel {k} wider than padded length {xp.shape[1]}")
    out = np.zeros((c_out, t_out, x.shape[2]))
    for j in range(k):
        out += np.einsum("oc,ctf->otf", kernel.data[:, :, j], xp[:, j : j + t_out, :])

    def backward(g):
        gk = np.empty_like(kernel.data)
        gxp = np.zeros_like(xp)
        for j in range(k):
            window = xp[:, j : j + t_out, :]
            gk[:, :, j] = np.einsum("otf,ctf->oc", g, window)
            gxp[:, j : j + t_out, :] += np.einsum("oc,otf->ctf", kernel.data[:, :, j], g)
        t = x.shape[1]
        gx = gxp[:, padding : padding + t, :]
        return ((x, gx), (kernel, gk))

    return _make(out, "conv_time", (x, kernel), backward)


# ---------------------------------------------------------------------------
# Nonlinearities

def prelu(x, slope):
    """Elementwise ``x if x >= 0 else slope*x`` with a trainable scalar slope."""
    x, slope = _as_tensor(x), _as_tensor(slope)
    pos = x.data >= 0
    out = np.where(pos, x.data, slope.data * x.data)

    def backward(g):
        gx = g * np.where(pos, 1.0, slope.data)
        gs = _unbroadcast(g * np.where(pos, 0.0, x.data), slope.shape)
        return ((x, gx), (slope, gs))

    return _make(out, "prelu", (x, slope), backward)


def exp(x):
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = _check_finite(np.exp(x.data), "exp")

    def backward(g):
        return ((x, g * out),)

    return _make(out, "exp", (x,), backward)


def log(x):
    """Natural log with the argument clamped to at least 1e-30."""
    x = _as_tensor(x)
    clamped = np.maximum(x.data, _LOG_FLOOR)
    out = np.log(clamped)

    def backward(g):
        gx = np.where(x.data >= _LOG_FLOOR, g / clamped, 0.0)
        return ((x, gx),)

    return _make(out, "log", (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return ((x, g * (1.0 - out * out)),)

    return _make(out, "tanh", (x,), backward)


def clamp_min(x, floor):
    """max(x, floor); zero subgradient where the clamp is active."""
    x = _as_tensor(x)
    out = np.maximum(x.data, floor)

    def backward(g):
        return ((x, np.where(x.data >= floor, g, 0.0)),)

    return _make(out, "clamp_min", (x,), backward)


def softmax(x, axis=-1):
    """Max-shifted softmax along `axis` (shift leaves values unchanged)."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((x, out * (g - inner)),)

    return _make(out, "softmax", (x,), backward)


def eucnorm(x):
    """Euclidean norm over the last axis; subgradient 0 at exact zero."""
    x = _as_tensor(x)
    out = np.sqrt((x.data * x.data).sum(axis=-1))

    def backward(g):
        safe = np.where(out > 0.0, out, 1.0)
        gx = (g / safe)[..., None] * x.data
        gx = np.where(out[..., None] > 0.0, gx, 0.0)
        return ((x, gx),)

    return _make(out, "eucnorm", (x,), backward)


# ---------------------------------------------------------------------------
# Shape manipulation and reductions

def transpose(x, axes):
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        return ((x, np.transpose(g, inverse)),)

    return _make(out, "transpose", (x,), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        return ((x, g.reshape(x.shape)),)

    return _make(out, "reshape", (x,), backward)


def getitem(x, idx):
    x = _as_tensor(x)
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return _make(out, "getitem", (x,), backward)


def cumsum(x, axis):
    x = _as_tensor(x)
    out = np.cumsum(x.data, axis=axis)

    def backward(g):
        flipped = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return ((x, flipped),)

    return _make(out, "cumsum", (x,), backward)


def tensor_sum(x, axis=None):
    x = _as_tensor(x)
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.shape).copy()),)
        return ((x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()),)

    return _make(out, "sum", (x,), backward)


# ---------------------------------------------------------------------------
# Gradient collection and verification

def gradients(loss, params):
    """Zero the params' buffers, backprop from `loss`, return gradient copies.

    Parameters never touched by the tape come back as exact zeros.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss.backward()
    return [p.grad.copy() for p in params]


def finite_diff_check(f, params, h=1e-5):
    """Max relative error between backward() and central finite differences.

    ``f`` takes no arguments, reads the live ``params`` tensors, and returns
    a scalar Tensor.  Error metric per element:
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    grads = gradients(f(), params)
    max_err = 0.0
    for p, g_ad in zip(params, grads):
        flat = p.data.reshape(-1)
        g_flat = g_ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(g_flat[i] - g_fd) / max(1e-8, abs(g_flat[i]) + abs(g_fd))
            max_err = max(max_err, err)
    return max_err


# ---------------------------------------------------------------------------
# Random sampling

def sample_bivariate(mu, sigma, rho, rng):
    """Draw from a bivariate Gaussian via its 2x2 Cholesky factor.

    Broadcasts over leading dimensions: ``mu, sigma: (..., 2)``,
    ``rho: (...)``.  Deterministic for a fixed-seed `rng`.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if mu.shape[-1] != 2 or sigma.shape[-1] != 2:
        raise ShapeError(f"sample_bivariate needs (..., 2) mu/sigma, got {mu.shape}/{sigma.shape}")
    if not (sigma > 0).all():
        raise DomainError("sample_bivariate: sigma must be strictly positive")
    if not (np.abs(rho) < 1).all():
        raise DomainError("sample_bivariate: |rho| must be < 1")
    z1 = rng.standard_normal(rho.shape)
    z2 = rng.standard_normal(rho.shape)
    x = mu[..., 0] + sigma[..., 0] * z1
    y = mu[..., 1] + sigma[..., 1] * (rho * z1 + np.sqrt(1.0 - rho * rho) * z2)
    return np.stack([x, y], axis=-1)
