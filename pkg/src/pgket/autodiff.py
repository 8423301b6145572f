"""A small reverse-mode autodiff tape over numpy arrays.

Only the operations the encoder needs are provided.  Each op records its
parents and a closure mapping the output adjoint to parent adjoints.
"""
from __future__ import annotations

import numpy as np

from . import kernel as _kernel
from .errors import PgketError, ShapeError
from .numerics import MASK_SENTINEL


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def backward(self, grad=None):
        """Fill ``.grad`` on every node upstream of this one.

        Gradients from an earlier call are overwritten, not accumulated.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        for node in order:
            node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not _needs_grad(parent):
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _needs_grad(t):
    return t.requires_grad or bool(t._parents)


def _topological(root):
    order, state = [], {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise PgketError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            pm = state.get(id(p))
            if pm == 1:
                raise PgketError("cycle detected in computation graph")
            if pm is None:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def softmax(x, mask=None):
    """Softmax over the last axis; ``mask`` (bool, True = blocked) gets weight 0."""
    x = as_tensor(x)
    logits = x.data if mask is None else np.where(mask, MASK_SENTINEL, x.data)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * np.mean(gx_hat * xhat, axis=-1, keepdims=True))
        return (gx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over a batch of shape ``(B, C)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    batch = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    loss = np.mean(log_z - shifted[np.arange(batch), labels])

    def backward(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[np.arange(batch), labels] -= 1.0
        return (g * probs / batch,)

    return _make(loss, (logits,), backward)


def gaussian_scores(x, gamma, normalize=True):
    """Row-normalized ``exp(-z^T Gamma z / 2)`` over token pairs of ``x`` (..., n, d)."""
    x, gamma = as_tensor(x), as_tensor(gamma)
    diffs = x.data[..., :, None, :] - x.data[..., None, :, :]
    gz = diffs @ gamma.data
    raw = np.exp(-0.5 * np.sum(gz * diffs, axis=-1))
    z_row = raw.sum(axis=-1, keepdims=True)
    out = raw / z_row if normalize else raw

    def backward(g):
        if normalize:
            g = (g - np.sum(g * out, axis=-1, keepdims=True)) / z_row
        grad_q = -0.5 * raw * g
        sym = gz if np.allclose(gamma.data, gamma.data.T) else 0.5 * (gz + diffs @ gamma.data.T)
        weighted = grad_q[..., None] * sym
        gx = 2.0 * (weighted.sum(axis=-2) - weighted.sum(axis=-3))
        flat = diffs.reshape(-1, diffs.shape[-1])
        ggamma = flat.T @ (grad_q.reshape(-1, 1) * flat)
        return gx, ggamma

    return _make(out, (x, gamma), backward)


def photonic_scores(x, theta, phi, pairs, cfg, rng=None):
    """Photonic kernel scores as a differentiable op on ``x`` (..., n, d) and the mesh angles.

    In shot mode the forward values are shot estimates while the backward
    pass uses the exact-score gradient.
    """
    x, theta, phi = as_tensor(x), as_tensor(theta), as_tensor(phi)
    mesh = _kernel.MeshParams(cfg.num_modes, pairs, theta.data, phi.data)
    raw = _kernel.raw_scores_exact(x.data, mesh, cfg)
    if cfg.backend == "shots":
        if rng is None:
            raise ValueError("shot-mode scores need an rng")
        flat = x.data.reshape((-1,) + x.shape[-2:])
        est = [_kernel.score_matrix(seq, mesh, cfg, rng.child("seq", b)).values
               for b, seq in enumerate(flat)]
        out = np.stack(est).reshape(raw.shape)
    elif cfg.normalize_rows:
        out = raw / raw.sum(axis=-1, keepdims=True)
    else:
        out = raw

    def backward(g):
        return _kernel.score_matrix_vjp(x.data, mesh, cfg, raw, g, cfg.normalize_rows)

    return _make(out, (x, theta, phi), backward)


def numerical_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function ``f`` of an array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad
