"""Array primitives, matrix exponential and seeded randomness.

Real tensors are plain ``float64`` numpy arrays and complex matrices are
``complex128`` arrays, both C-ordered (row-major).
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import ShapeError, ValidationError

MASK_SENTINEL = -1e30


def _as_real2d(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    a = _as_real2d(a, "a")
    b = _as_real2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def cmatmul(a, b):
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("cmatmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def eigh_symmetric(m, tol=1e-10):
    """Eigen-decompose a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as orthonormal columns.
    """
    m = _as_real2d(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"matrix must be square, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > tol * scale:
        raise ValidationError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vals, vecs


def softmax_rows(m):
    """Row-wise softmax; entries at or below the mask sentinel get weight 0."""
    m = np.asarray(m, dtype=np.float64)
    masked = m <= MASK_SENTINEL
    shifted = np.where(masked, -np.inf, m)
    shifted = shifted - np.max(shifted, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def expm(a, tol=1e-14, max_terms=200):
    """Matrix exponential by scaling and squaring with a truncated Taylor series.

    The series is summed until the next term changes no entry by more than
    ``tol``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expm needs a square matrix, got {a.shape}")
    dtype = np.result_type(a.dtype, np.float64)
    norm = np.max(np.sum(np.abs(a), axis=0), initial=0.0)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = a.astype(dtype) / (2.0 ** squarings)
    result = np.eye(a.shape[0], dtype=dtype)
    term = np.eye(a.shape[0], dtype=dtype)
    for k in range(1, max_terms + 1):
        term = term @ x / k
        result = result + term
        if np.max(np.abs(term), initial=0.0) <= tol:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def _label_words(label):
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class SeededRng:
    """Deterministic generator with labelled, order-independent substreams.

    ``rng.child("shuffle")`` always yields the same stream for the same
    root seed and label path, no matter how many draws were taken from the
    parent or its siblings.
    """

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(str(p) for p in path)
        seed64 = self.seed & 0xFFFFFFFFFFFFFFFF
        entropy = [seed64 & 0xFFFFFFFF, seed64 >> 32]
        for label in self.path:
            entropy.extend(_label_words(label))
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, *labels):
        return SeededRng(self.seed, self.path + tuple(str(x) for x in labels))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def permutation(self, n):
        return self.generator.permutation(n)


def as_rng(rng):
    """Accept a SeededRng, an int seed or None (seed 0)."""
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(0 if rng is None else rng)
