"""Truncated Fock-space simulation of a few qumodes.

This backend is slow and exponential in the number of modes; it exists as
the exactness oracle for :mod:`pgket.coherent`.  Gates are exponentials of
*truncated* generators, so they are exactly unitary at every cutoff and
truncation error shows up as population near the cutoff instead of a norm
defect.

Basis ordering is row-major over photon-count tuples ``(n_0, ..., n_{d-1})``
with mode 0 varying slowest.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapacityError, TruncationError, ValidationError
from .numerics import as_rng, expm

MAX_AMPLITUDES = 1 << 24


@dataclass(frozen=True)
class FockState:
    num_modes: int
    cutoff: int
    amplitudes: np.ndarray

    def __post_init__(self):
        expected = (self.cutoff + 1) ** self.num_modes
        if self.amplitudes.shape != (expected,):
            raise ValidationError(
                f"expected {expected} amplitudes for d={self.num_modes}, N={self.cutoff}, "
                f"got shape {self.amplitudes.shape}"
            )

    @property
    def tensor(self):
        return self.amplitudes.reshape((self.cutoff + 1,) * self.num_modes)

    @property
    def norm_squared(self):
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    @property
    def leakage(self):
        """Norm deficit plus probability sitting on the top Fock level of any mode.

        With unitary truncated gates the norm deficit stays at round-off
        level, so occupation of level N is the practical signal that the
        cutoff is too small.
        """
        probs = np.abs(self.tensor) ** 2
        edge = np.zeros(probs.shape, dtype=bool)
        for axis in range(self.num_modes):
            idx = [slice(None)] * self.num_modes
            idx[axis] = self.cutoff
            edge[tuple(idx)] = True
        return max(0.0, 1.0 - self.norm_squared) + float(probs[edge].sum())


@dataclass(frozen=True)
class LadderOps:
    cutoff: int
    create: np.ndarray
    annihilate: np.ndarray


@lru_cache(maxsize=None)
def _ladder(cutoff):
    a = np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=np.float64)), k=1)
    a.setflags(write=False)
    adag = a.T.copy()
    adag.setflags(write=False)
    return a, adag


def ladder_ops(cutoff):
    a, adag = _ladder(int(cutoff))
    return LadderOps(cutoff=int(cutoff), create=adag, annihilate=a)


def vacuum_state(num_modes, cutoff, max_amplitudes=MAX_AMPLITUDES):
    if num_modes < 1 or cutoff < 1:
        raise ValidationError("need at least one mode and cutoff >= 1")
    if num_modes * np.log(cutoff + 1) > np.log(max_amplitudes):
        raise CapacityError(
            f"(N+1)^d = {cutoff + 1}^{num_modes} exceeds the budget of {max_amplitudes} amplitudes"
        )
    amps = np.zeros((cutoff + 1) ** num_modes, dtype=np.complex128)
    amps[0] = 1.0
    return FockState(num_modes, cutoff, amps)


def displacement_matrix(alpha, cutoff):
    """``exp(alpha a^dag - conj(alpha) a)`` on the truncated single-mode space."""
    a, adag = _ladder(int(cutoff))
    alpha = complex(alpha)
    return expm(alpha * adag - alpha.conjugate() * a)


def beamsplitter_matrix(theta, phi, cutoff):
    """``exp[theta (e^{i phi} a1 a2^dag - e^{-i phi} a1^dag a2)]`` on two truncated modes.

    Rows/columns are indexed ``n1 * (N+1) + n2``.
    """
    a, adag = _ladder(int(cutoff))
    eye = np.eye(cutoff + 1)
    a1, a1dag = np.kron(a, eye), np.kron(adag, eye)
    a2, a2dag = np.kron(eye, a), np.kron(eye, adag)
    gen = theta * (np.exp(1j * phi) * (a1 @ a2dag) - np.exp(-1j * phi) * (a1dag @ a2))
    # the generator conserves n1 + n2, so exponentiate one photon-number block at a time
    total = np.add.outer(np.arange(cutoff + 1), np.arange(cutoff + 1)).reshape(-1)
    out = np.zeros_like(gen)
    for n in range(2 * cutoff + 1):
        idx = np.flatnonzero(total == n)
        out[np.ix_(idx, idx)] = expm(gen[np.ix_(idx, idx)])
    return out


def _check_mode(state, k):
    if not 0 <= k < state.num_modes:
        raise ValidationError(f"mode {k} out of range for {state.num_modes} modes")


def apply_single_mode(gate, k, state):
    _check_mode(state, k)
    dim = state.cutoff + 1
    gate = np.asarray(gate)
    if gate.shape != (dim, dim):
        raise ValidationError(f"single-mode gate must be {dim}x{dim}, got {gate.shape}")
    psi = np.moveaxis(state.tensor, k, 0)
    out = np.tensordot(gate, psi, axes=(1, 0))
    out = np.moveaxis(out, 0, k)
    return FockState(state.num_modes, state.cutoff, np.ascontiguousarray(out).reshape(-1))


def apply_two_mode(gate, modes, state):
    k, l = modes
    _check_mode(state, k)
    _check_mode(state, l)
    if k == l:
        raise ValidationError("two-mode gate needs distinct modes")
    dim = state.cutoff + 1
    gate = np.asarray(gate)
    if gate.shape != (dim * dim, dim * dim):
        raise ValidationError(f"two-mode gate must be {dim * dim}x{dim * dim}, got {gate.shape}")
    psi = np.moveaxis(state.tensor, (k, l), (0, 1))
    rest = psi.shape[2:]
    out = (gate @ psi.reshape(dim * dim, -1)).reshape((dim, dim) + rest)
    out = np.moveaxis(out, (0, 1), (k, l))
    return FockState(state.num_modes, state.cutoff, np.ascontiguousarray(out).reshape(-1))


def vacuum_probability(state, modes=None):
    """Probability that every mode in ``modes`` (default: all) holds zero photons."""
    if modes is None:
        return float(abs(state.amplitudes[0]) ** 2)
    modes = sorted(set(modes))
    if not modes:
        raise ValidationError("mode subset must be non-empty")
    for k in modes:
        _check_mode(state, k)
    idx = tuple(0 if ax in modes else slice(None) for ax in range(state.num_modes))
    return float(np.sum(np.abs(state.tensor[idx]) ** 2))


def photon_distribution(state, tol=1e-8):
    """Joint photon-count probabilities as an array of shape ``(N+1,)*d``."""
    if state.leakage > tol:
        raise TruncationError(f"leakage {state.leakage:.3e} exceeds tolerance {tol:.1e}")
    probs = np.abs(state.tensor) ** 2
    return probs / probs.sum()


def marginal(dist, k):
    axes = tuple(ax for ax in range(dist.ndim) if ax != k)
    return dist.sum(axis=axes)


def mean_photon(state, k):
    _check_mode(state, k)
    probs = marginal(np.abs(state.tensor) ** 2, k)
    return float(np.dot(np.arange(state.cutoff + 1), probs))


def sample_counts(state, rng, shots, tol=1e-8):
    """Draw ``shots`` count tuples by inverse CDF; returns an int array ``(shots, d)``."""
    dist = photon_distribution(state, tol)
    cdf = np.cumsum(dist.reshape(-1))
    cdf[-1] = 1.0
    u = as_rng(rng).random(int(shots))
    flat = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    return np.stack(np.unravel_index(flat, dist.shape), axis=1).astype(np.int64)
