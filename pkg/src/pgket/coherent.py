"""Exact simulation of displacement + passive-interferometer circuits on vacuum.

A product of coherent states stays a product of coherent states under
displacements and beamsplitter meshes, so a d-mode state is just d complex
amplitudes.  Global phases are not tracked; every quantity computed here is
phase-insensitive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import as_rng


@dataclass(frozen=True)
class CoherentState:
    alphas: np.ndarray

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.complex128)
        if alphas.ndim != 1 or alphas.size < 1:
            raise ValidationError("alphas must be a non-empty vector")
        if not np.all(np.isfinite(alphas)):
            raise ValidationError("alphas must be finite")
        object.__setattr__(self, "alphas", alphas)

    @property
    def num_modes(self):
        return self.alphas.size


def coherent_vacuum(num_modes):
    if num_modes < 1:
        raise ValidationError("need at least one mode")
    return CoherentState(np.zeros(num_modes, dtype=np.complex128))


def _check_mode(state, k):
    if not 0 <= k < state.num_modes:
        raise ValidationError(f"mode {k} out of range for {state.num_modes} modes")


def displace(state, k, alpha):
    _check_mode(state, k)
    alphas = state.alphas.copy()
    alphas[k] += complex(alpha)
    return CoherentState(alphas)


def displace_all(state, alphas):
    alphas = np.asarray(alphas, dtype=np.complex128)
    if alphas.shape != state.alphas.shape:
        raise ValidationError(f"expected {state.num_modes} displacements, got {alphas.shape}")
    return CoherentState(state.alphas + alphas)


def mesh_matrix(theta, phi):
    """Single-excitation transfer block of ``BS(theta, phi)``.

    Column j gives the output amplitudes for a photon entering mode j of the
    pair; coherent amplitudes transform by the same matrix.
    """
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [[c, -np.exp(-1j * phi) * s], [np.exp(1j * phi) * s, c]], dtype=np.complex128
    )


def apply_mesh(state, unitary, tol=1e-10):
    u = np.asarray(unitary, dtype=np.complex128)
    d = state.num_modes
    if u.shape != (d, d):
        raise ValidationError(f"mesh must be {d}x{d}, got {u.shape}")
    if np.max(np.abs(u.conj().T @ u - np.eye(d))) > tol:
        raise ValidationError("mesh matrix is not unitary")
    return CoherentState(u @ state.alphas)


def _subset(state, modes):
    if modes is None:
        return list(range(state.num_modes))
    modes = sorted(set(int(k) for k in modes))
    if not modes:
        raise ValidationError("mode subset must be non-empty")
    for k in modes:
        _check_mode(state, k)
    return modes


def vacuum_probability(state, modes=None):
    """exp(-sum |alpha_k|^2) over the detected modes (default: all)."""
    modes = _subset(state, modes)
    return float(np.exp(-np.sum(np.abs(state.alphas[modes]) ** 2)))


def mean_photon(state, k):
    _check_mode(state, k)
    return float(abs(state.alphas[k]) ** 2)


def sample_counts(state, rng, shots):
    """Photon counts for ``shots`` repetitions, shape ``(shots, d)``.

    Modes of a product coherent state are independent Poisson variables.
    """
    means = np.abs(state.alphas) ** 2
    return as_rng(rng).poisson(means, size=(int(shots), state.num_modes)).astype(np.int64)


def batch_vacuum_probability(alphas, unitary, modes):
    """Vacuum probability on ``modes`` for many input amplitude vectors at once.

    ``alphas`` has shape ``(..., d)``; each vector is pushed through the same
    mesh before detection.  Equivalent to ``vacuum_probability(apply_mesh(...))``
    applied element by element.
    """
    out = np.asarray(alphas) @ np.asarray(unitary).T
    return np.exp(-np.sum(np.abs(out[..., list(modes)]) ** 2, axis=-1))
