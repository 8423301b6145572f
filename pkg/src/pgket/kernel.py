"""Photonic Gaussian-kernel attention scores.

The circuit per token pair (i, j): start in vacuum, displace every mode by
``s * X_i``, displace back by ``s * X_j``, run the beamsplitter mesh, then
detect vacuum on a subset S of modes.  Because the state after loading is
the coherent state ``|s (X_i - X_j)>``, the vacuum-event probability is

    exp(-s^2 z^T Gamma_eff z),   z = X_i - X_j,   Gamma_eff = Re(U_S^dag U_S)

where ``U_S`` are the mesh-unitary rows of the detected modes.  The default
loading scale ``s = 1/sqrt(2)`` turns this into ``exp(-z^T Gamma_eff z / 2)``.

Detecting every mode gives ``Gamma_eff = I`` whatever the mesh is, which is
why the default detects only the first ``ceil(d/2)`` modes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import coherent
from .errors import ShapeError, UnsupportedModeError, ValidationError
from .numerics import as_rng

log = logging.getLogger(__name__)

SCORE_MODES = ("gamma", "scalar")
BACKENDS = ("exact", "shots")


def alternating_pairs(num_modes, depth):
    """Pairs (0,1),(2,3),... on even layers and (1,2),(3,4),... on odd layers."""
    layers = []
    for layer in range(depth):
        start = layer % 2
        layers.append(tuple((k, k + 1) for k in range(start, num_modes - 1, 2)))
    return tuple(layers)


@dataclass
class MeshParams:
    """Beamsplitter angles for a layered mesh.

    ``theta[b]`` and ``phi[b]`` belong to the b-th beamsplitter when the
    layers' pairs are listed in order.
    """

    num_modes: int
    pairs: tuple
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.pairs = tuple(tuple(tuple(int(m) for m in p) for p in layer) for layer in self.pairs)
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()
        self.phi = np.asarray(self.phi, dtype=np.float64).copy()
        n = sum(len(layer) for layer in self.pairs)
        if self.theta.shape != (n,) or self.phi.shape != (n,):
            raise ValidationError(f"need {n} theta and phi values, got {self.theta.shape}, {self.phi.shape}")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.phi))):
            raise ValidationError("mesh angles must be finite")
        for ell, layer in enumerate(self.pairs):
            used = set()
            for k, l in layer:
                if k == l or not (0 <= k < self.num_modes and 0 <= l < self.num_modes):
                    raise ValidationError(f"bad pair ({k}, {l}) in layer {ell}")
                if k in used or l in used:
                    raise ValidationError(f"overlapping pairs in layer {ell}")
                used.update((k, l))

    @classmethod
    def rectangular(cls, num_modes, depth=None, theta=None, phi=None):
        depth = num_modes if depth is None else depth
        pairs = alternating_pairs(num_modes, depth)
        n = sum(len(layer) for layer in pairs)
        theta = np.zeros(n) if theta is None else theta
        phi = np.zeros(n) if phi is None else phi
        return cls(num_modes, pairs, theta, phi)

    @classmethod
    def random(cls, num_modes, depth=None, rng=None, scale=0.1):
        """Angles uniform on [-scale, scale]; the default gives a near-identity mesh."""
        mesh = cls.rectangular(num_modes, depth)
        rng = as_rng(rng)
        mesh.theta = rng.uniform(-scale, scale, mesh.theta.size)
        mesh.phi = rng.uniform(-scale, scale, mesh.phi.size)
        return mesh

    @property
    def depth(self):
        return len(self.pairs)

    @property
    def num_beamsplitters(self):
        return self.theta.size

    def records(self):
        """Flat ``(layer, pair, theta, phi)`` listing, one per beamsplitter."""
        out, b = [], 0
        for ell, layer in enumerate(self.pairs):
            for pair in layer:
                out.append((ell, pair, float(self.theta[b]), float(self.phi[b])))
                b += 1
        return out

    @classmethod
    def from_records(cls, num_modes, records):
        depth = 1 + max((r[0] for r in records), default=-1)
        layers = [[] for _ in range(depth)]
        for ell, pair, _, _ in records:
            layers[ell].append(tuple(pair))
        return cls(num_modes, tuple(tuple(x) for x in layers),
                   [r[2] for r in records], [r[3] for r in records])


@dataclass(frozen=True)
class KernelConfig:
    num_modes: int
    detected: tuple = None
    loading_scale: float = 1.0 / math.sqrt(2.0)
    normalize_rows: bool = True
    score_mode: str = "gamma"
    backend: str = "exact"
    shots: int = 16
    scalar_weight: float = 1.0

    def __post_init__(self):
        if self.num_modes < 1:
            raise ValidationError("num_modes must be positive")
        if self.score_mode not in SCORE_MODES:
            raise ValidationError(f"score_mode must be one of {SCORE_MODES}")
        if self.backend not in BACKENDS:
            raise ValidationError(f"backend must be one of {BACKENDS}")
        if self.score_mode == "scalar":
            detected = tuple(range(self.num_modes))
        elif self.detected is None:
            detected = tuple(range((self.num_modes + 1) // 2))
        else:
            detected = tuple(sorted(set(int(k) for k in self.detected)))
        if not detected:
            raise ValidationError("detected mode subset must be non-empty")
        if any(not 0 <= k < self.num_modes for k in detected):
            raise ValidationError("detected mode out of range")
        object.__setattr__(self, "detected", detected)
        if not self.loading_scale > 0:
            raise ValidationError("loading_scale must be positive")
        if self.backend == "shots" and self.shots < 1:
            raise ValidationError("shots must be >= 1 in shot mode")
        if not self.scalar_weight > 0:
            raise ValidationError("scalar_weight must be positive")

    @property
    def exponent_scale(self):
        return self.loading_scale ** 2

    def with_backend(self, backend):
        return KernelConfig(**{**self.__dict__, "backend": backend})


@dataclass
class ScoreMatrix:
    values: np.ndarray
    raw: np.ndarray
    provenance: str
    degenerate_rows: list = field(default_factory=list)


def _embed(block, pair, d):
    m = np.eye(d, dtype=np.complex128)
    k, l = pair
    m[np.ix_([k, l], [k, l])] = block
    return m


def layer_unitary(mesh, layer, offset=None):
    if offset is None:
        offset = sum(len(x) for x in mesh.pairs[:layer])
    m = np.eye(mesh.num_modes, dtype=np.complex128)
    for i, (k, l) in enumerate(mesh.pairs[layer]):
        b = offset + i
        m[np.ix_([k, l], [k, l])] = coherent.mesh_matrix(mesh.theta[b], mesh.phi[b])
    return m


def _layer_unitaries(mesh):
    mats, offset = [], 0
    for ell, layer in enumerate(mesh.pairs):
        mats.append(layer_unitary(mesh, ell, offset))
        offset += len(layer)
    return mats


def mesh_unitary(mesh):
    """Product of the layer matrices, first layer applied first."""
    u = np.eye(mesh.num_modes, dtype=np.complex128)
    for m in _layer_unitaries(mesh):
        u = m @ u
    return u


def gamma_of_mesh(mesh, detected):
    detected = list(detected)
    if not detected:
        raise ValidationError("detected subset must be non-empty")
    w = mesh_unitary(mesh)[detected, :]
    g = (w.conj().T @ w).real
    return 0.5 * (g + g.T)


def effective_gamma(mesh, cfg):
    if cfg.score_mode == "scalar":
        return np.eye(cfg.num_modes)
    return gamma_of_mesh(mesh, cfg.detected)


def gamma_vjp(mesh, detected, gamma_bar):
    """Pull a gradient w.r.t. Gamma_eff back onto the mesh angles.

    Returns ``(d_theta, d_phi)``.  Uses dL = 2 Re tr(M^dag dU) with
    M = P_S U sym(gamma_bar), and differentiates one 2x2 block at a time
    between prefix and suffix products of the layer matrices.
    """
    d = mesh.num_modes
    gbar = np.asarray(gamma_bar, dtype=np.float64)
    gbar = 0.5 * (gbar + gbar.T)
    layers = _layer_unitaries(mesh)
    prefix = [np.eye(d, dtype=np.complex128)]
    for m in layers:
        prefix.append(m @ prefix[-1])
    u = prefix[-1]
    proj = np.zeros((d, 1))
    proj[list(detected), 0] = 1.0
    m_adj = (proj * u @ gbar).conj().T
    d_theta = np.zeros(mesh.num_beamsplitters)
    d_phi = np.zeros(mesh.num_beamsplitters)
    suffix = np.eye(d, dtype=np.complex128)
    offsets = np.cumsum([0] + [len(x) for x in mesh.pairs])
    for ell in range(len(layers) - 1, -1, -1):
        # K = Pre M^dag Suf, and tr(K E) only touches the pair block of E.
        kmat = prefix[ell] @ m_adj @ suffix
        for i, (k, l) in enumerate(mesh.pairs[ell]):
            b = offsets[ell] + i
            th, ph = mesh.theta[b], mesh.phi[b]
            c, s = np.cos(th), np.sin(th)
            e_p, e_m = np.exp(1j * ph), np.exp(-1j * ph)
            dth = np.array([[-s, -e_m * c], [e_p * c, -s]])
            dph = np.array([[0.0, 1j * e_m * s], [1j * e_p * s, 0.0]])
            kb = kmat[np.ix_([k, l], [k, l])].T
            d_theta[b] = 2.0 * np.sum(kb * dth).real
            d_phi[b] = 2.0 * np.sum(kb * dph).real
        suffix = suffix @ layers[ell]
    return d_theta, d_phi


def _check_pair(xi, xj, cfg):
    xi = np.asarray(xi, dtype=np.float64)
    xj = np.asarray(xj, dtype=np.float64)
    if xi.shape != (cfg.num_modes,) or xj.shape != (cfg.num_modes,):
        raise ShapeError(f"tokens must have length {cfg.num_modes}, got {xi.shape} and {xj.shape}")
    return xi, xj


def _loaded_state(xi, xj, mesh, cfg):
    s = cfg.loading_scale
    state = coherent.coherent_vacuum(cfg.num_modes)
    state = coherent.displace_all(state, s * xi)
    state = coherent.displace_all(state, -s * xj)
    if cfg.score_mode == "scalar":
        return state
    return coherent.apply_mesh(state, mesh_unitary(mesh))


def pgksas_exact(xi, xj, mesh, cfg):
    xi, xj = _check_pair(xi, xj, cfg)
    p = coherent.vacuum_probability(_loaded_state(xi, xj, mesh, cfg), cfg.detected)
    return cfg.scalar_weight * p if cfg.score_mode == "scalar" else p


def pgksas_shots(xi, xj, mesh, cfg, rng):
    """Fraction of shots in which every detected mode reports zero photons."""
    if cfg.shots < 1:
        raise ValidationError("shots must be >= 1")
    xi, xj = _check_pair(xi, xj, cfg)
    counts = coherent.sample_counts(_loaded_state(xi, xj, mesh, cfg), rng, cfg.shots)
    p = float(np.mean(np.all(counts[:, list(cfg.detected)] == 0, axis=1)))
    return cfg.scalar_weight * p if cfg.score_mode == "scalar" else p


def raw_scores_exact(tokens, mesh, cfg, unitary=None):
    """Unnormalized exact scores for ``tokens`` of shape ``(..., n, d)``."""
    tokens = np.asarray(tokens, dtype=np.float64)
    alphas = cfg.loading_scale * (tokens[..., :, None, :] - tokens[..., None, :, :])
    if cfg.score_mode == "scalar":
        return cfg.scalar_weight * np.exp(-np.sum(alphas ** 2, axis=-1))
    if unitary is None:
        unitary = mesh_unitary(mesh)
    return coherent.batch_vacuum_probability(alphas, unitary, cfg.detected)


def normalize_rows(raw):
    """Divide each row by its sum; all-zero rows become uniform.

    Returns ``(normalized, degenerate_row_indices)``.
    """
    sums = raw.sum(axis=-1, keepdims=True)
    bad = sums[..., 0] <= 0.0
    n = raw.shape[-1]
    safe = np.where(sums > 0.0, sums, 1.0)
    out = np.where(bad[..., None], 1.0 / n, raw / safe)
    return out, [tuple(ix) if len(ix) > 1 else int(ix[0]) for ix in np.argwhere(bad)]


def score_matrix(tokens, mesh, cfg, rng=None):
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] != cfg.num_modes:
        raise ShapeError(f"tokens must be (n, {cfg.num_modes}), got {tokens.shape}")
    n = tokens.shape[0]
    if cfg.backend == "exact":
        raw = raw_scores_exact(tokens, mesh, cfg)
        provenance = "exact"
    else:
        rng = as_rng(rng)
        raw = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                raw[i, j] = pgksas_shots(tokens[i], tokens[j], mesh, cfg, rng.child("pair", i, j))
        provenance = "shots"
    if not cfg.normalize_rows:
        return ScoreMatrix(raw, raw, provenance)
    values, bad = normalize_rows(raw)
    if bad:
        log.warning("score rows %s summed to zero; replaced by uniform rows", bad)
    return ScoreMatrix(values, raw, provenance, bad)


def grad_pgksas(xi, xj, mesh, cfg):
    """Analytic gradient of the exact score w.r.t. theta, phi, xi and xj."""
    if cfg.backend != "exact":
        raise UnsupportedModeError("gradients are only defined for the exact backend")
    xi, xj = _check_pair(xi, xj, cfg)
    z = xi - xj
    c = cfg.exponent_scale
    gamma = effective_gamma(mesh, cfg)
    score = float(np.exp(-c * z @ gamma @ z))
    if cfg.score_mode == "scalar":
        score *= cfg.scalar_weight
        d_theta = np.zeros(mesh.num_beamsplitters)
        d_phi = np.zeros(mesh.num_beamsplitters)
    else:
        d_theta, d_phi = gamma_vjp(mesh, cfg.detected, -c * score * np.outer(z, z))
    gz = gamma @ z
    return {
        "theta": d_theta,
        "phi": d_phi,
        "xi": -2.0 * c * score * gz,
        "xj": 2.0 * c * score * gz,
    }


def score_matrix_vjp(tokens, mesh, cfg, raw, grad_out, normalized=True):
    """Backward pass of the exact score matrix for ``tokens`` of shape ``(..., n, d)``.

    ``raw`` is the unnormalized score tensor from the forward pass and
    ``grad_out`` the gradient w.r.t. the (normalized, if ``normalized``)
    scores.  Returns ``(grad_tokens, grad_theta, grad_phi)``.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if normalized:
        z_row = raw.sum(axis=-1, keepdims=True)
        a = raw / z_row
        grad_raw = (grad_out - np.sum(grad_out * a, axis=-1, keepdims=True)) / z_row
    else:
        grad_raw = grad_out
    c = cfg.exponent_scale
    gamma = effective_gamma(mesh, cfg)
    # raw = w * exp(-c q), q_ij = z_ij^T Gamma z_ij
    grad_q = -c * raw * grad_raw
    diffs = tokens[..., :, None, :] - tokens[..., None, :, :]
    gz = diffs @ gamma
    weighted = grad_q[..., None] * gz
    grad_tokens = 2.0 * (weighted.sum(axis=-2) - weighted.sum(axis=-3))
    if cfg.score_mode == "scalar":
        zeros = np.zeros(mesh.num_beamsplitters)
        return grad_tokens, zeros, zeros.copy()
    flat_d = diffs.reshape(-1, cfg.num_modes)
    gamma_bar = flat_d.T @ (grad_q.reshape(-1, 1) * flat_d)
    d_theta, d_phi = gamma_vjp(mesh, cfg.detected, gamma_bar)
    return grad_tokens, d_theta, d_phi
