"""Transformer building blocks and the encoder classifier.

Tokens are rows: a sequence is an ``(n, d)`` array and projections act on
the right (``X @ W``).  Forward functions accept numpy arrays or autodiff
tensors and return :class:`~pgket.autodiff.Tensor`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernel
from .errors import ShapeError, ValidationError
from .numerics import as_rng

LN_EPS = 1e-5


def positional_encoding(n, d):
    """Sinusoidal table: sin on even columns, cos on odd columns."""
    if d % 2:
        raise ValidationError("positional encoding needs an even dimension")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((n, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def gksam_scores(tokens, gamma):
    """Classical Gaussian-kernel attention weights, rows normalized to 1."""
    x = np.asarray(tokens, dtype=np.float64)
    z = x[:, None, :] - x[None, :, :]
    raw = np.exp(-0.5 * np.einsum("ija,ab,ijb->ij", z, np.asarray(gamma), z))
    return raw / raw.sum(axis=1, keepdims=True)


@dataclass
class GksamParams:
    """Gamma is stored through an unconstrained factor so that Gamma = M^T M."""

    factor: np.ndarray
    w_v: np.ndarray

    @property
    def gamma(self):
        return self.factor.T @ self.factor


def gksam_forward(tokens, params):
    x = ad.as_tensor(tokens)
    factor = ad.as_tensor(params.factor)
    gamma = ad.matmul(ad.swap_last(factor), factor)
    return ad.gaussian_scores(x, gamma) @ (x @ ad.as_tensor(params.w_v))


def pgksam_forward(tokens, w_v, theta, phi, pairs, cfg, rng=None):
    """Attention output ``sum_j score(i, j) V_j`` with photonic kernel scores."""
    x = ad.as_tensor(tokens)
    scores = ad.photonic_scores(x, theta, phi, pairs, cfg, rng)
    return scores @ (x @ ad.as_tensor(w_v))


@dataclass
class MultiheadParams:
    """Per-head projections stacked as ``(heads, d, d_head)`` plus an output map."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @classmethod
    def init(cls, d, heads, rng=None):
        if d % heads:
            raise ValidationError("heads must divide d")
        rng = as_rng(rng)
        dh = d // heads
        bound = 1.0 / math.sqrt(d)
        draw = lambda *shape: rng.uniform(-bound, bound, shape)
        return cls(draw(heads, d, dh), draw(heads, d, dh), draw(heads, d, dh), draw(d, d))

    @property
    def heads(self):
        return self.w_q.shape[0]


def causal_mask(n):
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def multihead_sam(queries_from, keys_values_from, params, causal=False):
    """Scaled dot-product attention over several heads.

    With ``queries_from is keys_values_from`` and ``causal=True`` this is the
    decoder's masked self-attention; with distinct inputs it is the
    cross-attention reading encoder states.
    """
    q_in, kv_in = ad.as_tensor(queries_from), ad.as_tensor(keys_values_from)
    w_q, w_k, w_v = (ad.as_tensor(w) for w in (params.w_q, params.w_k, params.w_v))
    if q_in.shape[-1] != w_q.shape[1] or kv_in.shape[-1] != w_k.shape[1]:
        raise ShapeError("token width does not match projection matrices")
    # (..., 1, n, d) @ (h, d, dh) -> (..., h, n, dh)
    q = ad.reshape(q_in, q_in.shape[:-2] + (1,) + q_in.shape[-2:]) @ w_q
    kv = ad.reshape(kv_in, kv_in.shape[:-2] + (1,) + kv_in.shape[-2:])
    k = kv @ w_k
    v = kv @ w_v
    dh = w_q.shape[-1]
    logits = ad.mul(q @ ad.swap_last(k), 1.0 / math.sqrt(dh))
    mask = causal_mask(q_in.shape[-2]) if causal else None
    if mask is not None and q_in.shape[-2] != kv_in.shape[-2]:
        raise ShapeError("causal mask needs equal query and key lengths")
    heads_out = ad.softmax(logits, mask) @ v
    # (..., h, n, dh) -> (..., n, h*dh)
    nd = heads_out.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    merged = ad.transpose(heads_out, axes)
    merged = ad.reshape(merged, merged.shape[:-2] + (merged.shape[-2] * merged.shape[-1],))
    return merged @ ad.as_tensor(params.w_o)


def layer_norm(x, gain, bias, eps=LN_EPS):
    x = ad.as_tensor(x)
    if x.shape[-1] < 2:
        raise ValidationError("layer norm needs at least two features")
    return ad.layer_norm(x, gain, bias, eps)


def ffn(x, w1, b1, w2=None, b2=None):
    """``ReLU(x W1 + b1)`` followed by ``W2, b2`` when given."""
    h = ad.relu(ad.as_tensor(x) @ ad.as_tensor(w1) + b1)
    if w2 is None:
        return h
    return h @ ad.as_tensor(w2) + b2


@dataclass
class ModelConfig:
    n_tokens: int = 4
    d: int = 16
    layers: int = 1
    ffn_width: int = None
    classes: int = 5
    heads: int = 2
    attention: str = "photonic"
    mesh_depth: int = None
    detected: tuple = None
    loading_scale: float = 1.0 / math.sqrt(2.0)
    normalize_rows: bool = True
    score_mode: str = "gamma"
    backend: str = "exact"
    shots: int = 16
    ffn_literal: bool = False
    positional: bool = True

    def __post_init__(self):
        if self.ffn_width is None:
            self.ffn_width = self.d if self.ffn_literal else 4 * self.d
        if self.mesh_depth is None:
            self.mesh_depth = self.d
        if min(self.n_tokens, self.d, self.layers, self.ffn_width, self.classes) < 1:
            raise ValidationError("model extents must be positive")
        if self.attention not in ("photonic", "classical"):
            raise ValidationError("attention must be 'photonic' or 'classical'")
        if self.ffn_literal and self.ffn_width != self.d:
            raise ValidationError("the single-affine feed-forward needs ffn_width == d")

    def kernel_config(self, backend=None):
        return kernel.KernelConfig(
            num_modes=self.d,
            detected=self.detected,
            loading_scale=self.loading_scale,
            normalize_rows=self.normalize_rows,
            score_mode=self.score_mode,
            backend=backend or self.backend,
            shots=self.shots,
        )


class EncoderClassifier:
    """Encoder layers (attention, add & norm, feed-forward, add & norm), mean pool, linear head."""

    def __init__(self, config, params=None, rng=None):
        self.config = config
        self.pairs = kernel.alternating_pairs(config.d, config.mesh_depth)
        self.params = self.init_params(rng) if params is None else dict(params)

    def init_params(self, rng=None):
        cfg = self.config
        rng = as_rng(rng)
        d, f = cfg.d, cfg.ffn_width
        params = {}

        def affine(name, fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.child(name).uniform(-bound, bound, shape)

        n_bs = sum(len(layer) for layer in self.pairs)
        for l in range(cfg.layers):
            p = f"layer{l}."
            if cfg.attention == "photonic":
                mesh_rng = rng.child(p + "mesh")
                params[p + "mesh.theta"] = mesh_rng.uniform(-0.1, 0.1, n_bs)
                params[p + "mesh.phi"] = mesh_rng.uniform(-0.1, 0.1, n_bs)
            else:
                params[p + "gamma_factor"] = np.eye(d)
            affine(p + "w_v", d, (d, d))
            params[p + "ln1.gain"] = np.ones(d)
            params[p + "ln1.bias"] = np.zeros(d)
            affine(p + "ffn.w1", d, (d, f))
            affine(p + "ffn.b1", d, (f,))
            if not cfg.ffn_literal:
                affine(p + "ffn.w2", f, (f, d))
                affine(p + "ffn.b2", f, (d,))
            params[p + "ln2.gain"] = np.ones(d)
            params[p + "ln2.bias"] = np.zeros(d)
        affine("head.w", d, (d, cfg.classes))
        affine("head.b", d, (cfg.classes,))
        return params

    def mesh(self, layer=0):
        p = f"layer{layer}.mesh."
        return kernel.MeshParams(self.config.d, self.pairs, self.params[p + "theta"], self.params[p + "phi"])

    def gamma(self, layer=0):
        """Effective kernel matrix of an encoder layer."""
        if self.config.attention == "classical":
            m = self.params[f"layer{layer}.gamma_factor"]
            return m.T @ m
        return kernel.effective_gamma(self.mesh(layer), self.config.kernel_config())

    def prepare(self, tokens):
        x = np.asarray(tokens, dtype=np.float64)
        if x.shape[-2:] != (self.config.n_tokens, self.config.d):
            raise ShapeError(f"expected tokens (..., {self.config.n_tokens}, {self.config.d}), got {x.shape}")
        if self.config.positional:
            x = x + positional_encoding(self.config.n_tokens, self.config.d)
        return x

    def forward(self, tokens, tensors=None, backend=None, rng=None):
        """Class logits for a batch ``(B, n, d)`` (or a single ``(n, d)`` sequence).

        ``tensors`` maps parameter names to autodiff tensors; when omitted
        the stored parameters are used as constants.
        """
        cfg = self.config
        t = tensors or {k: ad.Tensor(v) for k, v in self.params.items()}
        kcfg = cfg.kernel_config(backend)
        x = self.prepare(tokens)
        single = x.ndim == 2
        x = ad.Tensor(x[None] if single else x)
        for l in range(cfg.layers):
            p = f"layer{l}."
            layer_rng = None if rng is None else rng.child(p)
            if cfg.attention == "photonic":
                o1 = pgksam_forward(x, t[p + "w_v"], t[p + "mesh.theta"], t[p + "mesh.phi"],
                                    self.pairs, kcfg, layer_rng)
            else:
                o1 = gksam_forward(x, GksamParams(t[p + "gamma_factor"], t[p + "w_v"]))
            o2 = layer_norm(x + o1, t[p + "ln1.gain"], t[p + "ln1.bias"])
            if cfg.ffn_literal:
                o3 = ffn(o2, t[p + "ffn.w1"], t[p + "ffn.b1"])
            else:
                o3 = ffn(o2, t[p + "ffn.w1"], t[p + "ffn.b1"], t[p + "ffn.w2"], t[p + "ffn.b2"])
            x = layer_norm(o2 + o3, t[p + "ln2.gain"], t[p + "ln2.bias"])
        pooled = ad.mean(x, axis=-2)
        logits = pooled @ t["head.w"] + t["head.b"]
        return ad.reshape(logits, (cfg.classes,)) if single else logits

    def logits(self, tokens, backend=None, rng=None):
        return self.forward(tokens, backend=backend, rng=rng).data


def encoder_forward(tokens, model, rng=None):
    return model.forward(tokens, rng=rng)
