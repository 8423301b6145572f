"""Loss, Adam, the training loop and the convergence-epoch metric."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, ShapeError, ValidationError
from .numerics import as_rng, eigh_symmetric

log = logging.getLogger(__name__)


def cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` for a single example."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError("cross_entropy expects a logit vector")
    if not 0 <= label < logits.size:
        raise ValidationError(f"label {label} out of range for {logits.size} classes")
    m = logits.max()
    return float(m + np.log(np.sum(np.exp(logits - m))) - logits[label])


@dataclass
class AdamState:
    lr: float = 0.009
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, epoch=None):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}", epoch)
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.beta1 * state.m.get(name, 0.0) + (1 - state.beta1) * g
        v = state.beta2 * state.v.get(name, 0.0) + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        m_new[name], v_new[name] = m, v
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t,
                          {**state.m, **m_new}, {**state.v, **v_new})
    return new_params, new_state


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.009
    seed: int = 0
    eval_backend: str = None
    eval_every: int = 1
    record_wall_clock: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0 or self.eval_every < 1:
            raise ValidationError("epochs, batch_size, lr and eval_every must be positive")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    seconds: float = 0.0


def loss_and_grads(model, tokens, labels, params=None):
    """Mean cross-entropy of a batch and its gradient for every parameter (exact backend)."""
    source = model.params if params is None else params
    tensors = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in source.items()}
    loss = ad.cross_entropy(model.forward(tokens, tensors, backend="exact"), labels)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    return float(loss.data), grads


def evaluate(model, tokens, labels, backend=None, rng=None, batch_size=256):
    """Mean cross-entropy and accuracy of ``model`` on a labelled token set."""
    tokens = np.asarray(tokens)
    labels = np.asarray(labels, dtype=np.int64)
    total, correct = 0.0, 0
    for start in range(0, len(labels), batch_size):
        sl = slice(start, start + batch_size)
        sub_rng = None if rng is None else rng.child("batch", start)
        logits = model.forward(tokens[sl], backend=backend, rng=sub_rng)
        total += float(ad.cross_entropy(logits, labels[sl]).data) * len(labels[sl])
        correct += int(np.sum(np.argmax(logits.data, axis=1) == labels[sl]))
    return total / len(labels), correct / len(labels)


def _check_gammas(model, epoch):
    for l in range(model.config.layers):
        lam = eigh_symmetric(model.gamma(l))[0]
        if lam[0] < -1e-10:
            raise DivergenceError(f"kernel matrix of layer {l} lost positive semidefiniteness", epoch)


def train(model, train_set, test_set, cfg, on_epoch=None):
    """Minibatch Adam training; returns one :class:`MetricsRow` per epoch.

    ``train_set`` and ``test_set`` are ``(tokens, labels)`` pairs.  The model's
    parameters are updated in place.  Shuffling draws from the substream
    ``("shuffle", epoch)`` of ``cfg.seed``; the final short batch is kept.
    """
    x_tr, y_tr = np.asarray(train_set[0]), np.asarray(train_set[1], dtype=np.int64)
    x_te, y_te = np.asarray(test_set[0]), np.asarray(test_set[1], dtype=np.int64)
    if len(y_tr) == 0 or len(y_te) == 0:
        raise ValidationError("training and test sets must be non-empty")
    root = as_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    eval_backend = cfg.eval_backend or model.config.backend
    history = []
    start = time.perf_counter()
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = root.child("shuffle", epoch).permutation(len(y_tr))
            for b in range(0, len(order), cfg.batch_size):
                idx = order[b:b + cfg.batch_size]
                loss, grads = loss_and_grads(model, x_tr[idx], y_tr[idx])
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite training loss", epoch)
                model.params, state = adam_step(model.params, grads, state, epoch)
            _check_gammas(model, epoch)
            if epoch % cfg.eval_every and epoch != cfg.epochs:
                continue
            eval_rng = root.child("eval", epoch)
            tr_loss, tr_acc = evaluate(model, x_tr, y_tr, eval_backend, eval_rng.child("train"))
            te_loss, te_acc = evaluate(model, x_te, y_te, eval_backend, eval_rng.child("test"))
            elapsed = time.perf_counter() - start
            row = MetricsRow(epoch, tr_loss, tr_acc, te_loss, te_acc,
                             round(elapsed, 3) if cfg.record_wall_clock else 0.0)
            log.info("epoch %d: train loss %.4f acc %.3f | test loss %.4f acc %.3f (%.1fs)",
                     epoch, tr_loss, tr_acc, te_loss, te_acc, elapsed)
            history.append(row)
            if on_epoch is not None:
                on_epoch(row)
    except DivergenceError as err:
        err.history = history
        raise
    return history


def convergence_epoch(accuracies, fraction=0.95):
    """First 1-indexed epoch whose accuracy reaches ``fraction`` of the peak."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValidationError("accuracy series is empty")
    return int(np.argmax(acc >= fraction * acc.max())) + 1
