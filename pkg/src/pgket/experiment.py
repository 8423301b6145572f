"""End-to-end experiment runs: ingest, subset, noise, PCA, train, summarize."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint, data
from .errors import ConfigError, DataError, PgketError
from .nn import EncoderClassifier, ModelConfig
from .numerics import SeededRng
from .train import TrainConfig, convergence_epoch, evaluate, train

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "train_acc", "test_loss", "test_acc", "seconds")


@dataclass
class ExperimentConfig:
    data_dir: str = "data"
    dataset_format: str = "idx"
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    classes: int = 5
    per_class_train: int = 30
    per_class_test: int = 10
    n_tokens: int = 4
    d: int = 16
    noise_sigma: float = 0.0
    noise_space: str = "pixel"
    noise_clamp: bool = True
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.009
    eval_every: int = 1
    record_wall_clock: bool = False
    checkpoint_every: int = 0
    layers: int = 1
    ffn_width: int = None
    heads: int = 2
    attention: str = "photonic"
    mesh_depth: int = None
    detected: list = None
    loading_scale: float = 1.0 / math.sqrt(2.0)
    normalize_rows: bool = True
    score_mode: str = "gamma"
    backend: str = "exact"
    shots: int = 16
    eval_backend: str = None
    ffn_literal: bool = False
    positional: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.dataset_format not in ("idx", "cifar10"):
            raise ConfigError("dataset_format must be 'idx' or 'cifar10'")
        if self.noise_space not in ("pixel", "feature"):
            raise ConfigError("noise_space must be 'pixel' or 'feature'")
        if self.n_tokens not in data.TOKEN_SCHEMES:
            raise ConfigError(f"n_tokens must be one of {data.TOKEN_SCHEMES}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        try:
            self.model_config()
            self.train_config()
        except PgketError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**mapping)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        try:
            mapping = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(mapping, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(mapping)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def model_config(self):
        return ModelConfig(
            n_tokens=self.n_tokens, d=self.d, layers=self.layers, ffn_width=self.ffn_width,
            classes=self.classes, heads=self.heads, attention=self.attention,
            mesh_depth=self.mesh_depth,
            detected=None if self.detected is None else tuple(self.detected),
            loading_scale=self.loading_scale, normalize_rows=self.normalize_rows,
            score_mode=self.score_mode, backend=self.backend, shots=self.shots,
            ffn_literal=self.ffn_literal, positional=self.positional,
        )

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           seed=self.seed, eval_backend=self.eval_backend,
                           eval_every=self.eval_every, record_wall_clock=self.record_wall_clock)


class StageError(PgketError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def load_dataset(cfg):
    root = Path(cfg.data_dir)
    try:
        if cfg.dataset_format == "idx":
            return data.load_idx(root / cfg.train_images, root / cfg.train_labels)
        return data.load_cifar10_bin(root)
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from exc


def prepare_data(cfg, stage_hook=None):
    """Run the preprocessing pipeline; returns ``(train_tokens, train_labels, test_tokens, test_labels, pca)``."""
    rng = SeededRng(cfg.seed)
    stage = stage_hook or (lambda name: None)
    stage("ingest")
    ds = load_dataset(cfg)
    stage("subset")
    train_ds, test_ds = data.select_classes(ds, cfg.classes, cfg.per_class_train,
                                            cfg.per_class_test, rng.child("select"))
    if cfg.noise_sigma > 0 and cfg.noise_space == "pixel":
        stage("noise")
        train_ds = data.add_gaussian_noise(train_ds, cfg.noise_sigma, rng.child("noise", "train"), cfg.noise_clamp)
        test_ds = data.add_gaussian_noise(test_ds, cfg.noise_sigma, rng.child("noise", "test"), cfg.noise_clamp)
    stage("pca")
    pca = data.pca_fit(train_ds, cfg.n_tokens, cfg.d)
    stage("tokenize")
    x_tr = data.pca_transform(pca, train_ds)
    x_te = data.pca_transform(pca, test_ds)
    if cfg.noise_sigma > 0 and cfg.noise_space == "feature":
        stage("noise")
        x_tr = x_tr + rng.child("noise", "train").normal(0.0, cfg.noise_sigma, x_tr.shape)
        x_te = x_te + rng.child("noise", "test").normal(0.0, cfg.noise_sigma, x_te.shape)
    return x_tr, train_ds.labels, x_te, test_ds.labels, pca


def build_model(cfg):
    return EncoderClassifier(cfg.model_config(), rng=SeededRng(cfg.seed).child("init"))


def _fmt(x):
    return repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x))


class MetricsWriter:
    def __init__(self, path):
        self.path = Path(path)
        with self.path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(METRIC_COLUMNS)

    def __call__(self, row):
        with self.path.open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(
                [_fmt(getattr(row, c)) for c in METRIC_COLUMNS])


def read_metrics(path):
    with Path(path).open() as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def summarize(history, cfg, pca_fingerprint=None):
    test_acc = [r.test_acc for r in history]
    last = history[-1]
    return {
        "final_acc": last.test_acc,
        "final_loss": last.test_loss,
        "final_train_loss": last.train_loss,
        "first_train_loss": history[0].train_loss,
        "best_acc": max(test_acc),
        "conv_epoch": history[convergence_epoch(test_acc) - 1].epoch,
        "epochs": last.epoch,
        "noise_sigma": cfg.noise_sigma,
        "noise_space": cfg.noise_space,
        "pca_fingerprint": pca_fingerprint,
    }


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg, out_dir):
    """Execute a full run and write ``metrics.csv``, ``config.json``, ``model.pgkt``,
    ``summary.json`` and ``run.log`` into ``out_dir``.  Returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    pkg_log = logging.getLogger("pgket")
    pkg_log.addHandler(handler)
    old_level = pkg_log.level
    if pkg_log.getEffectiveLevel() > logging.INFO:
        pkg_log.setLevel(logging.INFO)
    current = {"stage": "setup"}

    def stage(name):
        current["stage"] = name
        log.info("stage: %s", name)

    try:
        _dump_json(out / "config.json", cfg.to_dict())
        x_tr, y_tr, x_te, y_te, pca = prepare_data(cfg, stage)
        stage("train")
        model = build_model(cfg)
        writer = MetricsWriter(out / "metrics.csv")

        def on_epoch(row):
            writer(row)
            if cfg.checkpoint_every and row.epoch % cfg.checkpoint_every == 0:
                checkpoint.save_model(out / f"epoch_{row.epoch:04d}.pgkt", model)

        history = train(model, (x_tr, y_tr), (x_te, y_te), cfg.train_config(), on_epoch)
        stage("summarize")
        checkpoint.save_model(out / "model.pgkt", model)
        summary = summarize(history, cfg, pca.fingerprint())
        _dump_json(out / "summary.json", summary)
        log.info("summary: %s", summary)
        return summary
    except PgketError as exc:
        log.error("stage '%s' failed: %s", current["stage"], exc)
        raise
    except Exception as exc:
        log.error("stage '%s' failed: %s", current["stage"], exc)
        raise StageError(current["stage"], exc) from exc
    finally:
        pkg_log.removeHandler(handler)
        pkg_log.setLevel(old_level)
        handler.close()


def evaluate_run(run_dir, split="test", backend=None, checkpoint_path=None):
    """Reload a run's config and checkpoint, rebuild its data split and score it."""
    run = Path(run_dir)
    cfg = ExperimentConfig.from_json(run / "config.json")
    params = checkpoint.load_params(checkpoint_path or run / "model.pgkt")
    model = EncoderClassifier(cfg.model_config(), params=params)
    x_tr, y_tr, x_te, y_te, _ = prepare_data(cfg)
    x, y = (x_te, y_te) if split == "test" else (x_tr, y_tr)
    loss, acc = evaluate(model, x, y, backend, SeededRng(cfg.seed).child("eval", "checkpoint", split))
    return {"split": split, "loss": loss, "acc": acc, "count": int(len(y))}


def noise_compare(cfg, out_dir, sigma=0.4):
    """Paired clean/noisy runs plus a Final Acc / Loss / Conv Epoch comparison table."""
    out = Path(out_dir)
    clean = run_experiment(cfg.replace(noise_sigma=0.0), out / "clean")
    noisy = run_experiment(cfg.replace(noise_sigma=sigma), out / "noisy")
    rows = [
        ("Final Acc", clean["final_acc"], noisy["final_acc"]),
        ("Loss", clean["final_loss"], noisy["final_loss"]),
        ("Conv Epoch", clean["conv_epoch"], noisy["conv_epoch"]),
    ]
    table = [{"metric": m, "clean": c, "noisy": n, "delta": n - c} for m, c, n in rows]
    with (out / "comparison.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "clean", "noisy", "delta"])
        for r in table:
            w.writerow([r["metric"], _fmt(r["clean"]), _fmt(r["noisy"]), _fmt(r["delta"])])
    result = {"sigma": sigma, "rows": table, "clean": clean, "noisy": noisy}
    _dump_json(out / "comparison.json", result)
    return result
