"""Minimal full-token trainer used only to obtain non-trivial desk-scale weights."""

from __future__ import annotations

import logging

import numpy as np

from .data import ToyDataset
from .model import ViTConfig, ViTModel, ViTWeights, batch_logits, init_weights, loss_and_grads

log = logging.getLogger(__name__)

CLIP_NORM = 5.0


class TrainingError(RuntimeError):
    pass


def accuracy(model: ViTModel, ds: ToyDataset, batch_size: int = 256) -> float:
    preds = predict(model, ds, batch_size)
    return float(np.mean(preds == ds.labels))


def predict(model: ViTModel, ds: ToyDataset, batch_size: int = 256) -> np.ndarray:
    out = []
    for s in range(0, len(ds), batch_size):
        logits = batch_logits(ds.images[s:s + batch_size], model.cfg, model.weights)
        out.append(np.argmax(logits, axis=-1))
    return np.concatenate(out)


def train_toy(
    model: ViTModel,
    dataset: ToyDataset,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
    momentum: float = 0.9,
    history: list | None = None,
) -> ViTWeights:
    """Cross-entropy SGD with momentum and global-norm clipping.

    Returns fresh weights; ``model.weights`` is left untouched. Per-epoch
    ``(loss, train_accuracy)`` pairs are appended to ``history`` if given.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    if not dataset.has_labels():
        raise ValueError("training needs labels")
    cfg = model.cfg
    params = {k: v.copy() for k, v in model.weights.to_dict().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(seed)
    n = len(dataset)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            w = ViTWeights.from_dict(cfg, params)
            loss, grads, logits = loss_and_grads(dataset.images[idx], dataset.labels[idx], cfg, w)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss} at epoch {epoch}; lower the learning rate")
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            clip = min(1.0, CLIP_NORM / (norm + 1e-12))
            for k, g in grads.items():
                velocity[k] = momentum * velocity[k] + clip * g
                params[k] -= lr * velocity[k]
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, -1) == dataset.labels[idx]))
        stats = (total / n, correct / n)
        log.info("epoch %d loss %.4f acc %.4f", epoch, *stats)
        if history is not None:
            history.append(stats)
    return ViTWeights.from_dict(cfg, params)


def fit(cfg, dataset: ToyDataset, epochs: int, lr: float, seed: int, **kw) -> ViTModel:
    """Initialise from ``seed`` and train; convenience wrapper for scripts and tests."""
    model = ViTModel(cfg, init_weights(cfg, seed))
    return ViTModel(cfg, train_toy(model, dataset, epochs, lr, seed, **kw))


# Desk-scale model pair: a tiny pooled-readout guidance and a larger
# class-token target, both on the 64x64 / patch-16 toy grid.
GUIDANCE_PRESET = dict(dim=8, depth=1, heads=2, mlp_ratio=2.0, readout="mean")
TARGET_PRESET = dict(dim=64, depth=4, heads=4, mlp_ratio=2.0, readout="cls")
RECIPES = {
    "guidance": dict(epochs=12, lr=0.01),
    "target": dict(epochs=7, lr=0.005),
}


def preset_config(role: str, num_classes: int, **overrides) -> ViTConfig:
    base = GUIDANCE_PRESET if role == "guidance" else TARGET_PRESET
    return ViTConfig(**{**base, "num_classes": num_classes, **overrides})
