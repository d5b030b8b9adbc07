"""Grad-CAM token importance from the guidance model, resampled to the target grid."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .model import ConfigError, ForwardTrace, ViTConfig, ViTModel, ViTWeights, tail_backward
from .tensor import bilinear_resize, minmax_normalize


@dataclass(frozen=True)
class SaliencyMap:
    grid_h: int
    grid_w: int
    scores: np.ndarray

    def __post_init__(self):
        if self.scores.shape != (self.grid_h * self.grid_w,):
            raise ValueError(f"scores shape {self.scores.shape} != ({self.grid_h * self.grid_w},)")

    @property
    def grid(self) -> np.ndarray:
        return self.scores.reshape(self.grid_h, self.grid_w)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for row in self.grid:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()


def tail_gradient(trace: ForwardTrace, class_index: int, cfg: ViTConfig, weights: ViTWeights) -> np.ndarray:
    """d logit[class_index] / d final_block_features, shape (T+1, C)."""
    if not 0 <= class_index < cfg.num_classes:
        raise ValueError(f"class_index {class_index} out of range for {cfg.num_classes} classes")
    onehot = np.zeros(cfg.num_classes)
    onehot[class_index] = 1.0
    return tail_backward(trace.final_block_features, onehot, cfg, weights)


def grad_cam(trace: ForwardTrace, grad: np.ndarray, guidance_grid: tuple[int, int]) -> np.ndarray:
    feats = trace.final_block_features
    if grad.shape != feats.shape:
        raise ValueError(f"gradient shape {grad.shape} != feature shape {feats.shape}")
    h, w = guidance_grid
    A = feats[1:]
    alpha = grad[1:].mean(axis=0)
    cam = np.maximum(A @ alpha, 0.0)
    return cam.reshape(h, w)


def _square_side(n: int) -> int:
    side = math.isqrt(n)
    if side * side != n:
        raise ConfigError(f"target token count {n} is not a perfect square")
    return side


def saliency_from_trace(
    trace: ForwardTrace, cfg: ViTConfig, weights: ViTWeights, class_index: int, target_tokens: int
) -> SaliencyMap:
    side = _square_side(target_tokens)
    grad = tail_gradient(trace, class_index, cfg, weights)
    cam = grad_cam(trace, grad, (cfg.grid, cfg.grid))
    return resample_map(cam, target_tokens)


def resample_map(cam: np.ndarray, target_tokens: int) -> SaliencyMap:
    """Bilinearly resize a 2-D map onto the square target grid, then min-max normalise."""
    side = _square_side(target_tokens)
    resized = bilinear_resize(cam, side, side)
    return SaliencyMap(side, side, minmax_normalize(resized).ravel())


def saliency_for_target(
    image, guidance_cfg: ViTConfig, guidance_weights: ViTWeights, class_index: int | None, target_tokens: int
) -> SaliencyMap:
    """Saliency over the target token grid; ``class_index=None`` uses the guidance argmax."""
    _square_side(target_tokens)
    trace = ViTModel(guidance_cfg, guidance_weights).forward_full(image)
    if class_index is None:
        class_index = int(np.argmax(trace.logits))
    return saliency_from_trace(trace, guidance_cfg, guidance_weights, class_index, target_tokens)
