"""Analytic FLOP accounting for the guided token-dropping pipeline.

Convention: one multiply-add is 2 FLOPs. Non-matmul work is charged at the
per-element constants listed in :mod:`tinydrop.tensor` (softmax 5, LayerNorm
8, GELU 8, add/scale 1). The instrumented counter in that module charges the
same constants, so an audited forward pass and :func:`vit_forward_flops` agree.

For a sequence of ``n`` tokens, width ``C``, ``H`` heads and MLP width ``h``:

* patch embedding: ``2*T*C*patch_dim + T*C`` (always all ``T`` patches)
* absolute positions: ``n*C``
* per block, linear in n: ``8nC^2 + 4nCh`` matmuls + ``23nC + 9nh`` elementwise
  (two LayerNorms, biases, residuals, GELU)
* per block, quadratic in n: ``4n^2 C`` matmuls + ``6 H n^2``
  (scale + softmax), plus ``H n^2`` for relative bias
* readout: free for the class token; ``(n-1)*C + C`` for mean pooling
* head: ``8C`` (final norm on the readout) + ``2*C*classes + classes``

Grad-CAM backward is modelled as twice the forward cost of the tail it
differentiates (readout over ``T+1`` tokens, final norm, head) plus the
reduction terms: channel pooling ``T*C + C``, weighted sum ``2*T*C``, ReLU
``T``, and on the target grid ``T'``: bilinear resize ``8T'``, min-max
``3T'``, top-K scan ``T'``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ViTConfig
from .policy import Exit, ExitDecision, Proceed
from .tensor import GELU_FLOPS, LAYER_NORM_FLOPS, SOFTMAX_FLOPS

RESIZE_FLOPS = 8
NORMALIZE_FLOPS = 3
TOPK_FLOPS = 1


@dataclass(frozen=True)
class FlopsReport:
    guidance_forward: int
    gradcam_backward: int
    target_forward: int
    token_count_used: int
    total: int = field(init=False)

    def __post_init__(self):
        if min(self.guidance_forward, self.gradcam_backward, self.target_forward) < 0:
            raise ValueError("FLOP components must be non-negative")
        object.__setattr__(
            self, "total", self.guidance_forward + self.gradcam_backward + self.target_forward
        )

    def to_dict(self) -> dict:
        return {
            "guidance_forward": self.guidance_forward,
            "gradcam_backward": self.gradcam_backward,
            "target_forward": self.target_forward,
            "total": self.total,
            "token_count_used": self.token_count_used,
        }


def block_linear_flops(cfg: ViTConfig, n: int) -> int:
    C, h = cfg.dim, cfg.hidden
    matmuls = 2 * n * C * 3 * C + 2 * n * C * C + 2 * n * C * h + 2 * n * h * C
    norms = 2 * LAYER_NORM_FLOPS * n * C
    biases = 3 * n * C + n * C + n * h + n * C
    residuals = 2 * n * C
    return matmuls + norms + biases + residuals + GELU_FLOPS * n * h


def block_quadratic_flops(cfg: ViTConfig, n: int) -> int:
    H = cfg.heads
    per_elem = 1 + SOFTMAX_FLOPS + (1 if cfg.pos_mode == "relative_bias" else 0)
    return 4 * n * n * cfg.dim + per_elem * H * n * n


def head_flops(cfg: ViTConfig) -> int:
    return LAYER_NORM_FLOPS * cfg.dim + 2 * cfg.dim * cfg.num_classes + cfg.num_classes


def readout_flops(cfg: ViTConfig, n: int) -> int:
    return 0 if cfg.readout == "cls" else (n - 1) * cfg.dim + cfg.dim


def vit_forward_breakdown(cfg: ViTConfig, n_tokens: int) -> dict[str, int]:
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    T, C = cfg.num_patches, cfg.dim
    linear = cfg.depth * block_linear_flops(cfg, n_tokens)
    if cfg.pos_mode == "absolute":
        linear += n_tokens * C
    linear += readout_flops(cfg, n_tokens)
    return {
        "patch_embed": 2 * T * C * cfg.patch_dim + T * C,
        "linear": linear,
        "quadratic": cfg.depth * block_quadratic_flops(cfg, n_tokens),
        "head": head_flops(cfg),
    }


def vit_forward_flops(cfg: ViTConfig, n_tokens: int) -> int:
    return sum(vit_forward_breakdown(cfg, n_tokens).values())


def gradcam_reduction_flops(cfg: ViTConfig, target_tokens: int | None = None) -> int:
    T, C = cfg.num_patches, cfg.dim
    t_out = T if target_tokens is None else target_tokens
    pooling = T * C + C + 2 * T * C + T
    return pooling + (RESIZE_FLOPS + NORMALIZE_FLOPS + TOPK_FLOPS) * t_out


def gradcam_backward_flops(guidance_cfg: ViTConfig, target_tokens: int | None = None) -> int:
    """Tail backward (2x tail forward) plus pooling, resize, normalise and top-K."""
    tail = readout_flops(guidance_cfg, guidance_cfg.num_patches + 1) + head_flops(guidance_cfg)
    return 2 * tail + gradcam_reduction_flops(guidance_cfg, target_tokens)


def guidance_forward_flops(cfg: ViTConfig) -> int:
    # full-sequence forward plus the softmax that yields the confidence
    return vit_forward_flops(cfg, cfg.num_patches + 1) + SOFTMAX_FLOPS * cfg.num_classes


def baseline_flops(target_cfg: ViTConfig) -> int:
    return vit_forward_flops(target_cfg, target_cfg.num_patches + 1)


def pipeline_flops(decision: ExitDecision, guidance_cfg: ViTConfig, target_cfg: ViTConfig) -> FlopsReport:
    g = guidance_forward_flops(guidance_cfg)
    if isinstance(decision, Exit):
        return FlopsReport(g, 0, 0, 0)
    if not isinstance(decision, Proceed) or decision.kept_count is None:
        raise ValueError(f"decision lacks a kept count: {decision!r}")
    k = decision.kept_count
    return FlopsReport(
        g,
        gradcam_backward_flops(guidance_cfg, target_cfg.num_patches),
        vit_forward_flops(target_cfg, k + 1),
        k + 1,
    )
