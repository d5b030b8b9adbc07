import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinydrop.dropper import TokenSelection
from tinydrop.flops import (
    FlopsReport, baseline_flops, gradcam_backward_flops, guidance_forward_flops, pipeline_flops,
    vit_forward_breakdown, vit_forward_flops,
)
from tinydrop.model import ViTConfig, ViTModel, init_weights
from tinydrop.policy import Exit, Proceed
from tinydrop.tensor import count_ops

TINY = ViTConfig(image_size=32, patch_size=16, dim=8, depth=1, heads=2, mlp_ratio=2.0, num_classes=4)


def test_tiny_forward_frozen():
    # hand count for n=5 tokens: patch 49184, positions 40, block linear 6760,
    # attention 1100, head 132
    b = vit_forward_breakdown(TINY, 5)
    assert b == {"patch_embed": 49184, "linear": 6800, "quadratic": 1100, "head": 132}
    assert vit_forward_flops(TINY, 5) == 57216


def test_gradcam_frozen():
    cfg = ViTConfig(image_size=16, patch_size=16, dim=1, depth=1, heads=1, num_classes=1, readout="mean")
    assert gradcam_backward_flops(cfg) == 43


def test_pipeline_report():
    g = ViTConfig(dim=8, depth=1, heads=2, readout="mean")
    t = ViTConfig(dim=32, depth=2, heads=2)
    ex = pipeline_flops(Exit(0, 0.99), g, t)
    assert (ex.gradcam_backward, ex.target_forward, ex.token_count_used) == (0, 0, 0)
    assert ex.total == guidance_forward_flops(g)
    pr = pipeline_flops(Proceed(0.5, 0.5, 8), g, t)
    assert pr.token_count_used == 9
    assert pr.total == guidance_forward_flops(g) + gradcam_backward_flops(g, 16) + vit_forward_flops(t, 9)
    assert pr.to_dict()["total"] == pr.total
    with pytest.raises(ValueError):
        pipeline_flops(Proceed(0.5), g, t)
    with pytest.raises(ValueError):
        FlopsReport(-1, 0, 0, 0)


def test_keeping_all_tokens_costs_more_than_baseline():
    g = ViTConfig(dim=8, depth=1, heads=2, readout="mean")
    t = ViTConfig(dim=32, depth=2, heads=2)
    assert pipeline_flops(Proceed(0.1, 0.0, 16), g, t).total > baseline_flops(t)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["absolute", "relative_bias"]), st.sampled_from(["cls", "mean"]),
       st.integers(0, 3), st.sets(st.integers(0, 15), min_size=1))
def test_counter_matches_analytic_on_reduced_sequences(pos_mode, readout, depth, keep):
    cfg = ViTConfig(dim=8, depth=depth, heads=2, num_classes=3, pos_mode=pos_mode, readout=readout)
    model = ViTModel(cfg, init_weights(cfg, 0))
    sel = TokenSelection(tuple(sorted(keep)))
    with count_ops() as c:
        model.forward_selected(np.zeros((3, 64, 64)), sel)
    assert c.flops == vit_forward_flops(cfg, sel.k + 1)


@given(st.integers(1, 200))
def test_monotone_in_tokens(n):
    assert vit_forward_flops(TINY, n) < vit_forward_flops(TINY, n + 1)
