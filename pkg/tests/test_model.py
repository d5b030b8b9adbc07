import numpy as np
import pytest

from conftest import tiny_config, tiny_model
from tinydrop.dropper import AdaptationError, AdaptedPositional, TokenSelection
from tinydrop.model import (
    ConfigError, ViTConfig, ViTWeights, batch_logits, check_weights, expected_shapes, forward,
    image_patches, init_weights, loss_and_grads,
)


def test_config_validation():
    with pytest.raises(ConfigError):
        ViTConfig(image_size=30, patch_size=16)
    with pytest.raises(ConfigError):
        ViTConfig(dim=10, heads=3)
    with pytest.raises(ConfigError):
        ViTConfig(pos_mode="rope")
    with pytest.raises(ConfigError):
        ViTConfig.from_dict({"dim": 8, "colour": 1})
    cfg = tiny_config()
    assert ViTConfig.from_dict(cfg.to_dict()) == cfg


def test_image_patches_raster_order():
    cfg = tiny_config(image_size=4, patch_size=2, channels=1, dim=2, heads=1)
    img = np.arange(16.0).reshape(1, 4, 4)
    p = image_patches(img, cfg)
    np.testing.assert_array_equal(p[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(p[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(p[2], [8, 9, 12, 13])


@pytest.mark.parametrize("pos_mode", ["absolute", "relative_bias"])
@pytest.mark.parametrize("readout", ["cls", "mean"])
def test_full_selection_matches_full_forward(pos_mode, readout):
    m = tiny_model(pos_mode=pos_mode, readout=readout)
    img = np.random.default_rng(0).uniform(size=(3, 32, 32))
    a = m.forward_full(img)
    b = m.forward_selected(img, TokenSelection.all(m.cfg.num_patches))
    np.testing.assert_array_equal(a.logits, b.logits)
    assert a.token_counts == [17] * m.cfg.depth


def test_batch_logits_matches_single():
    m = tiny_model(pos_mode="relative_bias", depth=2)
    imgs = np.random.default_rng(1).uniform(size=(3, 3, 32, 32))
    np.testing.assert_allclose(batch_logits(imgs, m.cfg, m.weights),
                               np.stack([m.forward_full(x).logits for x in imgs]), atol=1e-12)


def test_reduced_sequence_shapes():
    m = tiny_model()
    trace = m.forward_selected(np.zeros((3, 32, 32)), TokenSelection((3, 7, 12)))
    assert trace.final_block_features.shape == (4, m.cfg.dim)
    assert trace.logits.shape == (m.cfg.num_classes,)


def test_positional_mismatch_raises():
    m = tiny_model()
    tokens = np.zeros((4, m.cfg.dim))
    with pytest.raises(AdaptationError):
        forward(tokens, AdaptedPositional("absolute", pos=np.zeros((5, m.cfg.dim))), m.cfg, m.weights)
    with pytest.raises(AdaptationError):
        forward(tokens, AdaptedPositional("relative_bias", bias=np.zeros((4, 4, 2))), m.cfg, m.weights)


def test_weights_roundtrip_dict_and_shape_check():
    cfg = tiny_config(depth=2)
    w = init_weights(cfg, 3)
    d = w.to_dict()
    assert {k: v.shape for k, v in d.items()} == expected_shapes(cfg)
    w2 = ViTWeights.from_dict(cfg, d)
    for k in d:
        np.testing.assert_array_equal(d[k], w2.to_dict()[k])
    d["head_w"] = np.zeros((2, 2))
    with pytest.raises(ConfigError):
        check_weights(cfg, ViTWeights.from_dict(cfg, d))


def test_init_is_seeded():
    cfg = tiny_config()
    a, b, c = init_weights(cfg, 1), init_weights(cfg, 1), init_weights(cfg, 2)
    assert np.array_equal(a.head_w, b.head_w) and not np.array_equal(a.head_w, c.head_w)


@pytest.mark.parametrize("pos_mode", ["absolute", "relative_bias"])
@pytest.mark.parametrize("readout", ["cls", "mean"])
def test_loss_gradients_match_finite_differences(pos_mode, readout):
    cfg = tiny_config(image_size=16, patch_size=8, depth=2, pos_mode=pos_mode, readout=readout)
    w = init_weights(cfg, 7)
    rng = np.random.default_rng(2)
    imgs = rng.uniform(size=(2, 3, 16, 16))
    labels = np.array([0, 2])
    _, grads, _ = loss_and_grads(imgs, labels, cfg, w)
    params = w.to_dict()
    h = 1e-6
    for name in ["patch_projection", "class_token", "blocks.0.qkv_w", "blocks.1.fc1_w", "norm_g", "head_w",
                 "pos_embed" if pos_mode == "absolute" else "rel_bias"]:
        for _ in range(3):
            idx = tuple(int(rng.integers(s)) for s in params[name].shape)
            vals = []
            for sgn in (1, -1):
                p = {k: v.copy() for k, v in params.items()}
                p[name][idx] += sgn * h
                vals.append(loss_and_grads(imgs, labels, cfg, ViTWeights.from_dict(cfg, p))[0])
            fd = (vals[0] - vals[1]) / (2 * h)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-8), name
