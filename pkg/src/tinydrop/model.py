"""Desk-scale vision transformer used for both the guidance and the target model.

Blocks are pre-norm::

    a = LN1(h);  y = h + MHSA(a);  z = y + MLP(LN2(y))

Logits come from a readout vector after a final LayerNorm: the class-token
row (``readout="cls"``, the usual ViT head) or the mean of the patch rows
(``readout="mean"``, a pooled head whose gradient reaches every token, which
is what Grad-CAM on the guidance model needs). All forward
math goes through :mod:`tinydrop.tensor` so it is FLOP-audited; the
hand-written backward passes below use raw numpy and are never counted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Literal

import numpy as np

from . import tensor as T
from .dropper import (
    AdaptationError,
    AdaptedPositional,
    TokenSelection,
    adapt_positional,
    gather_tokens,
)

LN_EPS = 1e-6


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 64
    patch_size: int = 16
    channels: int = 3
    dim: int = 32
    depth: int = 2
    heads: int = 2
    mlp_ratio: float = 2.0
    num_classes: int = 4
    pos_mode: Literal["absolute", "relative_bias"] = "absolute"
    readout: Literal["cls", "mean"] = "cls"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.pos_mode not in ("absolute", "relative_bias"):
            raise ConfigError(f"unknown pos_mode {self.pos_mode!r}")
        if self.readout not in ("cls", "mean"):
            raise ConfigError(f"unknown readout {self.readout!r}")
        if min(self.image_size, self.patch_size, self.channels, self.dim, self.heads,
               self.num_classes) < 1 or self.depth < 0 or self.mlp_ratio <= 0:
            raise ConfigError(f"invalid config {self}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def hidden(self) -> int:
        return max(1, int(round(self.dim * self.mlp_ratio)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class BlockWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    qkv_w: np.ndarray
    qkv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray


BLOCK_FIELDS = [f.name for f in fields(BlockWeights)]


@dataclass
class ViTWeights:
    patch_projection: np.ndarray
    patch_bias: np.ndarray
    class_token: np.ndarray
    blocks: list[BlockWeights]
    norm_g: np.ndarray
    norm_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    pos_embed: np.ndarray | None = None
    rel_bias: np.ndarray | None = None

    def to_dict(self) -> dict[str, np.ndarray]:
        """Flat name -> array mapping in a fixed order (the serialization order)."""
        out = {
            "patch_projection": self.patch_projection,
            "patch_bias": self.patch_bias,
            "class_token": self.class_token,
        }
        if self.pos_embed is not None:
            out["pos_embed"] = self.pos_embed
        if self.rel_bias is not None:
            out["rel_bias"] = self.rel_bias
        for i, blk in enumerate(self.blocks):
            for name in BLOCK_FIELDS:
                out[f"blocks.{i}.{name}"] = getattr(blk, name)
        out.update(norm_g=self.norm_g, norm_b=self.norm_b, head_w=self.head_w, head_b=self.head_b)
        return out

    @classmethod
    def from_dict(cls, cfg: ViTConfig, d: dict[str, np.ndarray]) -> "ViTWeights":
        blocks = [
            BlockWeights(**{name: d[f"blocks.{i}.{name}"] for name in BLOCK_FIELDS})
            for i in range(cfg.depth)
        ]
        w = cls(
            patch_projection=d["patch_projection"],
            patch_bias=d["patch_bias"],
            class_token=d["class_token"],
            blocks=blocks,
            norm_g=d["norm_g"],
            norm_b=d["norm_b"],
            head_w=d["head_w"],
            head_b=d["head_b"],
            pos_embed=d.get("pos_embed"),
            rel_bias=d.get("rel_bias"),
        )
        check_weights(cfg, w)
        return w


def expected_shapes(cfg: ViTConfig) -> dict[str, tuple[int, ...]]:
    C, h, n = cfg.dim, cfg.hidden, cfg.num_patches + 1
    shapes: dict[str, tuple[int, ...]] = {
        "patch_projection": (cfg.patch_dim, C),
        "patch_bias": (C,),
        "class_token": (1, C),
    }
    if cfg.pos_mode == "absolute":
        shapes["pos_embed"] = (n, C)
    else:
        shapes["rel_bias"] = (n, n, cfg.heads)
    blk = {
        "ln1_g": (C,), "ln1_b": (C,),
        "qkv_w": (C, 3 * C), "qkv_b": (3 * C,),
        "proj_w": (C, C), "proj_b": (C,),
        "ln2_g": (C,), "ln2_b": (C,),
        "fc1_w": (C, h), "fc1_b": (h,),
        "fc2_w": (h, C), "fc2_b": (C,),
    }
    for i in range(cfg.depth):
        for name in BLOCK_FIELDS:
            shapes[f"blocks.{i}.{name}"] = blk[name]
    shapes.update(norm_g=(C,), norm_b=(C,), head_w=(C, cfg.num_classes), head_b=(cfg.num_classes,))
    return shapes


def check_weights(cfg: ViTConfig, w: ViTWeights) -> None:
    if len(w.blocks) != cfg.depth:
        raise ConfigError(f"expected {cfg.depth} blocks, got {len(w.blocks)}")
    if (w.pos_embed is None) == (w.rel_bias is None):
        raise ConfigError("exactly one of pos_embed / rel_bias must be set")
    got = w.to_dict()
    want = expected_shapes(cfg)
    if list(got) != list(want):
        raise ConfigError(f"weight names {list(got)} do not match config {list(want)}")
    for name, shape in want.items():
        if got[name].shape != shape:
            raise ConfigError(f"{name}: shape {got[name].shape} != expected {shape}")


def init_weights(cfg: ViTConfig, seed: int = 0) -> ViTWeights:
    """Seeded init: uniform(+-1/sqrt(fan_in)) matrices, zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    d = {}
    for name, shape in expected_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            d[name] = np.ones(shape)
        elif leaf.endswith("_b") or leaf == "patch_bias":
            d[name] = np.zeros(shape)
        elif leaf in ("class_token", "pos_embed", "rel_bias"):
            d[name] = rng.uniform(-0.05, 0.05, size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            d[name] = rng.uniform(-bound, bound, size=shape)
    return ViTWeights.from_dict(cfg, d)


@dataclass
class ForwardTrace:
    """Outputs of one forward pass.

    ``final_block_features`` is the (n, C) output of the last block, i.e. the
    sequence the head reads (the embedded sequence itself when ``depth == 0``).
    """

    logits: np.ndarray
    final_block_features: np.ndarray
    token_counts: list[int] = field(default_factory=list)


# ---------------------------------------------------------------- forward


def image_patches(image: np.ndarray, cfg: ViTConfig) -> np.ndarray:
    """(channels, H, W) or (B, channels, H, W) -> (..., T, patch_dim) in raster order."""
    image = np.asarray(image, dtype=np.float64)
    want = (cfg.channels, cfg.image_size, cfg.image_size)
    if image.shape[-3:] != want:
        raise ConfigError(f"image shape {image.shape[-3:]} does not match config {want}")
    lead = image.shape[:-3]
    g, p = cfg.grid, cfg.patch_size
    x = image.reshape(*lead, cfg.channels, g, p, g, p)
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + i for i in (1, 3, 0, 2, 4))
    return x.transpose(perm).reshape(*lead, g * g, cfg.patch_dim)


def patch_embed(image: np.ndarray, cfg: ViTConfig, weights: ViTWeights) -> np.ndarray:
    return T.add(T.matmul(image_patches(image, cfg), weights.patch_projection), weights.patch_bias)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    *lead, n, c = x.shape
    return np.moveaxis(x.reshape(*lead, n, heads, c // heads), -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    x = np.moveaxis(x, -3, -2)
    *lead, n, h, d = x.shape
    return x.reshape(*lead, n, h * d)


def _attention(a, blk: BlockWeights, heads: int, bias, cache: dict | None):
    C = a.shape[-1]
    qkv = T.add(T.matmul(a, blk.qkv_w), blk.qkv_b)
    q = _split_heads(qkv[..., :C], heads)
    k = _split_heads(qkv[..., C:2 * C], heads)
    v = _split_heads(qkv[..., 2 * C:], heads)
    sc = 1.0 / math.sqrt(C // heads)
    s = T.scale(T.matmul(q, np.swapaxes(k, -1, -2)), sc)
    if bias is not None:
        s = T.add(s, np.transpose(bias, (2, 0, 1)))
    p = T.softmax(s, axis=-1)
    o = _merge_heads(T.matmul(p, v))
    out = T.add(T.matmul(o, blk.proj_w), blk.proj_b)
    if cache is not None:
        cache.update(a=a, q=q, k=k, v=v, p=p, o=o, sc=sc)
    return out


def _mlp(m, blk: BlockWeights, cache: dict | None):
    h1 = T.add(T.matmul(m, blk.fc1_w), blk.fc1_b)
    g = T.gelu(h1)
    out = T.add(T.matmul(g, blk.fc2_w), blk.fc2_b)
    if cache is not None:
        cache.update(m=m, h1=h1, g=g)
    return out


def _block(h, blk: BlockWeights, heads: int, bias, cache: dict | None):
    a = T.layer_norm(h, blk.ln1_g, blk.ln1_b, LN_EPS)
    y = T.add(h, _attention(a, blk, heads, bias, cache))
    m = T.layer_norm(y, blk.ln2_g, blk.ln2_b, LN_EPS)
    z = T.add(y, _mlp(m, blk, cache))
    if cache is not None:
        cache.update(h=h, y=y)
    return z


def _readout(x_seq, cfg: ViTConfig):
    if cfg.readout == "cls":
        return x_seq[..., 0:1, :]
    return T.mean_rows(x_seq[..., 1:, :])


def _readout_backward(dr, x_shape, cfg: ViTConfig):
    dx = np.zeros(x_shape)
    if cfg.readout == "cls":
        dx[..., 0:1, :] = dr
    else:
        dx[..., 1:, :] = dr / (x_shape[-2] - 1)
    return dx


def _head(x_seq, cfg: ViTConfig, weights: ViTWeights):
    r = _readout(x_seq, cfg)
    f = T.layer_norm(r, weights.norm_g, weights.norm_b, LN_EPS)
    logits = T.add(T.matmul(f, weights.head_w), weights.head_b)
    return logits[..., 0, :], r


def _embed_positional(tokens, pos: AdaptedPositional, cfg: ViTConfig):
    n = tokens.shape[-2]
    if pos.mode != cfg.pos_mode:
        raise AdaptationError(f"positional mode {pos.mode} but model uses {cfg.pos_mode}")
    if pos.mode == "absolute":
        if pos.pos is None or pos.pos.shape != (n, cfg.dim):
            got = None if pos.pos is None else pos.pos.shape
            raise AdaptationError(f"positional table {got} does not match {n} tokens")
        return T.add(tokens, pos.pos), None
    if pos.bias is None or pos.bias.shape != (n, n, cfg.heads):
        got = None if pos.bias is None else pos.bias.shape
        raise AdaptationError(f"relative bias {got} does not match {n} tokens")
    return tokens, pos.bias


def forward(tokens: np.ndarray, pos: AdaptedPositional, cfg: ViTConfig, weights: ViTWeights) -> ForwardTrace:
    """Run the transformer on a (K+1, C) sequence whose row 0 is the class token."""
    tokens = np.asarray(tokens, dtype=np.float64)
    x, bias = _embed_positional(tokens, pos, cfg)
    counts = []
    for blk in weights.blocks:
        counts.append(x.shape[-2])
        x = _block(x, blk, cfg.heads, bias, None)
    logits, _ = _head(x, cfg, weights)
    return ForwardTrace(logits, x, counts)


def full_positional(cfg: ViTConfig, weights: ViTWeights) -> AdaptedPositional:
    if cfg.pos_mode == "absolute":
        return AdaptedPositional("absolute", pos=weights.pos_embed)
    return AdaptedPositional("relative_bias", bias=weights.rel_bias)


def positional_table(cfg: ViTConfig, weights: ViTWeights) -> np.ndarray:
    return weights.pos_embed if cfg.pos_mode == "absolute" else weights.rel_bias


@dataclass(frozen=True)
class ViTModel:
    """A config and its weights, treated as immutable after construction."""

    cfg: ViTConfig
    weights: ViTWeights

    def embed(self, image) -> tuple[np.ndarray, np.ndarray]:
        return patch_embed(image, self.cfg, self.weights), self.weights.class_token

    def forward_selected(self, image, sel: TokenSelection) -> ForwardTrace:
        x_patch, x_cls = self.embed(image)
        tokens = gather_tokens(x_patch, x_cls, sel)
        pos = adapt_positional(self.cfg.pos_mode, positional_table(self.cfg, self.weights), sel)
        return forward(tokens, pos, self.cfg, self.weights)

    def forward_full(self, image) -> ForwardTrace:
        x_patch, x_cls = self.embed(image)
        tokens = np.concatenate([x_cls, x_patch], axis=0)
        return forward(tokens, full_positional(self.cfg, self.weights), self.cfg, self.weights)


# ---------------------------------------------------------------- backward


def _sum_lead(x: np.ndarray, keep: int) -> np.ndarray:
    return x.reshape(-1, *x.shape[x.ndim - keep:]).sum(axis=0)


def _wgrad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _ln_backward(dy, x, g):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, _sum_lead(dy * xhat, 1), _sum_lead(dy, 1)


def _attention_backward(dout, blk: BlockWeights, heads: int, c: dict, grads: dict | None, prefix: str):
    """Returns (d a, d bias as (n, n, H) summed over the batch)."""
    do_merged = dout @ blk.proj_w.T
    do = _split_heads(do_merged, heads)
    p, v, q, k = c["p"], c["v"], c["q"], c["k"]
    dp = do @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(p, -1, -2) @ do
    ds = p * (dp - (dp * p).sum(-1, keepdims=True))
    dbias = np.transpose(_sum_lead(ds, 3), (1, 2, 0))
    ds = ds * c["sc"]
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    dqkv = np.concatenate([_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
    if grads is not None:
        grads[prefix + "proj_w"] = _wgrad(c["o"], dout)
        grads[prefix + "proj_b"] = _sum_lead(dout, 1)
        grads[prefix + "qkv_w"] = _wgrad(c["a"], dqkv)
        grads[prefix + "qkv_b"] = _sum_lead(dqkv, 1)
    return dqkv @ blk.qkv_w.T, dbias


def _mlp_backward(dout, blk: BlockWeights, c: dict, grads: dict | None, prefix: str):
    dg = dout @ blk.fc2_w.T
    dh1 = dg * T.gelu_grad(c["h1"])
    if grads is not None:
        grads[prefix + "fc2_w"] = _wgrad(c["g"], dout)
        grads[prefix + "fc2_b"] = _sum_lead(dout, 1)
        grads[prefix + "fc1_w"] = _wgrad(c["m"], dh1)
        grads[prefix + "fc1_b"] = _sum_lead(dh1, 1)
    return dh1 @ blk.fc1_w.T


def _block_backward(dz, blk: BlockWeights, heads: int, c: dict, grads: dict | None, prefix: str):
    """Back through one block; returns (d h, d a, d bias)."""
    dm = _mlp_backward(dz, blk, c, grads, prefix)
    dy_ln, dg2, db2 = _ln_backward(dm, c["y"], blk.ln2_g)
    dy = dz + dy_ln
    da, dbias = _attention_backward(dy, blk, heads, c, grads, prefix)
    dh_ln, dg1, db1 = _ln_backward(da, c["h"], blk.ln1_g)
    if grads is not None:
        grads.update({prefix + "ln2_g": dg2, prefix + "ln2_b": db2,
                      prefix + "ln1_g": dg1, prefix + "ln1_b": db1})
    return dy + dh_ln, da, dbias


def _head_backward(dlogits, r, weights: ViTWeights, grads: dict | None):
    """dlogits (..., classes); r the (..., 1, C) readout. Returns d r."""
    f = T.layer_norm(r, weights.norm_g, weights.norm_b, LN_EPS)
    dl = dlogits[..., None, :]
    df = dl @ weights.head_w.T
    dr, dg, db = _ln_backward(df, r, weights.norm_g)
    if grads is not None:
        grads["head_w"] = _wgrad(f, dl)
        grads["head_b"] = _sum_lead(dl, 1)
        grads["norm_g"], grads["norm_b"] = dg, db
    return dr


def tail_logits(features: np.ndarray, cfg: ViTConfig, weights: ViTWeights) -> np.ndarray:
    """Logits as a function of the final block's output: norm, readout, head."""
    return _head(features, cfg, weights)[0]


def tail_backward(features: np.ndarray, dlogits: np.ndarray, cfg: ViTConfig, weights: ViTWeights) -> np.ndarray:
    """Gradient of ``dlogits . logits`` with respect to the final block's output."""
    _, r = _head(features, cfg, weights)
    dr = _head_backward(dlogits, r, weights, None)
    return _readout_backward(dr, features.shape, cfg)


def loss_and_grads(images: np.ndarray, labels: np.ndarray, cfg: ViTConfig, weights: ViTWeights):
    """Mean cross-entropy over a batch and its gradient for every weight tensor.

    Returns ``(loss, grads, logits)`` where ``grads`` has the keys of
    :meth:`ViTWeights.to_dict`.
    """
    B = images.shape[0]
    x_patch = patch_embed(images, cfg, weights)
    cls = np.broadcast_to(weights.class_token, (B, 1, cfg.dim))
    tokens = np.concatenate([cls, x_patch], axis=1)
    bias = None
    if cfg.pos_mode == "absolute":
        x = tokens + weights.pos_embed
    else:
        x, bias = tokens, weights.rel_bias
    caches = []
    for blk in weights.blocks:
        c: dict = {}
        x = _block(x, blk, cfg.heads, bias, c)
        caches.append(c)
    logits, r = _head(x, cfg, weights)

    probs = T.softmax(logits, axis=-1)
    loss = float(-np.mean(np.log(probs[np.arange(B), labels] + 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B

    grads: dict[str, np.ndarray] = {}
    dx = _readout_backward(_head_backward(dlogits, r, weights, grads), x.shape, cfg)
    dbias_total = np.zeros_like(weights.rel_bias) if bias is not None else None
    for i in range(cfg.depth - 1, -1, -1):
        dx, _, dbias = _block_backward(dx, weights.blocks[i], cfg.heads, caches[i], grads, f"blocks.{i}.")
        if dbias_total is not None:
            dbias_total += dbias
    if cfg.pos_mode == "absolute":
        grads["pos_embed"] = dx.sum(axis=0)
    else:
        grads["rel_bias"] = dbias_total
    grads["class_token"] = dx[:, 0:1, :].sum(axis=0)
    dpatch = dx[:, 1:, :]
    patches = image_patches(images, cfg)
    grads["patch_projection"] = _wgrad(patches, dpatch)
    grads["patch_bias"] = _sum_lead(dpatch, 1)
    return loss, grads, logits


def batch_logits(images: np.ndarray, cfg: ViTConfig, weights: ViTWeights) -> np.ndarray:
    """Full-token logits for a (B, channels, H, W) batch, no caching."""
    x_patch = patch_embed(images, cfg, weights)
    cls = np.broadcast_to(weights.class_token, (x_patch.shape[0], 1, cfg.dim))
    tokens = np.concatenate([cls, x_patch], axis=1)
    x, bias = _embed_positional(tokens, full_positional(cfg, weights), cfg)
    for blk in weights.blocks:
        x = _block(x, blk, cfg.heads, bias, None)
    return _head(x, cfg, weights)[0]
