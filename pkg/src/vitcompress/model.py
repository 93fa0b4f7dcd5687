"""Vision transformer with per-dimension sparsity masks in the forward pass.

The q/k/v projections of every block are stored as full-width super matrices
[embed_dim x heads*head_dim]; per-head weights are contiguous column slices.
One mask vector per (layer, head) multiplies q, k and v alike; one mask
vector per layer multiplies the MLP hidden activation after the GELU; one
tanh-activated mask value per (layer, patch) multiplies patch tokens at block
entry. The class token is never masked. Passing ``masks=None`` runs the exact
all-ones behavior (mask multiplies are skipped, which is bitwise identical).

Attention logits are scaled by 1/sqrt(head_dim) of the *configured maximum*
head dim; sliced models reuse the same constant so slice-equivalence is exact.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DataError
from .tensor import (Tensor, add, broadcast_to, concat, cross_entropy, gelu,
                     layernorm, matmul, mean_axis1, mul, reshape, scale,
                     slice_axis0, slice_last, softmax_lastdim, take_axis1,
                     tanh, transpose_last2)

LAYERNORM_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    layers: int
    heads: int
    head_dim: int
    embed_dim: int
    mlp_dim: int
    patch_size: int
    image_size: int
    num_classes: int
    channels: int = 1
    use_class_token: bool = True

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def num_patches(self):
        return self.grid * self.grid

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @property
    def num_tokens(self):
        return self.num_patches + (1 if self.use_class_token else 0)

    def validate(self):
        for name in ("layers", "heads", "head_dim", "embed_dim", "mlp_dim",
                     "patch_size", "image_size", "num_classes", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ViTConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.heads * self.head_dim != self.embed_dim:
            raise ConfigError(
                f"heads*head_dim = {self.heads * self.head_dim} must equal "
                f"embed_dim = {self.embed_dim}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ViTConfig keys: {sorted(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as e:
            raise ConfigError(f"incomplete ViTConfig: {e}") from None
        return cfg.validate()


def _trunc_normal(rng, shape, std):
    out = rng.standard_normal(shape) * std
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > bound
    return out


def init_model(config, seed):
    """Deterministic parameter dict; truncated normal weights, zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    D = config.embed_dim
    wide = config.heads * config.head_dim

    def tn(*shape):
        return Tensor(_trunc_normal(rng, shape, INIT_STD), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape), requires_grad=True)

    params = {}
    params["embed.weight"] = tn(config.patch_dim, D)
    params["embed.bias"] = zeros(D)
    params["pos_embed"] = tn(config.num_tokens, D)
    if config.use_class_token:
        params["cls_token"] = tn(D)
    for i in range(config.layers):
        pre = f"blocks.{i}."
        params[pre + "ln1.gamma"] = ones(D)
        params[pre + "ln1.beta"] = zeros(D)
        for name in ("q", "k", "v"):
            params[pre + name + ".weight"] = tn(D, wide)
            params[pre + name + ".bias"] = zeros(wide)
        params[pre + "proj.weight"] = tn(wide, D)
        params[pre + "proj.bias"] = zeros(D)
        params[pre + "ln2.gamma"] = ones(D)
        params[pre + "ln2.beta"] = zeros(D)
        params[pre + "fc1.weight"] = tn(D, config.mlp_dim)
        params[pre + "fc1.bias"] = zeros(config.mlp_dim)
        params[pre + "fc2.weight"] = tn(config.mlp_dim, D)
        params[pre + "fc2.bias"] = zeros(D)
    params["head.weight"] = tn(D, config.num_classes)
    params["head.bias"] = zeros(config.num_classes)
    return params


def param_count(params):
    return sum(t.size for t in params.values())


def extract_patches(images, config):
    """[B, C, S, S] -> [B, N, patch_dim]; patch pixels flatten channel-major."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[1:] != (config.channels, config.image_size,
                                                config.image_size):
        raise DataError(
            f"expected images [B, {config.channels}, {config.image_size}, "
            f"{config.image_size}], got {images.shape}")
    B = images.shape[0]
    g, p = config.grid, config.patch_size
    x = images.reshape(B, config.channels, g, p, g, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(B, g * g, config.patch_dim)


def patch_embed(params, images, config):
    """Tokens [B, num_tokens, D]: projected patches (+class token) + positions."""
    patches = Tensor(extract_patches(images, config))
    tok = add(matmul(patches, params["embed.weight"]), params["embed.bias"])
    if config.use_class_token:
        B = patches.shape[0]
        D = config.embed_dim
        cls = broadcast_to(reshape(params["cls_token"], (1, 1, D)), (B, 1, D))
        tok = concat([cls, tok], axis=1)
    return add(tok, params["pos_embed"])


def _attention_heads(x, wq, bq, wk, bk, wv, bv, spans, head_masks, inv_sqrt_d):
    """Per-head attention outputs; None for heads with an empty span."""
    outs = []
    for h, (s, e) in enumerate(spans):
        if e == s:
            outs.append(None)
            continue
        q = add(matmul(x, slice_last(wq, s, e)), slice_last(bq, s, e))
        k = add(matmul(x, slice_last(wk, s, e)), slice_last(bk, s, e))
        v = add(matmul(x, slice_last(wv, s, e)), slice_last(bv, s, e))
        if head_masks is not None and head_masks[h] is not None:
            z = head_masks[h]
            q = mul(q, z)
            k = mul(k, z)
            v = mul(v, z)
        logits = scale(matmul(q, transpose_last2(k)), inv_sqrt_d)
        att = softmax_lastdim(logits)
        outs.append(matmul(att, v))
    return outs


def _project_heads(head_outs, x_shape, wp, bp, dtype):
    kept = [o for o in head_outs if o is not None]
    if kept:
        cat = concat(kept, axis=2) if len(kept) > 1 else kept[0]
    else:
        cat = Tensor(np.zeros((x_shape[0], x_shape[1], 0), dtype=dtype))
    return add(matmul(cat, wp), bp)


def mhsa_forward(x, params, layer, config, head_masks=None, return_heads=False):
    """Masked multi-head self-attention for one supernet layer (no residual)."""
    pre = f"blocks.{layer}."
    d = config.head_dim
    spans = [(h * d, (h + 1) * d) for h in range(config.heads)]
    outs = _attention_heads(
        x, params[pre + "q.weight"], params[pre + "q.bias"],
        params[pre + "k.weight"], params[pre + "k.bias"],
        params[pre + "v.weight"], params[pre + "v.bias"],
        spans, head_masks, 1.0 / math.sqrt(d))
    out = _project_heads(outs, x.shape, params[pre + "proj.weight"],
                         params[pre + "proj.bias"], x.dtype)
    if return_heads:
        return out, outs
    return out


def mlp_forward(x, params, layer, config, mask=None):
    """Two-layer MLP; the mask multiplies the hidden activation after GELU."""
    pre = f"blocks.{layer}."
    t = gelu(add(matmul(x, params[pre + "fc1.weight"]), params[pre + "fc1.bias"]))
    if mask is not None:
        t = mul(t, mask)
    return add(matmul(t, params[pre + "fc2.weight"]), params[pre + "fc2.bias"])


def _check_mask_shapes(masks, config):
    want_attn = (config.layers, config.heads, config.head_dim)
    want_mlp = (config.layers, config.mlp_dim)
    want_patch = (config.layers, config.num_patches)
    if masks.attn.shape != want_attn:
        raise ConfigError(f"attention mask shape {masks.attn.shape} != {want_attn}")
    if masks.mlp.shape != want_mlp:
        raise ConfigError(f"mlp mask shape {masks.mlp.shape} != {want_mlp}")
    if masks.patch_raw.shape != want_patch:
        raise ConfigError(f"patch mask shape {masks.patch_raw.shape} != {want_patch}")


def forward(params, masks, images, config):
    """Full forward pass; masks may be a MaskSet or None (all-ones behavior)."""
    if masks is not None:
        _check_mask_shapes(masks, config)
    x = patch_embed(params, images, config)
    if masks is not None:
        eff_patch = tanh(masks.patch_raw)
        one = Tensor(np.ones(1, dtype=x.dtype))
    tokens = config.num_tokens
    for l in range(config.layers):
        pre = f"blocks.{l}."
        if masks is not None:
            pm = slice_axis0(eff_patch, l)
            tm = concat([one, pm], axis=0) if config.use_class_token else pm
            x = mul(x, reshape(tm, (tokens, 1)))
        h = layernorm(x, params[pre + "ln1.gamma"], params[pre + "ln1.beta"],
                      LAYERNORM_EPS)
        head_masks = None
        if masks is not None:
            layer_attn = slice_axis0(masks.attn, l)
            head_masks = [slice_axis0(layer_attn, h_) for h_ in range(config.heads)]
        x = add(x, mhsa_forward(h, params, l, config, head_masks))
        h2 = layernorm(x, params[pre + "ln2.gamma"], params[pre + "ln2.beta"],
                       LAYERNORM_EPS)
        mlp_mask = slice_axis0(masks.mlp, l) if masks is not None else None
        x = add(x, mlp_forward(h2, params, l, config, mlp_mask))
    if config.use_class_token:
        pooled = reshape(take_axis1(x, [0]), (x.shape[0], config.embed_dim))
    else:
        pooled = mean_axis1(x)
    return add(matmul(pooled, params["head.weight"]), params["head.bias"])


def classification_loss(params, masks, images, labels, config):
    """Cross-entropy of the (optionally masked) forward; scalar Tensor."""
    return cross_entropy(forward(params, masks, images, config), labels)
