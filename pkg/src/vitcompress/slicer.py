"""Budget-driven architecture extraction and structural slicing.

Ranking scope is global within each mask family: all layers*heads*head_dim
attention masks compete in one pool (likewise MLP and patch masks), so the
searched network can be strongly non-uniform across layers and heads. Patch
keep-sets are then nesting-corrected (a patch dropped at one layer stays
dropped in all deeper layers); the realized patch fraction may fall slightly
below budget after intersection and is reported, not re-padded.

Slice-equivalence: with patch_keep = 1, the sliced model's forward matches
the binary-masked supernet because zeroed q/k/v dims contribute exactly zero
to every dot product, which is identical to removing them. Dropping patches
changes softmax normalization, so masked != sliced there by design.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .masks import MaskSet
from .model import (LAYERNORM_EPS, ViTConfig, _attention_heads, _project_heads,
                    extract_patches, mlp_forward)
from .tensor import (Tensor, add, broadcast_to, concat, layernorm, matmul,
                     mean_axis1, reshape, take_axis1)

PATCH_RAW_KEEP = 20.0  # tanh(20.0) == 1.0 exactly in float32 and float64


@dataclass
class Budget:
    attn_keep: float = 1.0
    mlp_keep: float = 1.0
    patch_keep: float = 1.0

    def validate(self):
        for name in ("attn_keep", "mlp_keep", "patch_keep"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ConfigError(f"Budget.{name} must be in (0, 1], got {v}")
        return self


@dataclass
class SlimArchitecture:
    """Kept-index lists: per layer/head attention dims, per layer MLP dims,
    per layer patch sets (class token implicit, always kept)."""
    head_dims: list
    mlp_dims: list
    patches: list

    def validate(self, config):
        L, H = config.layers, config.heads
        if len(self.head_dims) != L or len(self.mlp_dims) != L or len(self.patches) != L:
            raise ConfigError(
                f"architecture has {len(self.head_dims)}/{len(self.mlp_dims)}/"
                f"{len(self.patches)} layers, config has {L}")
        for l in range(L):
            if len(self.head_dims[l]) != H:
                raise ConfigError(f"layer {l} lists {len(self.head_dims[l])} heads, config has {H}")
            for h in range(H):
                _check_index_list(self.head_dims[l][h], config.head_dim,
                                  f"layer {l} head {h} dims")
            _check_index_list(self.mlp_dims[l], config.mlp_dim, f"layer {l} mlp dims")
            _check_index_list(self.patches[l], config.num_patches, f"layer {l} patches")
            if l > 0 and not set(self.patches[l]) <= set(self.patches[l - 1]):
                raise ConfigError(f"patch keep-set at layer {l} is not nested in layer {l - 1}")
        return self

    def attn_total(self):
        return sum(len(dims) for layer in self.head_dims for dims in layer)

    def mlp_total(self):
        return sum(len(dims) for dims in self.mlp_dims)

    def patch_total(self):
        return sum(len(p) for p in self.patches)

    def layer_attn_dims(self, l):
        return [len(dims) for dims in self.head_dims[l]]

    def to_json_dict(self):
        return {"layers": [
            {"heads": [list(map(int, dims)) for dims in self.head_dims[l]],
             "mlp": list(map(int, self.mlp_dims[l])),
             "patches": list(map(int, self.patches[l]))}
            for l in range(len(self.head_dims))]}

    @classmethod
    def from_json_dict(cls, d):
        if set(d) != {"layers"}:
            raise ConfigError(f"architecture JSON must have a single 'layers' key, got {sorted(d)}")
        head_dims, mlp_dims, patches = [], [], []
        for entry in d["layers"]:
            unknown = set(entry) - {"heads", "mlp", "patches"}
            if unknown:
                raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
            head_dims.append([list(map(int, h)) for h in entry["heads"]])
            mlp_dims.append(list(map(int, entry["mlp"])))
            patches.append(list(map(int, entry["patches"])))
        return cls(head_dims, mlp_dims, patches)


def _check_index_list(lst, bound, what):
    prev = -1
    for i in lst:
        if not (0 <= i < bound):
            raise ConfigError(f"{what}: index {i} outside [0, {bound})")
        if i <= prev:
            raise ConfigError(f"{what}: indices must be sorted and unique")
        prev = i


def full_architecture(config):
    """Identity architecture keeping every dim and patch."""
    L = config.layers
    return SlimArchitecture(
        head_dims=[[list(range(config.head_dim)) for _ in range(config.heads)]
                   for _ in range(L)],
        mlp_dims=[list(range(config.mlp_dim)) for _ in range(L)],
        patches=[list(range(config.num_patches)) for _ in range(L)])


def _keep_count(frac, n):
    # ceil(frac * n); the 1e-9 guard makes frac == kept/n recover kept exactly
    return max(1, min(n, math.ceil(frac * n - 1e-9)))


def enforce_patch_nesting(keep_sets):
    """keep'(l) = keep(l) intersect keep'(l-1); output sorted and nested."""
    if not keep_sets:
        return []
    out = [sorted(keep_sets[0])]
    for sets in keep_sets[1:]:
        out.append(sorted(set(sets) & set(out[-1])))
    return out


def select_architecture(ranked, budget, config, enforce_nesting=True):
    """Top-k by |mask value| within each global family pool, then nesting."""
    budget.validate()
    L, H = config.layers, config.heads
    d, M, N = config.head_dim, config.mlp_dim, config.num_patches

    k_attn = _keep_count(budget.attn_keep, L * H * d)
    head_dims = [[[] for _ in range(H)] for _ in range(L)]
    for flat, _val in ranked.attn[:k_attn]:
        l, rem = divmod(flat, H * d)
        h, j = divmod(rem, d)
        head_dims[l][h].append(j)
    for layer in head_dims:
        for dims in layer:
            dims.sort()

    k_mlp = _keep_count(budget.mlp_keep, L * M)
    mlp_dims = [[] for _ in range(L)]
    for flat, _val in ranked.mlp[:k_mlp]:
        l, j = divmod(flat, M)
        mlp_dims[l].append(j)
    for dims in mlp_dims:
        dims.sort()

    k_patch = _keep_count(budget.patch_keep, L * N)
    patches = [[] for _ in range(L)]
    for flat, _val in ranked.patch[:k_patch]:
        l, p = divmod(flat, N)
        patches[l].append(p)
    for p in patches:
        p.sort()
    if enforce_nesting:
        patches = enforce_patch_nesting(patches)

    return SlimArchitecture(head_dims, mlp_dims, patches)


def binarize_masks(arch, config):
    """0/1 MaskSet matching the architecture; kept patch raw masks are set
    to PATCH_RAW_KEEP so their tanh is exactly 1."""
    arch.validate(config)
    attn = np.zeros((config.layers, config.heads, config.head_dim))
    mlp = np.zeros((config.layers, config.mlp_dim))
    patch_raw = np.zeros((config.layers, config.num_patches))
    for l in range(config.layers):
        for h in range(config.heads):
            attn[l, h, arch.head_dims[l][h]] = 1.0
        mlp[l, arch.mlp_dims[l]] = 1.0
        patch_raw[l, arch.patches[l]] = PATCH_RAW_KEEP
    return MaskSet(Tensor(attn, requires_grad=True),
                   Tensor(mlp, requires_grad=True),
                   Tensor(patch_raw, requires_grad=True))


@dataclass
class SlicedConfig:
    """A sliced model's static description: the original config (which also
    fixes the 1/sqrt(head_dim) attention scale) plus the kept-index lists."""
    base: ViTConfig
    arch: SlimArchitecture

    def validate(self):
        self.base.validate()
        self.arch.validate(self.base)
        return self

    def to_dict(self):
        return {"base": self.base.to_dict(), "arch": self.arch.to_json_dict()}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"base", "arch"}
        if unknown:
            raise ConfigError(f"unknown SlicedConfig keys: {sorted(unknown)}")
        return cls(ViTConfig.from_dict(d["base"]),
                   SlimArchitecture.from_json_dict(d["arch"])).validate()


def slice_model(params, arch, config):
    """Extract the structurally smaller model; dropped q/k/v columns, output
    projection rows, MLP dims and layer-0 patches are removed outright."""
    arch.validate(config)
    d = config.head_dim
    out = {}

    def keep(name, arr):
        out[name] = Tensor(np.array(arr), requires_grad=True, dtype=arr.dtype)

    keep("embed.weight", params["embed.weight"].data)
    keep("embed.bias", params["embed.bias"].data)
    pos = params["pos_embed"].data
    if config.use_class_token:
        rows = [0] + [p + 1 for p in arch.patches[0]]
    else:
        rows = list(arch.patches[0])
    keep("pos_embed", pos[rows])
    if config.use_class_token:
        keep("cls_token", params["cls_token"].data)
    for l in range(config.layers):
        pre = f"blocks.{l}."
        cols = [h * d + j for h in range(config.heads) for j in arch.head_dims[l][h]]
        keep(pre + "ln1.gamma", params[pre + "ln1.gamma"].data)
        keep(pre + "ln1.beta", params[pre + "ln1.beta"].data)
        for name in ("q", "k", "v"):
            keep(pre + name + ".weight", params[pre + name + ".weight"].data[:, cols])
            keep(pre + name + ".bias", params[pre + name + ".bias"].data[cols])
        keep(pre + "proj.weight", params[pre + "proj.weight"].data[cols, :])
        keep(pre + "proj.bias", params[pre + "proj.bias"].data)
        keep(pre + "ln2.gamma", params[pre + "ln2.gamma"].data)
        keep(pre + "ln2.beta", params[pre + "ln2.beta"].data)
        mdims = arch.mlp_dims[l]
        keep(pre + "fc1.weight", params[pre + "fc1.weight"].data[:, mdims])
        keep(pre + "fc1.bias", params[pre + "fc1.bias"].data[mdims])
        keep(pre + "fc2.weight", params[pre + "fc2.weight"].data[mdims, :])
        keep(pre + "fc2.bias", params[pre + "fc2.bias"].data)
    keep("head.weight", params["head.weight"].data)
    keep("head.bias", params["head.bias"].data)
    return out, SlicedConfig(base=config, arch=arch)


def _head_spans(dims_per_head):
    spans = []
    off = 0
    for n in dims_per_head:
        spans.append((off, off + n))
        off += n
    return spans


def forward_sliced(params, sliced, images):
    """Forward of a sliced model; tokens are dropped at the recorded layers."""
    cfg = sliced.base
    arch = sliced.arch
    inv_sqrt_d = 1.0 / math.sqrt(cfg.head_dim)
    keep0 = arch.patches[0]

    patches = extract_patches(images, cfg)[:, keep0, :]
    tok = add(matmul(Tensor(patches), params["embed.weight"]), params["embed.bias"])
    B = patches.shape[0]
    D = cfg.embed_dim
    if cfg.use_class_token:
        cls = broadcast_to(reshape(params["cls_token"], (1, 1, D)), (B, 1, D))
        tok = concat([cls, tok], axis=1)
    x = add(tok, params["pos_embed"])

    prev = keep0
    for l in range(cfg.layers):
        pre = f"blocks.{l}."
        if l > 0 and arch.patches[l] != prev:
            pos_of = {p: i for i, p in enumerate(prev)}
            idx = [pos_of[p] for p in arch.patches[l]]
            if cfg.use_class_token:
                idx = [0] + [i + 1 for i in idx]
            x = take_axis1(x, idx)
            prev = arch.patches[l]
        h = layernorm(x, params[pre + "ln1.gamma"], params[pre + "ln1.beta"],
                      LAYERNORM_EPS)
        spans = _head_spans(arch.layer_attn_dims(l))
        outs = _attention_heads(
            h, params[pre + "q.weight"], params[pre + "q.bias"],
            params[pre + "k.weight"], params[pre + "k.bias"],
            params[pre + "v.weight"], params[pre + "v.bias"],
            spans, None, inv_sqrt_d)
        x = add(x, _project_heads(outs, h.shape, params[pre + "proj.weight"],
                                  params[pre + "proj.bias"], h.dtype))
        h2 = layernorm(x, params[pre + "ln2.gamma"], params[pre + "ln2.beta"],
                       LAYERNORM_EPS)
        x = add(x, mlp_forward(h2, params, l, cfg))
    if cfg.use_class_token:
        pooled = reshape(take_axis1(x, [0]), (x.shape[0], D))
    else:
        pooled = mean_axis1(x)
    return add(matmul(pooled, params["head.weight"]), params["head.bias"])
