"""The three learnable mask families and the weighted L1 penalty.

Attention masks [layers x heads x head_dim] and MLP masks [layers x mlp_dim]
start at exactly 1.0 and enter the forward pass as-is. Patch masks are stored
as raw pre-tanh parameters [layers x num_patches] initialized to exactly 3.0
(tanh(3.0) = 0.99505..., effectively 1); the tanh keeps them from growing
without bound. The penalty is

    lambda_attn * ||attn||_1 + lambda_mlp * ||mlp||_1
                + lambda_patch * ||tanh(patch_raw)||_1

i.e. L1 acts on the tanh-activated patch value, the quantity that actually
scales tokens. Masks get no optimizer weight decay; L1 is their regularizer.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, add, l1_norm, scale, tanh

PATCH_RAW_INIT = 3.0


@dataclass
class SparsityWeights:
    lambda_attn: float = 2e-4
    lambda_mlp: float = 5e-5
    lambda_patch: float = 1e-4

    def validate(self):
        for name in ("lambda_attn", "lambda_mlp", "lambda_patch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        return self


class MaskSet:
    """Holds attn, mlp and patch_raw mask tensors, all requiring grad."""

    def __init__(self, attn, mlp, patch_raw):
        self.attn = attn
        self.mlp = mlp
        self.patch_raw = patch_raw

    def tensors(self):
        return [self.attn, self.mlp, self.patch_raw]

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()


def init_masks(config):
    config.validate()
    attn = Tensor(np.ones((config.layers, config.heads, config.head_dim)),
                  requires_grad=True)
    mlp = Tensor(np.ones((config.layers, config.mlp_dim)), requires_grad=True)
    patch_raw = Tensor(np.full((config.layers, config.num_patches), PATCH_RAW_INIT),
                       requires_grad=True)
    return MaskSet(attn, mlp, patch_raw)


def effective_patch_masks(mask_set):
    """tanh of the raw patch parameters, differentiable, shape [L, N]."""
    return tanh(mask_set.patch_raw)


def sparsity_penalty(mask_set, weights):
    weights.validate()
    pen = scale(l1_norm(mask_set.attn), weights.lambda_attn)
    pen = add(pen, scale(l1_norm(mask_set.mlp), weights.lambda_mlp))
    pen = add(pen, scale(l1_norm(effective_patch_masks(mask_set)),
                         weights.lambda_patch))
    return pen
