"""Closed-form parameter and multiply-accumulate counting.

Convention: 1 MAC per scalar multiply inside the forward matmuls, counted
per sample (under this convention the DeiT-S shape comes out at ~4.6e9 MACs
and ~22.0M params). Softmax, layernorm, GELU, residual adds and the mask
hadamards are elementwise and uncounted, matching the tensor engine's
instrumented multiply counter, which tracks matmul ops only.

With full patch keep-sets, MACs are affine in a uniform attn/mlp keep
fraction: every kept attention dim costs the same 4*T*D + 2*T^2 multiplies
and every kept MLP dim costs 2*T*D, independent of which layer or head it
lives in.
"""

import json
from dataclasses import dataclass

from .slicer import full_architecture


@dataclass
class CostReport:
    params: int
    macs: int
    embed: dict
    head: dict
    per_layer: list
    realized: dict
    uncounted: str = "elementwise ops (softmax, layernorm, gelu, residual, masks)"

    def to_dict(self):
        return {"params": self.params, "macs": self.macs, "embed": self.embed,
                "head": self.head, "per_layer": self.per_layer,
                "realized_budgets": self.realized, "uncounted": self.uncounted}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self):
        lines = [
            f"{'layer':>6} {'tokens':>7} {'qkv':>14} {'attn':>14} {'proj':>14} {'mlp':>14}",
        ]
        for i, row in enumerate(self.per_layer):
            lines.append(f"{i:>6} {row['tokens']:>7} {row['qkv']:>14} "
                         f"{row['attn']:>14} {row['proj']:>14} {row['mlp']:>14}")
        lines.append(f"embed MACs: {self.embed['macs']}   head MACs: {self.head['macs']}")
        lines.append(f"total MACs:   {self.macs}  ({self.macs / 1e9:.3f} G)")
        lines.append(f"total params: {self.params}  ({self.params / 1e6:.3f} M)")
        lines.append(f"realized budgets: attn {self.realized['attn']:.4f}  "
                     f"mlp {self.realized['mlp']:.4f}  patch {self.realized['patch']:.4f}")
        lines.append(f"uncounted: {self.uncounted}")
        return "\n".join(lines)


def _resolve_arch(arch, config):
    return full_architecture(config) if arch is None else arch


def count_params(arch, config):
    """Exact parameter count (weights, biases, norms, embeddings, head)."""
    arch = _resolve_arch(arch, config)
    D = config.embed_dim
    cls = 1 if config.use_class_token else 0
    total = config.patch_dim * D + D              # patch projection + bias
    total += (len(arch.patches[0]) + cls) * D     # positional embeddings
    total += cls * D                              # class token
    for l in range(config.layers):
        sum_d = sum(arch.layer_attn_dims(l))
        m = len(arch.mlp_dims[l])
        total += 3 * (D * sum_d + sum_d)          # q/k/v + biases
        total += sum_d * D + D                    # output projection + bias
        total += D * m + m                        # fc1 + bias
        total += m * D + D                        # fc2 + bias
        total += 4 * D                            # two layernorm affine pairs
    total += D * config.num_classes + config.num_classes
    return total


def count_macs(arch, config):
    """Exact per-sample multiply count of the sliced forward pass."""
    return cost_report(arch, config).macs


def cost_report(arch, config):
    arch = _resolve_arch(arch, config)
    D = config.embed_dim
    cls = 1 if config.use_class_token else 0
    embed_macs = len(arch.patches[0]) * config.patch_dim * D
    per_layer = []
    block_total = 0
    for l in range(config.layers):
        T = len(arch.patches[l]) + cls
        sum_d = sum(arch.layer_attn_dims(l))
        m = len(arch.mlp_dims[l])
        row = {
            "tokens": T,
            "qkv": 3 * T * D * sum_d,
            "attn": 2 * T * T * sum_d,
            "proj": T * sum_d * D,
            "mlp": 2 * T * D * m,
        }
        row["total"] = row["qkv"] + row["attn"] + row["proj"] + row["mlp"]
        block_total += row["total"]
        per_layer.append(row)
    head_macs = D * config.num_classes
    macs = embed_macs + block_total + head_macs
    realized = {
        "attn": arch.attn_total() / (config.layers * config.heads * config.head_dim),
        "mlp": arch.mlp_total() / (config.layers * config.mlp_dim),
        "patch": arch.patch_total() / (config.layers * config.num_patches),
    }
    return CostReport(
        params=count_params(arch, config), macs=macs,
        embed={"macs": embed_macs}, head={"macs": head_macs},
        per_layer=per_layer, realized=realized)
