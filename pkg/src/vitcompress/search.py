"""One-shot search: jointly trains weights and masks under CE + weighted L1,
then ranks the mask values.

One AdamW instance updates the model weights with the configured weight decay
and a second one updates the masks with zero decay (L1 is the masks' only
regularizer). The learning rate is constant; no warmup or schedule. Ranking
sorts each family by descending |value| (patch masks by their tanh-activated
value) with ties broken by lower flat index, so reruns are bit-reproducible.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import augment_batch, iterate_batches
from .errors import ConfigError, TrainingDiverged
from .masks import SparsityWeights, sparsity_penalty
from .model import forward
from .optim import init_adamw, adamw_step
from .tensor import add, backward, cross_entropy, record

QUANTILES = [i / 10 for i in range(11)]


@dataclass
class SearchHyper:
    epochs: int = 50
    lr: float = 5e-4
    weight_decay: float = 1e-3
    batch_size: int = 128
    sparsity: SparsityWeights = field(default_factory=SparsityWeights)
    seed: int = 0
    crop_pad: int = 0
    flip: bool = False

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"search epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"search lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        self.sparsity.validate()
        return self


@dataclass
class RankedMasks:
    """Per family: (flat index, final value) sorted by descending |value|."""
    attn: list
    mlp: list
    patch: list


def rank_masks(mask_set):
    def ranked(values):
        flat = values.ravel()
        order = np.argsort(-np.abs(flat), kind="stable")
        return [(int(i), float(flat[i])) for i in order]

    return RankedMasks(
        attn=ranked(mask_set.attn.data),
        mlp=ranked(mask_set.mlp.data),
        patch=ranked(np.tanh(mask_set.patch_raw.data)))


class SearchHistory:
    """Per-step loss decomposition plus per-epoch mask-magnitude quantiles."""

    def __init__(self):
        self.steps = []
        self.epochs = []

    def add_epoch(self, epoch, mask_set):
        rows = [s for s in self.steps if s["epoch"] == epoch]
        entry = {
            "epoch": epoch,
            "ce_loss": float(np.mean([r["ce"] for r in rows])),
            "penalty": float(np.mean([r["penalty"] for r in rows])),
        }
        for name, values in (("attn", np.abs(mask_set.attn.data)),
                             ("mlp", np.abs(mask_set.mlp.data)),
                             ("patch", np.abs(np.tanh(mask_set.patch_raw.data)))):
            qs = np.quantile(values, QUANTILES)
            for q, v in zip(QUANTILES, qs):
                entry[f"{name}_q{int(q * 100)}"] = float(v)
        self.epochs.append(entry)
        return entry

    def to_csv(self, path):
        if not self.epochs:
            raise ConfigError("empty history")
        cols = list(self.epochs[0].keys())
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in self.epochs:
                f.write(",".join(repr(row[c]) if c != "epoch" else str(row[c])
                                 for c in cols) + "\n")


@dataclass
class SearchResult:
    params: dict
    masks: object
    history: SearchHistory
    weight_opt: object
    mask_opt: object
    rng: object


def search(params, mask_set, dataset, config, hyper, *, weight_opt=None,
           mask_opt=None, rng=None, start_epoch=0, history=None,
           pretrained=True, verbose=False):
    """Joint weight+mask training; resumable via the returned optimizer
    states and rng. Deterministic for a fixed (seed, config, dataset)."""
    hyper.validate()
    if dataset.n < 1:
        raise ConfigError("dataset is empty")
    if not pretrained:
        warnings.warn("searching from scratch: masks rank better on a "
                      "converged model", stacklevel=2)
    weight_list = list(params.values())
    mask_list = mask_set.tensors()
    if weight_opt is None:
        weight_opt = init_adamw(weight_list, hyper.lr, hyper.weight_decay)
    if mask_opt is None:
        mask_opt = init_adamw(mask_list, hyper.lr, 0.0)
    if rng is None:
        rng = np.random.default_rng(hyper.seed)
    history = history or SearchHistory()
    fill = dataset.normalized_zero()

    for epoch in range(start_epoch, start_epoch + hyper.epochs):
        for idx in iterate_batches(dataset.n, hyper.batch_size, rng):
            x = dataset.images[idx]
            y = dataset.labels[idx]
            if hyper.crop_pad or hyper.flip:
                x = augment_batch(x, rng, hyper.crop_pad, hyper.flip, fill)
            for t in weight_list:
                t.zero_grad()
            for t in mask_list:
                t.zero_grad()
            with record():
                ce = cross_entropy(forward(params, mask_set, x, config), y)
                pen = sparsity_penalty(mask_set, hyper.sparsity)
                loss = add(ce, pen)
                total = float(loss.data)
                if not math.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}: ce={float(ce.data)} "
                        f"penalty={float(pen.data)}")
                backward(loss)
            adamw_step(weight_list, [t.grad for t in weight_list], weight_opt)
            adamw_step(mask_list, [t.grad for t in mask_list], mask_opt)
            history.steps.append({"epoch": epoch, "ce": float(ce.data),
                                  "penalty": float(pen.data), "total": total})
        entry = history.add_epoch(epoch, mask_set)
        if verbose:
            print(f"search epoch {epoch}: ce={entry['ce_loss']:.4f} "
                  f"penalty={entry['penalty']:.6f}")
    return SearchResult(params=params, masks=mask_set, history=history,
                        weight_opt=weight_opt, mask_opt=mask_opt, rng=rng)
