"""Plain supervised training (pretraining and retraining) and evaluation.

Retraining a sliced model uses the same recipe as pretraining: AdamW,
constant learning rate, the same light augmentation, no masks and no L1.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import augment_batch, iterate_batches
from .errors import ConfigError, TrainingDiverged
from .model import ViTConfig, forward
from .optim import init_adamw, adamw_step
from .slicer import SlicedConfig, forward_sliced
from .tensor import backward, cross_entropy, record


@dataclass
class TrainHyper:
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.05
    batch_size: int = 128
    seed: int = 0
    crop_pad: int = 2
    flip: bool = False

    def validate(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        return self


def forward_any(params, cfg, images):
    if isinstance(cfg, SlicedConfig):
        return forward_sliced(params, cfg, images)
    if isinstance(cfg, ViTConfig):
        return forward(params, None, images, cfg)
    raise ConfigError(f"unsupported config type {type(cfg).__name__}")


@dataclass
class TrainResult:
    params: dict
    opt: object
    rng: object
    history: list


def train_classifier(params, cfg, dataset, hyper, *, opt=None, rng=None,
                     start_epoch=0, history=None, verbose=False):
    """Cross-entropy training; resumable via the returned opt state and rng."""
    hyper.validate()
    if hyper.epochs > 0 and dataset.n < 1:
        raise ConfigError("dataset is empty")
    weight_list = list(params.values())
    if opt is None:
        opt = init_adamw(weight_list, hyper.lr, hyper.weight_decay)
    if rng is None:
        rng = np.random.default_rng(hyper.seed)
    history = history if history is not None else []
    fill = dataset.normalized_zero()

    for epoch in range(start_epoch, start_epoch + hyper.epochs):
        losses = []
        for idx in iterate_batches(dataset.n, hyper.batch_size, rng):
            x = dataset.images[idx]
            y = dataset.labels[idx]
            if hyper.crop_pad or hyper.flip:
                x = augment_batch(x, rng, hyper.crop_pad, hyper.flip, fill)
            for t in weight_list:
                t.zero_grad()
            with record():
                loss = cross_entropy(forward_any(params, cfg, x), y)
                val = float(loss.data)
                if not math.isfinite(val):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
                backward(loss)
            adamw_step(weight_list, [t.grad for t in weight_list], opt)
            losses.append(val)
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})
        if verbose:
            print(f"train epoch {epoch}: loss={history[-1]['loss']:.4f}")
    return TrainResult(params=params, opt=opt, rng=rng, history=history)


def retrain(params_small, config_small, dataset, epochs, seed, **hyper_kw):
    """Retrain a sliced model with the pretraining recipe; 0 epochs is a no-op."""
    hyper = TrainHyper(epochs=epochs, seed=seed, **hyper_kw)
    return train_classifier(params_small, config_small, dataset, hyper).params


def evaluate(params, cfg, dataset, batch_size=256):
    """(accuracy, mean CE loss); a pure function of (params, cfg, dataset)."""
    correct = 0
    loss_sum = 0.0
    for start in range(0, dataset.n, batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = forward_any(params, cfg, x)
        pred = np.argmax(logits.data, axis=1)
        correct += int((pred == y).sum())
        loss_sum += float(cross_entropy(logits, y).data) * x.shape[0]
    return correct / dataset.n, loss_sum / dataset.n
