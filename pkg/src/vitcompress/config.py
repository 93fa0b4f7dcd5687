"""Run configuration: a strict JSON file mirroring every hyperparameter.

Unknown keys are rejected at every level. Stage seeds are derived from the
single top-level seed (pretrain +0, search +1, retrain +2, data +100/+101) so
one --seed flag pins the whole pipeline. A manifest written by a previous run
can be passed anywhere a config is accepted; its resolved config is used.
"""

import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .masks import SparsityWeights
from .model import ViTConfig
from .search import SearchHyper
from .slicer import Budget
from .train import TrainHyper

_STAGE_OFFSETS = {"pretrain": 0, "search": 1, "retrain": 2,
                  "data_train": 100, "data_test": 101}


def stage_seed(base, stage):
    return base + _STAGE_OFFSETS[stage]


@dataclass
class DataConfig:
    source: str = "synthetic"
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    train_limit: int = None
    test_limit: int = None
    synthetic_train_n: int = 2000
    synthetic_test_n: int = 1000
    noise: float = 0.15

    def validate(self):
        if self.source not in ("idx", "synthetic"):
            raise ConfigError(f"data.source must be 'idx' or 'synthetic', got {self.source!r}")
        if self.source == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                if getattr(self, name) is None:
                    raise ConfigError(f"data.{name} is required when source is 'idx'")
        return self


@dataclass
class RunConfig:
    model: ViTConfig
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    search: SearchHyper = field(default_factory=SearchHyper)
    budget: Budget = field(default_factory=Budget)
    retrain: TrainHyper = None   # defaults to the pretraining recipe
    seed: int = 0
    precision: str = "float32"

    def retrain_hyper(self):
        return self.retrain if self.retrain is not None else self.train


def _strict(d, allowed, section):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")


def _train_from_dict(d, section):
    allowed = set(TrainHyper.__dataclass_fields__) - {"seed"}
    _strict(d, allowed, section)
    return TrainHyper(**d)


def _search_from_dict(d):
    base = set(SearchHyper.__dataclass_fields__) - {"seed", "sparsity"}
    lam = {"lambda_attn", "lambda_mlp", "lambda_patch"}
    _strict(d, base | lam, "search")
    sw = SparsityWeights(**{k: d[k] for k in lam if k in d})
    rest = {k: v for k, v in d.items() if k not in lam}
    return SearchHyper(sparsity=sw, **rest)


def _data_from_dict(d):
    _strict(d, DataConfig.__dataclass_fields__, "data")
    return DataConfig(**d).validate()


def _budget_from_dict(d):
    _strict(d, Budget.__dataclass_fields__, "budget")
    return Budget(**d).validate()


_TOP_KEYS = ("model", "data", "train", "search", "budget", "retrain",
             "seed", "precision")


def run_config_from_dict(d):
    _strict(d, _TOP_KEYS, "config")
    if "model" not in d:
        raise ConfigError("config is missing the 'model' section")
    rc = RunConfig(
        model=ViTConfig.from_dict(d["model"]),
        data=_data_from_dict(d.get("data", {})),
        train=_train_from_dict(d.get("train", {}), "train"),
        search=_search_from_dict(d.get("search", {})),
        budget=_budget_from_dict(d.get("budget", {})),
        retrain=(_train_from_dict(d["retrain"], "retrain")
                 if d.get("retrain") is not None else None),
        seed=int(d.get("seed", 0)),
        precision=d.get("precision", "float32"),
    )
    if rc.precision not in ("float32", "float64"):
        raise ConfigError(f"precision must be float32 or float64, got {rc.precision!r}")
    return rc


def run_config_to_dict(rc):
    def train_dict(h):
        return {k: getattr(h, k) for k in TrainHyper.__dataclass_fields__
                if k != "seed"}

    search = {k: getattr(rc.search, k) for k in SearchHyper.__dataclass_fields__
              if k not in ("seed", "sparsity")}
    search.update({"lambda_attn": rc.search.sparsity.lambda_attn,
                   "lambda_mlp": rc.search.sparsity.lambda_mlp,
                   "lambda_patch": rc.search.sparsity.lambda_patch})
    out = {
        "model": rc.model.to_dict(),
        "data": {k: getattr(rc.data, k) for k in DataConfig.__dataclass_fields__},
        "train": train_dict(rc.train),
        "search": search,
        "budget": {k: getattr(rc.budget, k) for k in Budget.__dataclass_fields__},
        "retrain": train_dict(rc.retrain) if rc.retrain is not None else None,
        "seed": rc.seed,
        "precision": rc.precision,
    }
    return out


def load_run_config(path, seed_override=None):
    try:
        with open(path) as f:
            d = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if isinstance(d, dict) and "manifest_version" in d:
        d = d["config"]
    rc = run_config_from_dict(d)
    if seed_override is not None:
        rc.seed = int(seed_override)
    return rc
