"""Command line interface.

Subcommands mirror the three-step workflow (pretrain the dense model, search
masks, slice at a budget, retrain the slice) plus eval/flops/export utilities
and `pipeline`, which chains every step. Every run writes a manifest JSON
capturing the resolved configuration, seed, backend and input paths; a
manifest can itself be passed to --config to reproduce the run. Output paths
are deliberately not recorded in manifests so identical runs into different
directories produce identical manifests.

Exit codes: 0 success, 1 usage/configuration error, 2 data error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, kernels
from .accounting import cost_report
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config, run_config_to_dict, stage_seed
from .data import gen_synthetic, load_idx_dataset
from .errors import ConfigError, DataError, UsageError, VitCompressError
from .masks import init_masks
from .model import ViTConfig, init_model
from .reports import export_reports
from .search import rank_masks, search
from .slicer import Budget, SlicedConfig, SlimArchitecture, select_architecture, slice_model
from .tensor import set_default_dtype
from .train import evaluate, train_classifier


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_text(path, content):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(content)
    os.replace(tmp, path)


def _write_json(path, obj):
    _write_text(path, json.dumps(obj, indent=2) + "\n")


def _write_manifest(out_dir, command, rc, inputs):
    manifest = {
        "manifest_version": 1,
        "command": command,
        "package_version": __version__,
        "backend": kernels.BACKEND,
        "seed": rc.seed,
        "inputs": inputs,
        "config": run_config_to_dict(rc),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _datasets(rc):
    m = rc.model
    if rc.data.source == "idx":
        train = load_idx_dataset(rc.data.train_images, rc.data.train_labels,
                                 limit=rc.data.train_limit, split="train",
                                 num_classes=m.num_classes)
        test = load_idx_dataset(rc.data.test_images, rc.data.test_labels,
                                limit=rc.data.test_limit, split="test",
                                stats=(train.mean, train.std),
                                num_classes=m.num_classes)
    else:
        train = gen_synthetic(stage_seed(rc.seed, "data_train"),
                              rc.data.synthetic_train_n, m,
                              noise=rc.data.noise, split="train")
        test = gen_synthetic(stage_seed(rc.seed, "data_test"),
                             rc.data.synthetic_test_n, m, noise=rc.data.noise,
                             stats=(train.mean, train.std), split="test")
    return train, test


def _train_history_csv(path, history):
    lines = ["epoch,loss"] + [f"{h['epoch']},{h['loss']!r}" for h in history]
    _write_text(path, "\n".join(lines) + "\n")


def _prepare(args, command, inputs):
    rc = load_run_config(args.config, seed_override=args.seed)
    set_default_dtype(rc.precision)
    if getattr(args, "out", None):
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, command, rc, inputs)
    return rc


# ---------------------------------------------------------------------------
# stages (shared by standalone commands and `pipeline`)
# ---------------------------------------------------------------------------

def _stage_pretrain(rc, out_dir, verbose=True):
    train_ds, test_ds = _datasets(rc)
    params = init_model(rc.model, stage_seed(rc.seed, "pretrain"))
    hyper = rc.train
    hyper.seed = stage_seed(rc.seed, "pretrain")
    result = train_classifier(params, rc.model, train_ds, hyper, verbose=verbose)
    acc, loss = evaluate(params, rc.model, test_ds)
    save_checkpoint(os.path.join(out_dir, "pretrained.ckpt"), params,
                    config=rc.model, rng=result.rng,
                    hyper={"train": _hyper_dict(hyper)},
                    meta={"test_accuracy": acc, "test_loss": loss})
    _train_history_csv(os.path.join(out_dir, "train_history.csv"), result.history)
    print(f"pretrain: test accuracy {acc:.4f}")
    return params, acc


def _stage_search(rc, params, config, out_dir, verbose=True):
    train_ds, _ = _datasets(rc)
    masks = init_masks(config)
    hyper = rc.search
    hyper.seed = stage_seed(rc.seed, "search")
    result = search(params, masks, train_ds, config, hyper, verbose=verbose)
    save_checkpoint(os.path.join(out_dir, "searched.ckpt"), params, masks=masks,
                    config=config, rng=result.rng,
                    hyper={"search": _search_hyper_dict(hyper)})
    result.history.to_csv(os.path.join(out_dir, "search_history.csv"))
    last = result.history.epochs[-1]
    print(f"search: final ce {last['ce_loss']:.4f} penalty {last['penalty']:.6f}")
    return params, masks, result.history


def _stage_slice(params, masks, config, budget, out_dir):
    ranked = rank_masks(masks)
    arch = select_architecture(ranked, budget, config)
    params_small, sliced_cfg = slice_model(params, arch, config)
    save_checkpoint(os.path.join(out_dir, "sliced.ckpt"), params_small,
                    config=sliced_cfg)
    _write_json(os.path.join(out_dir, "arch.json"), arch.to_json_dict())
    report = cost_report(arch, config)
    _write_text(os.path.join(out_dir, "cost.json"), report.to_json() + "\n")
    _write_text(os.path.join(out_dir, "cost.txt"), report.table() + "\n")
    print(f"slice: {report.macs} MACs ({report.macs / 1e9:.3f} G), "
          f"{report.params} params ({report.params / 1e6:.3f} M)")
    return params_small, sliced_cfg, arch


def _stage_retrain(rc, params_small, sliced_cfg, out_dir, verbose=True):
    train_ds, test_ds = _datasets(rc)
    hyper = rc.retrain_hyper()
    hyper.seed = stage_seed(rc.seed, "retrain")
    result = train_classifier(params_small, sliced_cfg, train_ds, hyper,
                              verbose=verbose)
    acc, loss = evaluate(params_small, sliced_cfg, test_ds)
    save_checkpoint(os.path.join(out_dir, "retrained.ckpt"), params_small,
                    config=sliced_cfg, rng=result.rng,
                    hyper={"train": _hyper_dict(hyper)},
                    meta={"test_accuracy": acc, "test_loss": loss})
    _train_history_csv(os.path.join(out_dir, "train_history.csv"), result.history)
    print(f"retrain: test accuracy {acc:.4f}")
    return acc


def _hyper_dict(h):
    return {"epochs": h.epochs, "lr": h.lr, "weight_decay": h.weight_decay,
            "batch_size": h.batch_size, "crop_pad": h.crop_pad, "flip": h.flip}


def _search_hyper_dict(h):
    d = {"epochs": h.epochs, "lr": h.lr, "weight_decay": h.weight_decay,
         "batch_size": h.batch_size, "crop_pad": h.crop_pad, "flip": h.flip}
    d.update({"lambda_attn": h.sparsity.lambda_attn,
              "lambda_mlp": h.sparsity.lambda_mlp,
              "lambda_patch": h.sparsity.lambda_patch})
    return d


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_pretrain(args):
    rc = _prepare(args, "pretrain", {})
    _stage_pretrain(rc, args.out, verbose=not args.quiet)
    return 0


def cmd_search(args):
    rc = _prepare(args, "search", {"checkpoint": args.checkpoint})
    ckpt = load_checkpoint(args.checkpoint)
    if not isinstance(ckpt.config, ViTConfig):
        raise UsageError("search needs a dense supernet checkpoint")
    _stage_search(rc, ckpt.params, ckpt.config, args.out, verbose=not args.quiet)
    return 0


def _parse_budget(spec, default):
    if spec is None:
        return default
    parts = [float(p) for p in spec.split(",")]
    if len(parts) == 1:
        return Budget(parts[0], parts[0], parts[0]).validate()
    if len(parts) == 3:
        return Budget(*parts).validate()
    raise UsageError(f"--budget takes one or three comma-separated fractions, got {spec!r}")


def cmd_slice(args):
    rc = _prepare(args, "slice", {"checkpoint": args.checkpoint})
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.masks is None:
        raise UsageError("slice needs a searched checkpoint containing masks")
    budget = _parse_budget(args.budget, rc.budget)
    _stage_slice(ckpt.params, ckpt.masks, ckpt.config, budget, args.out)
    return 0


def cmd_retrain(args):
    rc = _prepare(args, "retrain", {"checkpoint": args.checkpoint})
    ckpt = load_checkpoint(args.checkpoint)
    if not isinstance(ckpt.config, SlicedConfig):
        raise UsageError("retrain expects a sliced checkpoint")
    _stage_retrain(rc, ckpt.params, ckpt.config, args.out, verbose=not args.quiet)
    return 0


def cmd_eval(args):
    rc = load_run_config(args.config, seed_override=args.seed)
    set_default_dtype(rc.precision)
    ckpt = load_checkpoint(args.checkpoint)
    train_ds, test_ds = _datasets(rc)
    ds = train_ds if args.split == "train" else test_ds
    acc, loss = evaluate(ckpt.params, ckpt.config, ds)
    print(f"eval[{args.split}]: accuracy {acc:.4f} loss {loss:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, "eval", rc, {"checkpoint": args.checkpoint})
        _write_json(os.path.join(args.out, "metrics.json"),
                    {"split": args.split, "accuracy": acc, "loss": loss})
    return 0


def cmd_flops(args):
    rc = load_run_config(args.config, seed_override=args.seed)
    arch = None
    if args.arch:
        with open(args.arch) as f:
            arch = SlimArchitecture.from_json_dict(json.load(f)).validate(rc.model)
    report = cost_report(arch, rc.model)
    print(report.table())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, "flops", rc, {"arch": args.arch})
        _write_text(os.path.join(args.out, "cost.json"), report.to_json() + "\n")
    return 0


def cmd_export(args):
    rc = _prepare(args, "export", {"arch": args.arch})
    with open(args.arch) as f:
        arch = SlimArchitecture.from_json_dict(json.load(f)).validate(rc.model)
    report = cost_report(arch, rc.model)
    paths = export_reports(arch, report, None, args.out, rc.model)
    for p in paths:
        print(f"wrote {os.path.basename(p)}")
    return 0


def cmd_pipeline(args):
    rc = _prepare(args, "pipeline", {})
    stages = {name: os.path.join(args.out, name)
              for name in ("pretrain", "search", "slice", "retrain")}
    for d in stages.values():
        os.makedirs(d, exist_ok=True)
    verbose = not args.quiet

    params, dense_acc = _stage_pretrain(rc, stages["pretrain"], verbose=verbose)
    params, masks, _history = _stage_search(rc, params, rc.model,
                                            stages["search"], verbose=verbose)
    params_small, sliced_cfg, _arch = _stage_slice(params, masks, rc.model,
                                                   rc.budget, stages["slice"])
    final_acc = _stage_retrain(rc, params_small, sliced_cfg, stages["retrain"],
                               verbose=verbose)
    metrics = {"dense_accuracy": dense_acc, "final_accuracy": final_acc,
               "delta_points": (final_acc - dense_acc) * 100.0}
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    print(f"pipeline: dense {dense_acc:.4f} -> final {final_acc:.4f} "
          f"({metrics['delta_points']:+.2f} points)")
    return 0


def build_parser():
    parser = _Parser(prog="vitcompress",
                     description="mask search, slicing and retraining for "
                                 "compact vision transformers")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, out_required=True, checkpoint=False):
        p.add_argument("--config", required=True, help="run config JSON (or a manifest)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=out_required, default=None,
                       help="output directory")
        p.add_argument("--quiet", action="store_true")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    common(sub.add_parser("pretrain", help="train the dense supernet"))
    common(sub.add_parser("search", help="joint weight+mask search"), checkpoint=True)
    p = sub.add_parser("slice", help="rank masks and extract a sub-model")
    common(p, checkpoint=True)
    p.add_argument("--budget", default=None,
                   help="keep fractions: one value or attn,mlp,patch")
    common(sub.add_parser("retrain", help="retrain a sliced model"), checkpoint=True)
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, out_required=False, checkpoint=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p = sub.add_parser("flops", help="closed-form MACs/params report")
    common(p, out_required=False)
    p.add_argument("--arch", default=None, help="architecture JSON")
    p = sub.add_parser("export", help="write architecture reports")
    common(p)
    p.add_argument("--arch", required=True, help="architecture JSON")
    common(sub.add_parser("pipeline", help="pretrain + search + slice + retrain"))
    return parser


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "search": cmd_search,
    "slice": cmd_slice,
    "retrain": cmd_retrain,
    "eval": cmd_eval,
    "flops": cmd_flops,
    "export": cmd_export,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
