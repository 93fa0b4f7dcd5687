"""Bit-exact checkpoint serialization.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header,
then raw little-endian float arrays concatenated in tensor-directory order.
The header carries the format version, the model config (plus the sliced
architecture when present), hyperparameters, the RNG state, optimizer scalar
state, and the tensor directory (name -> offset, shape, dtype). Optimizer
moment arrays ride along as ordinary directory entries so an interrupted run
resumes bit-deterministically. Writes are atomic (temp file + rename).
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointVersionError, DataError
from .masks import MaskSet
from .model import ViTConfig
from .optim import AdamWState
from .slicer import SlicedConfig, SlimArchitecture
from .tensor import Tensor

FORMAT_VERSION = 1

_MASK_NAMES = ("attn", "mlp", "patch_raw")


@dataclass
class Checkpoint:
    params: dict
    masks: object
    config: object
    rng: object
    weight_opt: object
    mask_opt: object
    epoch: object
    hyper: object
    meta: object
    header: dict


def _opt_header(opt):
    if opt is None:
        return None
    return {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "eps": opt.eps, "weight_decay": opt.weight_decay, "step": opt.step}


def save_checkpoint(path, params, masks=None, config=None, rng=None, *,
                    hyper=None, epoch=None, weight_opt=None, mask_opt=None,
                    meta=None):
    """config may be a ViTConfig or a SlicedConfig (stored as base + arch)."""
    entries = []

    def put(name, arr):
        entries.append((name, np.ascontiguousarray(arr)))

    for name, t in params.items():
        put("param/" + name, t.data)
    if masks is not None:
        for name in _MASK_NAMES:
            put("mask/" + name, getattr(masks, name).data)
    for group, opt in (("weights", weight_opt), ("masks", mask_opt)):
        if opt is None:
            continue
        for kind, arrays in (("m", opt.m), ("v", opt.v)):
            for i, arr in enumerate(arrays):
                put(f"opt/{group}/{kind}/{i:04d}", arr)

    if isinstance(config, SlicedConfig):
        config_dict, arch_dict = config.base.to_dict(), config.arch.to_json_dict()
    elif config is not None:
        config_dict, arch_dict = config.to_dict(), None
    else:
        config_dict, arch_dict = None, None

    rng_state = None
    if rng is not None:
        rng_state = rng.bit_generator.state

    directory = []
    offset = 0
    for name, arr in entries:
        dt = arr.dtype.newbyteorder("<")
        directory.append({"name": name, "offset": offset,
                          "shape": list(arr.shape), "dtype": dt.str})
        offset += arr.nbytes

    header = {
        "format_version": FORMAT_VERSION,
        "config": config_dict,
        "arch": arch_dict,
        "hyper": hyper,
        "rng_state": rng_state,
        "epoch": epoch,
        "opt": {"weights": _opt_header(weight_opt), "masks": _opt_header(mask_opt)},
        "meta": meta,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")

    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        for _, arr in entries:
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    os.replace(tmp, path)
    return path


def _load_opt(header_opt, arrays):
    if header_opt is None:
        return None
    opt = AdamWState(lr=header_opt["lr"], beta1=header_opt["beta1"],
                     beta2=header_opt["beta2"], eps=header_opt["eps"],
                     weight_decay=header_opt["weight_decay"],
                     step=header_opt["step"])
    opt.m = arrays["m"]
    opt.v = arrays["v"]
    return opt


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataError(f"{path}: too short for a checkpoint ({len(raw)} bytes)")
    hlen = int.from_bytes(raw[:8], "little")
    if 8 + hlen > len(raw):
        raise DataError(f"{path}: header length {hlen} exceeds file size {len(raw)}")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt header: {e}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} needs migration; this build "
            f"reads version {FORMAT_VERSION}")
    body = raw[8 + hlen:]
    expected = sum(int(np.prod(e["shape"])) * np.dtype(e["dtype"]).itemsize
                   for e in header["tensors"])
    if len(body) != expected:
        raise DataError(f"{path}: body holds {len(body)} bytes, directory "
                        f"declares {expected}")

    arrays = {}
    for e in header["tensors"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"]))
        arr = np.frombuffer(body, dtype=dt, count=count,
                            offset=e["offset"]).reshape(e["shape"]).copy()
        arrays[e["name"]] = arr

    params = {}
    mask_arrays = {}
    opt_arrays = {"weights": {"m": [], "v": []}, "masks": {"m": [], "v": []}}
    for e in header["tensors"]:
        name = e["name"]
        arr = arrays[name]
        if name.startswith("param/"):
            params[name[len("param/"):]] = Tensor(arr, requires_grad=True,
                                                  dtype=arr.dtype)
        elif name.startswith("mask/"):
            mask_arrays[name[len("mask/"):]] = arr
        elif name.startswith("opt/"):
            _, group, kind, _idx = name.split("/")
            opt_arrays[group][kind].append(arr)

    masks = None
    if mask_arrays:
        masks = MaskSet(*(Tensor(mask_arrays[n], requires_grad=True,
                                 dtype=mask_arrays[n].dtype)
                          for n in _MASK_NAMES))

    config = None
    if header.get("config") is not None:
        base = ViTConfig.from_dict(header["config"])
        if header.get("arch") is not None:
            config = SlicedConfig(base, SlimArchitecture.from_json_dict(header["arch"]))
        else:
            config = base

    rng = None
    if header.get("rng_state") is not None:
        bitgen = np.random.PCG64()
        bitgen.state = header["rng_state"]
        rng = np.random.Generator(bitgen)

    opt_header = header.get("opt") or {}
    return Checkpoint(
        params=params, masks=masks, config=config, rng=rng,
        weight_opt=_load_opt(opt_header.get("weights"), opt_arrays["weights"]),
        mask_opt=_load_opt(opt_header.get("masks"), opt_arrays["masks"]),
        epoch=header.get("epoch"), hyper=header.get("hyper"),
        meta=header.get("meta"), header=header)
