"""Versioned binary checkpoint container.

Layout: magic ``ASMK1`` + little-endian uint32 header length + UTF-8 JSON
header + the named tensors' float64 row-major payloads concatenated in
header order. Tensors are written sorted by name and JSON keys are
sorted, so identical contents serialize byte-identically.
"""

from __future__ import annotations

import json

import numpy as np
import torch

CKPT_MAGIC = b"ASMK1"


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def save_checkpoint(path, tensors: dict, config: dict) -> None:
    names = sorted(tensors)
    # shape is recorded before ascontiguousarray, which promotes 0-d to 1-d
    arrays = {n: np.asarray(tensors[n], dtype=np.float64) for n in names}
    header = {
        "config": config,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    arrays = {n: np.ascontiguousarray(a) for n, a in arrays.items()}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(np.uint32(len(blob)).astype("<u4").tobytes())
        fh.write(blob)
        for n in names:
            fh.write(arrays[n].astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (tensors by name, config dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CKPT_MAGIC) + 4 or blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    header_len = int(np.frombuffer(blob, dtype="<u4", count=1, offset=len(CKPT_MAGIC))[0])
    start = len(CKPT_MAGIC) + 4
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    offset = start + header_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors, header["config"]


def save_network(path, net, extra_config: dict | None = None) -> None:
    from .encoder import AssemblyPoseNet  # noqa: F401 (type context)

    tensors = {k: v.detach().numpy() for k, v in net.state_dict().items()}
    config = {"network": net.config.to_dict()}
    if extra_config:
        config.update(extra_config)
    save_checkpoint(path, tensors, config)


def load_network(path):
    """Rebuild a network from a checkpoint; returns (net, config dict)."""
    from .encoder import EncoderConfig, build_network

    tensors, config = load_checkpoint(path)
    net = build_network(EncoderConfig.from_dict(config["network"]))
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in tensors.items()}
    missing = set(net.state_dict()) - set(state)
    extra = set(state) - set(net.state_dict())
    if missing or extra:
        raise CheckpointError(
            f"{path}: tensor names do not match the network "
            f"(missing {sorted(missing)}, unexpected {sorted(extra)})"
        )
    net.load_state_dict(state)
    return net, config
