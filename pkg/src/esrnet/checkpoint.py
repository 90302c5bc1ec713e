"""Versioned binary checkpoints (.npz).

Layout: a format-version scalar, the canonical config JSON and its hash,
branch/affect counts, every parameter array under its qualified name, and
batchnorm running buffers under ``<layer>.running_{mean,var}``. Loading
rebuilds the model from the embedded config and refuses hash mismatches.
"""

from __future__ import annotations

import json

import numpy as np

from .architecture import ArchitectureConfig, config_from_dict, config_hash
from .model import EsrModel, build

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: EsrModel, path: str) -> None:
    arrays = {
        "meta.format_version": np.asarray(FORMAT_VERSION),
        "meta.config_json": np.asarray(json.dumps(model.config.to_dict())),
        "meta.config_hash": np.asarray(config_hash(model.config)),
        "meta.num_branches": np.asarray(model.num_branches),
        "meta.has_affect": np.asarray(int(model.has_affect_heads)),
        "meta.dtype": np.asarray(str(model.dtype)),
    }
    for name, p in model.named_parameters().items():
        arrays[f"param.{name}"] = p.data
    for name, buf in model.state_arrays().items():
        arrays[f"state.{name}"] = buf
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str, expect_config: ArchitectureConfig | None = None) -> EsrModel:
    with np.load(path, allow_pickle=False) as z:
        if "meta.format_version" not in z:
            raise CheckpointError(f"{path}: not a checkpoint (missing format tag)")
        version = int(z["meta.format_version"])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: format version {version} unsupported (want {FORMAT_VERSION})")
        cfg = config_from_dict(json.loads(str(z["meta.config_json"])))
        stored_hash = str(z["meta.config_hash"])
        if stored_hash != config_hash(cfg):
            raise CheckpointError(f"{path}: embedded config does not match its hash")
        if expect_config is not None and config_hash(expect_config) != stored_hash:
            raise CheckpointError(
                f"{path}: checkpoint architecture {stored_hash[:12]} does not match "
                f"expected {config_hash(expect_config)[:12]}"
            )
        model = build(cfg, seed=0, dtype=np.dtype(str(z["meta.dtype"])))
        for _ in range(int(z["meta.num_branches"])):
            model.add_branch()
        if int(z["meta.has_affect"]):
            model.attach_affect_heads()

        params = model.named_parameters()
        for name, p in params.items():
            key = f"param.{name}"
            if key not in z:
                raise CheckpointError(f"{path}: missing array {key}")
            arr = z[key]
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"{path}: {name} has shape {arr.shape}, model wants {p.data.shape}"
                )
            p.tensor.data = arr.astype(model.dtype, copy=True)
            p.tensor.zero_grad()
            p.momentum_buffer = np.zeros_like(p.tensor.data)
        for name, buf in model.state_arrays().items():
            key = f"state.{name}"
            if key not in z:
                raise CheckpointError(f"{path}: missing array {key}")
            buf[...] = z[key].astype(buf.dtype)
    return model
