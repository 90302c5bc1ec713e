"""Architecture descriptions as data.

A network is a sequence of convolutional *stages* (conv -> batchnorm ->
relu, optionally followed by a 2x2/2 max-pool), closed by global average
pooling and a dense classification head. The branching level L splits the
sequence: stages 1..L form the shared trunk, stages L+1.. plus the head
form the per-branch template. Configs are plain JSON files; the reference
variants under ``esrnet/configs`` are produced by the documented searches
in :mod:`esrnet.recover`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

from .autograd import ShapeError, conv_output_size

POOL_KERNEL = 2
POOL_STRIDE = 2


@dataclass(frozen=True)
class LayerSpec:
    """One primitive layer inside a trunk or branch template."""

    kind: str  # conv | batchnorm | relu | maxpool | gap | linear
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    features: int = 0


@dataclass(frozen=True)
class StageSpec:
    """One conv stage: conv(filters, kernel) + batchnorm + relu [+ pool]."""

    filters: int
    kernel: int
    padding: int
    pool: bool

    def layers(self) -> tuple:
        base = (
            LayerSpec("conv", out_channels=self.filters, kernel=self.kernel,
                      stride=1, padding=self.padding),
            LayerSpec("batchnorm", out_channels=self.filters),
            LayerSpec("relu"),
        )
        if self.pool:
            return base + (LayerSpec("maxpool", kernel=POOL_KERNEL, stride=POOL_STRIDE),)
        return base


@dataclass
class ArchitectureConfig:
    """Stage list plus the branching split and head description."""

    name: str
    input_shape: tuple  # (channels, height, width)
    num_classes: int
    branching_level: int  # stages 1..L are shared
    stages: list = field(default_factory=list)  # list[StageSpec]

    @property
    def trunk(self) -> list:
        out = []
        for s in self.stages[: self.branching_level]:
            out.extend(s.layers())
        return out

    @property
    def branch_template(self) -> list:
        out = []
        for s in self.stages[self.branching_level:]:
            out.extend(s.layers())
        out.append(LayerSpec("gap"))
        out.append(LayerSpec("linear", features=self.num_classes))
        return out

    def at_level(self, level: int) -> "ArchitectureConfig":
        """Same stages, different split point."""
        return ArchitectureConfig(self.name, self.input_shape, self.num_classes,
                                  level, list(self.stages))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "branching_level": self.branching_level,
            "stages": [
                {"filters": s.filters, "kernel": s.kernel, "padding": s.padding, "pool": s.pool}
                for s in self.stages
            ],
        }


def config_from_dict(d: dict) -> ArchitectureConfig:
    required = {"name", "input_shape", "num_classes", "branching_level", "stages"}
    missing = required - set(d)
    if missing:
        raise ValueError(f"architecture config missing keys: {sorted(missing)}")
    stages = [StageSpec(int(s["filters"]), int(s["kernel"]), int(s["padding"]), bool(s["pool"]))
              for s in d["stages"]]
    cfg = ArchitectureConfig(
        name=str(d["name"]),
        input_shape=tuple(int(v) for v in d["input_shape"]),
        num_classes=int(d["num_classes"]),
        branching_level=int(d["branching_level"]),
        stages=stages,
    )
    validate_architecture(cfg)
    return cfg


def load_architecture(path_or_name: str) -> ArchitectureConfig:
    """Load a config file; bare names resolve to the packaged references."""
    text = None
    if "/" not in str(path_or_name) and not str(path_or_name).endswith(".json"):
        ref = resources.files("esrnet.configs").joinpath(f"esr_{path_or_name}.json")
        if ref.is_file():
            text = ref.read_text()
    if text is None:
        with open(path_or_name, "r", encoding="utf-8") as fh:
            text = fh.read()
    return config_from_dict(json.loads(text))


def save_architecture(cfg: ArchitectureConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")


def config_hash(cfg: ArchitectureConfig) -> str:
    """Stable digest of the canonical JSON form (checkpoint compatibility key)."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def validate_architecture(cfg: ArchitectureConfig) -> None:
    """Reject configs whose shapes cannot feed forward."""
    if not cfg.stages:
        raise ValueError("architecture needs at least one stage")
    if not 1 <= cfg.branching_level <= len(cfg.stages):
        raise ValueError(
            f"branching_level must lie in [1, {len(cfg.stages)}], got {cfg.branching_level}"
        )
    if cfg.num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {cfg.num_classes}")
    if len(cfg.input_shape) != 3 or any(v < 1 for v in cfg.input_shape):
        raise ValueError(f"input_shape must be (channels, height, width), got {cfg.input_shape}")
    trace_shapes(cfg)


def trace_shapes(cfg: ArchitectureConfig) -> list:
    """Activation shape after every stage; raises ShapeError on underflow."""
    c, h, w = cfg.input_shape
    shapes = []
    for i, s in enumerate(cfg.stages, start=1):
        h = conv_output_size(h, s.kernel, 1, s.padding)
        w = conv_output_size(w, s.kernel, 1, s.padding)
        c = s.filters
        if s.pool:
            if h < POOL_KERNEL or w < POOL_KERNEL:
                raise ShapeError(f"stage {i}: pool kernel {POOL_KERNEL} larger than {h}x{w}")
            h = (h - POOL_KERNEL) // POOL_STRIDE + 1
            w = (w - POOL_KERNEL) // POOL_STRIDE + 1
        if h < 1 or w < 1:
            raise ShapeError(f"stage {i}: spatial extent collapsed to {h}x{w}")
        shapes.append((c, h, w))
    return shapes


def stage_parameter_count(in_channels: int, stage: StageSpec) -> int:
    """Learnable scalars in one stage: conv W+b plus batchnorm gamma+beta."""
    conv = stage.filters * in_channels * stage.kernel * stage.kernel + stage.filters
    return conv + 2 * stage.filters


def head_parameter_count(in_features: int, num_classes: int) -> int:
    return num_classes * in_features + num_classes


def parameter_plan(cfg: ArchitectureConfig) -> dict:
    """Closed-form counts: per stage, shared, per branch, single net, ensemble."""
    chans = [cfg.input_shape[0]] + [s.filters for s in cfg.stages]
    per_stage = [stage_parameter_count(chans[i], s) for i, s in enumerate(cfg.stages)]
    head = head_parameter_count(cfg.stages[-1].filters, cfg.num_classes)
    shared = sum(per_stage[: cfg.branching_level])
    branch = sum(per_stage[cfg.branching_level:]) + head
    return {
        "per_stage": per_stage,
        "head": head,
        "shared": shared,
        "branch": branch,
        "single": sum(per_stage) + head,
    }


def ensemble_parameter_count(cfg: ArchitectureConfig, num_branches: int) -> int:
    plan = parameter_plan(cfg)
    return plan["shared"] + num_branches * plan["branch"]
