"""The ensemble model: one shared trunk, many branch stacks.

``build`` creates the trunk, ``add_branch`` appends an independent branch
instantiated from the branch template, and ``forward`` evaluates the trunk
once and fans the result out to every branch. Per-branch 2-neuron affect
heads can be attached after emotion training; attaching them freezes all
other parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .architecture import ArchitectureConfig, LayerSpec
from .autograd import Parameter, ShapeError, Tensor


def _kaiming_uniform(shape, fan_in, rng, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2dLayer:
    def __init__(self, spec: LayerSpec, in_channels: int, rng, dtype, name: str):
        k = spec.kernel
        self.stride, self.padding = spec.stride, spec.padding
        self.weight = Parameter(
            _kaiming_uniform((spec.out_channels, in_channels, k, k), in_channels * k * k, rng, dtype),
            name=f"{name}.weight",
        )
        self.bias = Parameter(np.zeros(spec.out_channels, dtype=dtype), name=f"{name}.bias")

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ag.conv2d(x, self.weight.value, self.bias.value, self.stride, self.padding)

    def parameters(self):
        return [self.weight, self.bias]

    def state_arrays(self):
        return {}


class BatchNorm2dLayer:
    def __init__(self, spec: LayerSpec, in_channels: int, rng, dtype, name: str):
        c = spec.out_channels
        if c != in_channels:
            raise ShapeError(f"{name}: batchnorm channels {c} != incoming {in_channels}")
        self.gamma = Parameter(np.ones(c, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(c, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.momentum = 0.1
        self.eps = 1e-5

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ag.batchnorm2d(x, self.gamma.value, self.beta.value,
                              self.running_mean, self.running_var, mode,
                              self.momentum, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]

    def state_arrays(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReluLayer:
    def __init__(self, spec, in_channels, rng, dtype, name):
        pass

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ag.relu(x)

    def parameters(self):
        return []

    def state_arrays(self):
        return {}


class MaxPool2dLayer:
    def __init__(self, spec: LayerSpec, in_channels, rng, dtype, name):
        self.kernel, self.stride = spec.kernel, spec.stride

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ag.maxpool2d(x, self.kernel, self.stride)

    def parameters(self):
        return []

    def state_arrays(self):
        return {}


class GlobalAvgPoolLayer:
    def __init__(self, spec, in_channels, rng, dtype, name):
        pass

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ag.global_avg_pool(x)

    def parameters(self):
        return []

    def state_arrays(self):
        return {}


class LinearLayer:
    def __init__(self, spec: LayerSpec, in_features: int, rng, dtype, name: str):
        self.weight = Parameter(
            _kaiming_uniform((spec.features, in_features), in_features, rng, dtype),
            name=f"{name}.weight",
        )
        self.bias = Parameter(np.zeros(spec.features, dtype=dtype), name=f"{name}.bias")

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return ag.linear(x, self.weight.value, self.bias.value)

    def parameters(self):
        return [self.weight, self.bias]

    def state_arrays(self):
        return {}


_LAYER_KINDS = {
    "conv": Conv2dLayer,
    "batchnorm": BatchNorm2dLayer,
    "relu": ReluLayer,
    "maxpool": MaxPool2dLayer,
    "gap": GlobalAvgPoolLayer,
    "linear": LinearLayer,
}


def _instantiate(specs, in_channels, rng, dtype, prefix):
    """Build layer objects, threading the channel/feature width through."""
    layers, width = [], in_channels
    for i, spec in enumerate(specs):
        layer = _LAYER_KINDS[spec.kind](spec, width, rng, dtype, f"{prefix}.{i}")
        if spec.kind == "conv":
            width = spec.out_channels
        elif spec.kind == "linear":
            width = spec.features
        layers.append(layer)
    return layers


@dataclass
class BranchOutputs:
    """Per-branch emotion logits and, when heads exist, affect predictions."""

    logits: list  # list[Tensor], one (N, num_classes) per branch
    affect: list = field(default_factory=list)  # list[Tensor], (N, 2) per branch
    activations: dict = field(default_factory=dict)  # layer id -> Tensor (capture mode)


class EsrModel:
    """Shared trunk + branch list; see module docstring."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(0,)))
        self.trunk = _instantiate(config.trunk, config.input_shape[0], rng, self.dtype, "trunk")
        self.branches = []
        self.affect_heads = []

    @property
    def num_branches(self) -> int:
        return len(self.branches)

    @property
    def has_affect_heads(self) -> bool:
        return bool(self.affect_heads)

    def _trunk_out_channels(self) -> int:
        width = self.config.input_shape[0]
        for spec in self.config.trunk:
            if spec.kind == "conv":
                width = spec.out_channels
        return width

    def add_branch(self) -> int:
        """Append a freshly initialized branch; existing arrays untouched."""
        b = len(self.branches) + 1
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(b,)))
        layers = _instantiate(self.config.branch_template, self._trunk_out_channels(),
                              rng, self.dtype, f"branch{b}")
        self.branches.append(layers)
        if self.affect_heads:
            raise RuntimeError("cannot add branches after affect heads are attached")
        return b

    def attach_affect_heads(self) -> None:
        """One 2-neuron linear head per branch, fed by relu(emotion logits).

        Every pre-existing parameter is frozen; only the new heads train.
        """
        if self.affect_heads:
            raise RuntimeError("affect heads already attached")
        if not self.branches:
            raise RuntimeError("attach_affect_heads needs at least one branch")
        for p in self.parameters():
            p.freeze()
        spec = LayerSpec("linear", features=2)
        for b in range(1, len(self.branches) + 1):
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(1000 + b,)))
            self.affect_heads.append(
                LinearLayer(spec, self.config.num_classes, rng, self.dtype, f"affect{b}")
            )

    def forward(self, batch, mode: str = "train", capture: bool = False) -> BranchOutputs:
        """Trunk once, then every branch; optional activation capture."""
        if not self.branches:
            raise RuntimeError("forward needs at least one branch; call add_branch first")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=self.dtype))
        if x.ndim != 4:
            raise ShapeError(f"expected (N, C, H, W) batch, got shape {x.shape}")
        if x.shape[1] != self.config.input_shape[0]:
            raise ShapeError(
                f"batch channels ({x.shape[1]}) != configured channels ({self.config.input_shape[0]})"
            )

        acts = {}
        for i, layer in enumerate(self.trunk):
            x = layer.forward(x, mode)
            if capture:
                acts[f"trunk.{i}"] = x
        out = BranchOutputs(logits=[], activations=acts)
        for b, layers in enumerate(self.branches, start=1):
            h = x
            for i, layer in enumerate(layers):
                h = layer.forward(h, mode)
                if capture:
                    acts[f"branch{b}.{i}"] = h
            out.logits.append(h)
        for head, logits in zip(self.affect_heads, out.logits):
            out.affect.append(head.forward(ag.relu(logits), mode))
        return out

    def predict_logits(self, inputs, batch_size: int = 64) -> np.ndarray:
        """Eval-mode emotion logits for every branch, stacked (E, N, classes)."""
        inputs = np.asarray(inputs, dtype=self.dtype)
        chunks = []
        for lo in range(0, len(inputs), batch_size):
            out = self.forward(inputs[lo:lo + batch_size], mode="eval")
            chunks.append(np.stack([t.data for t in out.logits]))
        return np.concatenate(chunks, axis=1)

    def predict_affect(self, inputs, batch_size: int = 64) -> np.ndarray:
        """Eval-mode (arousal, valence) for every head, stacked (E, N, 2)."""
        if not self.affect_heads:
            raise RuntimeError("model has no affect heads")
        inputs = np.asarray(inputs, dtype=self.dtype)
        chunks = []
        for lo in range(0, len(inputs), batch_size):
            out = self.forward(inputs[lo:lo + batch_size], mode="eval")
            chunks.append(np.stack([t.data for t in out.affect]))
        return np.concatenate(chunks, axis=1)

    # -- parameter bookkeeping -------------------------------------------

    def parameters(self, part: str = "all"):
        """Parameters of 'all', 'shared', 'branches', 'branch:<b>' or 'affect'."""
        if part == "all":
            groups = [self.parameters("shared"), self.parameters("branches"),
                      self.parameters("affect")]
            return [p for g in groups for p in g]
        if part == "shared":
            return [p for layer in self.trunk for p in layer.parameters()]
        if part == "branches":
            return [p for layers in self.branches for layer in layers
                    for p in layer.parameters()]
        if part == "affect":
            return [p for head in self.affect_heads for p in head.parameters()]
        if part.startswith("branch:"):
            b = int(part.split(":", 1)[1])
            if not 1 <= b <= len(self.branches):
                raise ValueError(f"branch index {b} out of range 1..{len(self.branches)}")
            return [p for layer in self.branches[b - 1] for p in layer.parameters()]
        if part.startswith("affect:"):
            b = int(part.split(":", 1)[1])
            if not 1 <= b <= len(self.affect_heads):
                raise ValueError(f"affect head index {b} out of range 1..{len(self.affect_heads)}")
            return self.affect_heads[b - 1].parameters()
        raise ValueError(f"unknown part {part!r}")

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def state_arrays(self):
        """Non-trainable buffers (batchnorm running stats), keyed by name."""
        out = {}
        for prefix, layers in self._named_layer_groups():
            for i, layer in enumerate(layers):
                for key, arr in layer.state_arrays().items():
                    out[f"{prefix}.{i}.{key}"] = arr
        return out

    def _named_layer_groups(self):
        groups = [("trunk", self.trunk)]
        for b, layers in enumerate(self.branches, start=1):
            groups.append((f"branch{b}", layers))
        for b, head in enumerate(self.affect_heads, start=1):
            groups.append((f"affect{b}", [head]))
        return groups

    def set_trainable(self, part: str, lr_multiplier: float) -> None:
        for p in self.parameters(part):
            p.lr_multiplier = lr_multiplier

    def count_parameters(self, part: str = "all") -> int:
        """Learnable scalars (conv/linear weights+biases, batchnorm gamma+beta)."""
        return int(sum(p.data.size for p in self.parameters(part)))

    def parameter_breakdown(self) -> dict:
        out = {"shared": self.count_parameters("shared")}
        for b in range(1, len(self.branches) + 1):
            out[f"branch:{b}"] = self.count_parameters(f"branch:{b}")
        for b in range(1, len(self.affect_heads) + 1):
            out[f"affect:{b}"] = self.count_parameters(f"affect:{b}")
        out["all"] = self.count_parameters("all")
        return out

    def checksum(self, part: str = "all") -> str:
        """Order-stable digest of parameter bytes; detects any drift."""
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters(part):
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def build(config: ArchitectureConfig, seed: int = 0, dtype=np.float32) -> EsrModel:
    """Fresh model holding only the initialized trunk."""
    return EsrModel(config, seed=seed, dtype=dtype)
