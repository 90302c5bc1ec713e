"""Sequential ensemble growth under a combined loss.

The training loop appends one branch at a time. When branch ``b`` starts,
every parameter that already existed gets a learning-rate multiplier from
the chosen strategy, the branch draws its own data subset, and the whole
live model is trained against the sum of all ``b`` branch losses, so the
gradients of every branch flow into the shared trunk together. The
learning-rate schedule restarts from its initial value for each branch.

Strategy multipliers (shared trunk, previously trained branches, new branch):

==========  ======  =========  ====
fixed        1.0      1.0      1.0
varied       0.2      0.2      1.0
frozen       0.0      0.0      1.0
==========  ======  =========  ====

Branch 1 always trains jointly with the trunk at full rate; there is
nothing trained yet for a strategy to protect. ``interleaved`` and
``bagging`` are different procedures, not multiplier sets: see
:func:`train_interleaved` and :func:`train_traditional_ensemble`.

Freezing acts on learnable parameters only. Batchnorm running statistics
are activation statistics, not weights, and keep tracking whatever batches
pass through a frozen stage.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .architecture import ArchitectureConfig
from .autograd import NumericFault, sgd_momentum_step
from .checkpoint import save_checkpoint
from .data.preprocess import preprocess
from .data.sampling import quadrant_of
from .metrics import evaluate
from .model import EsrModel, build

STRATEGY_NAMES = ("fixed", "varied", "frozen", "interleaved", "bagging")

# (shared trunk, previously trained branches, new branch)
_STRATEGY_MULTIPLIERS = {
    "fixed": (1.0, 1.0, 1.0),
    "varied": (0.2, 0.2, 1.0),
    "frozen": (0.0, 0.0, 1.0),
}

SUBSET_POLICIES = ("full", "subject-rotation", "balanced-cap")

LOG_HEADER = ("epoch", "branch", "lr", "train_loss",
              "branch_val_acc", "ensemble_val_acc", "wall_time")


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite.

    The model is rolled back to the last completed branch before this is
    raised; ``restored_branches`` says how many branches that state has and
    ``checkpoint_path`` points at the matching on-disk checkpoint, if any.
    """

    def __init__(self, message, restored_branches=0, checkpoint_path=None):
        super().__init__(message)
        self.restored_branches = restored_branches
        self.checkpoint_path = checkpoint_path


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: ``initial * decay ** (epoch // every)``, epoch 0-based."""

    initial: float
    decay: float = 1.0
    every: int = 1

    def __post_init__(self):
        if self.initial <= 0:
            raise ValueError(f"initial lr must be positive, got {self.initial}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.every < 1:
            raise ValueError(f"decay period must be >= 1, got {self.every}")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        return self.initial * self.decay ** (epoch // self.every)


@dataclass
class TrainData:
    """Preprocessed arrays the loop consumes directly.

    ``inputs`` is (N, C, H, W) float32 already standardized; ``labels`` are
    integer emotion classes. Affect targets and subject ids are optional and
    only required by the procedures that use them.
    """

    inputs: np.ndarray
    labels: np.ndarray | None = None
    arousal: np.ndarray | None = None
    valence: np.ndarray | None = None
    subjects: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        if self.inputs.ndim != 4:
            raise ValueError(f"inputs must be (N, C, H, W), got {self.inputs.shape}")
        n = len(self.inputs)
        for name in ("labels", "arousal", "valence", "subjects"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr)
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, inputs have {n}")
            setattr(self, name, arr)
        if self.labels is not None:
            self.labels = self.labels.astype(np.int64)

    def __len__(self):
        return len(self.inputs)

    def take(self, indices) -> "TrainData":
        indices = np.asarray(indices, dtype=np.int64)
        pick = lambda a: None if a is None else a[indices]
        return TrainData(self.inputs[indices], pick(self.labels),
                         pick(self.arousal), pick(self.valence), pick(self.subjects))

    @property
    def affect_targets(self) -> np.ndarray:
        if self.arousal is None or self.valence is None:
            raise ValueError("data has no affect targets")
        return np.stack([self.arousal, self.valence], axis=1).astype(np.float32)

    @classmethod
    def from_arrays(cls, images, labels=None, arousal=None, valence=None,
                    subjects=None, size=None, channels=1) -> "TrainData":
        """Preprocess raw (N, H, W[, 3]) uint8 frames into a training set."""
        images = np.asarray(images)
        if size is None:
            size = images.shape[1:3]
        inputs = np.stack([preprocess(im, size, channels=channels) for im in images])
        return cls(inputs, labels, arousal, valence, subjects)

    @classmethod
    def from_index(cls, index, size, channels=1) -> "TrainData":
        """Load and preprocess every sample of a manifest index."""
        inputs, labels, arousal, valence, subjects = [], [], [], [], []
        for s in index:
            inputs.append(preprocess(index.load_image(s), size, channels=channels))
            labels.append(-1 if s.emotion is None else s.emotion)
            arousal.append(np.nan if s.arousal is None else s.arousal)
            valence.append(np.nan if s.valence is None else s.valence)
            subjects.append(s.subject)
        labels = np.asarray(labels, dtype=np.int64)
        arousal = np.asarray(arousal, dtype=np.float64)
        valence = np.asarray(valence, dtype=np.float64)
        return cls(
            np.stack(inputs),
            labels if (labels >= 0).all() else None,
            arousal if np.isfinite(arousal).all() else None,
            valence if np.isfinite(valence).all() else None,
            np.asarray(subjects),
        )


@dataclass
class TrainConfig:
    strategy: str = "fixed"
    num_branches: int = 4
    epochs_per_branch: int = 10
    batch_size: int = 32
    momentum: float = 0.9
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(0.1, 0.75, 10))
    seed: int = 0
    subset_policy: str = "subject-rotation"
    subset_cap: int = 0
    early_stop_delta: float | None = None
    early_stop_patience: int = 3
    deterministic: bool = True

    def validate(self) -> None:
        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"strategy must be one of {STRATEGY_NAMES}, got {self.strategy!r}")
        if self.num_branches < 1:
            raise ValueError("num_branches must be >= 1")
        if self.epochs_per_branch < 1:
            raise ValueError("epochs_per_branch must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batchnorm needs two samples)")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.subset_policy not in SUBSET_POLICIES:
            raise ValueError(
                f"subset_policy must be one of {SUBSET_POLICIES}, got {self.subset_policy!r}")
        if self.subset_policy == "balanced-cap" and self.subset_cap < 1:
            raise ValueError("balanced-cap needs subset_cap >= 1")
        if self.early_stop_delta is not None and self.early_stop_delta < 0:
            raise ValueError("early_stop_delta must be >= 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")


@dataclass
class LogRow:
    """One training epoch as it lands in the CSV log."""

    epoch: int
    branch: int
    lr: float
    train_loss: float
    branch_val_acc: list | None
    ensemble_val_acc: float | None
    wall_time: float

    def to_csv(self) -> list:
        accs = "" if self.branch_val_acc is None else "|".join(
            f"{a:.4f}" for a in self.branch_val_acc)
        ens = "" if self.ensemble_val_acc is None else f"{self.ensemble_val_acc:.4f}"
        return [self.epoch, self.branch, f"{self.lr:.6g}", f"{self.train_loss:.6f}",
                accs, ens, f"{self.wall_time:.3f}"]


def write_training_log(rows, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for row in rows:
            writer.writerow(row.to_csv())


@dataclass
class TrainResult:
    model: object
    rows: list
    checkpoints: dict = field(default_factory=dict)
    log_path: str | None = None


# -- losses ----------------------------------------------------------------

def per_branch_losses(outputs, labels) -> list:
    """Cross-entropy of each branch's logits against the shared labels."""
    labels = np.asarray(labels, dtype=np.int64)
    return [ag.softmax_cross_entropy(t, labels) for t in outputs.logits]


def combined_loss(outputs, labels):
    """Sum of every live branch's cross-entropy; one backward call trains all."""
    parts = per_branch_losses(outputs, labels)
    total = parts[0]
    for part in parts[1:]:
        total = ag.add(total, part)
    return total


def combined_affect_loss(outputs, targets, num_heads: int):
    """Sum of per-head affect errors over the first ``num_heads`` heads."""
    if num_heads < 1 or num_heads > len(outputs.affect):
        raise ValueError(f"num_heads {num_heads} out of range 1..{len(outputs.affect)}")
    targets = np.asarray(targets, dtype=np.float64)
    parts = [ag.rmse_loss(outputs.affect[j], targets) for j in range(num_heads)]
    total = parts[0]
    for part in parts[1:]:
        total = ag.add(total, part)
    return total


# -- per-branch data subsets -------------------------------------------------

def subset_indices(data: TrainData, policy: str, branch: int, num_branches: int,
                   seed: int, cap: int = 0) -> np.ndarray:
    """Row indices branch ``branch`` (1-based) trains on.

    subject-rotation leaves one subject group out per branch so every branch
    sees a different but mostly overlapping draw; balanced-cap redraws up to
    ``cap`` rows per class with a branch-specific stream.
    """
    n = len(data)
    if policy == "full" or (policy == "subject-rotation" and num_branches < 2):
        return np.arange(n)
    if policy == "subject-rotation":
        if data.subjects is None:
            raise ValueError("subject-rotation needs subject ids on the training data")
        subjects = sorted(set(data.subjects.tolist()))
        held_out = {s for i, s in enumerate(subjects) if i % num_branches == branch - 1}
        keep = np.asarray([s not in held_out for s in data.subjects])
        return np.flatnonzero(keep)
    if policy == "balanced-cap":
        if data.labels is None:
            raise ValueError("balanced-cap needs class labels")
        picked = []
        for cls in np.unique(data.labels):
            rows = np.flatnonzero(data.labels == cls)
            if len(rows) > cap:
                rng = np.random.default_rng(
                    np.random.SeedSequence(seed, spawn_key=(90, branch, int(cls))))
                rows = np.sort(rng.choice(rows, size=cap, replace=False))
            picked.append(rows)
        return np.concatenate(picked)
    raise ValueError(f"unknown subset policy {policy!r}")


def _quadrant_indices(data: TrainData, branch: int, seed: int, cap: int) -> np.ndarray:
    """Quadrant-capped draw over the affect plane for one tuning stage."""
    if data.arousal is None or data.valence is None:
        raise ValueError("affect tuning needs arousal and valence targets")
    quads = np.asarray([quadrant_of(a, v) for a, v in zip(data.arousal, data.valence)])
    picked = []
    for q in range(4):
        rows = np.flatnonzero(quads == q)
        if cap and len(rows) > cap:
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(91, branch, q)))
            rows = np.sort(rng.choice(rows, size=cap, replace=False))
        picked.append(rows)
    return np.concatenate(picked)


# -- epoch plumbing ----------------------------------------------------------

def _batch_slices(n: int, batch_size: int, order: np.ndarray):
    """Shuffled mini-batches; a trailing singleton is merged into its
    predecessor because batchnorm cannot normalize one sample."""
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield order[lo:hi]

def _run_epoch(model, data: TrainData, cfg: TrainConfig, lr: float,
               branch: int, epoch: int, loss_fn, mode: str = "train") -> float:
    if len(data) < 2:
        raise ValueError("training subset has fewer than 2 samples")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(17, branch, epoch)))
    order = rng.permutation(len(data))
    total, batches = 0.0, 0
    for idx in _batch_slices(len(data), cfg.batch_size, order):
        outputs = model.forward(data.inputs[idx], mode=mode)
        loss = loss_fn(outputs, idx)
        if not np.isfinite(loss.data):
            raise NumericFault(f"non-finite loss at branch {branch} epoch {epoch}")
        ag.backward(loss)
        sgd_momentum_step(model.parameters(), lr, cfg.momentum)
        total += float(loss.data)
        batches += 1
    return total / batches


def _val_metrics(model, val: TrainData):
    report = evaluate(model.predict_logits(val.inputs), val.labels)
    return report.per_branch_accuracy, report.accuracy


def _snapshot(model: EsrModel) -> dict:
    return {
        "branches": model.num_branches,
        "params": {p.name: p.data.copy() for p in model.parameters()},
        "state": {k: v.copy() for k, v in model.state_arrays().items()},
    }


def _restore(model: EsrModel, snap: dict) -> None:
    del model.branches[snap["branches"]:]
    for p in model.parameters():
        p.data[...] = snap["params"][p.name]
        p.grad[...] = 0.0
        p.momentum_buffer[...] = 0.0
    state = model.state_arrays()
    for key, arr in snap["state"].items():
        state[key][...] = arr


def _epoch_loop(model, sub, val, cfg, branch, start_epoch, rows, loss_fn):
    """Shared per-branch epoch loop with logging and optional early stop."""
    best, stall = -np.inf, 0
    epoch = start_epoch
    for e in range(cfg.epochs_per_branch):
        lr = cfg.schedule.lr_at(e)
        t0 = time.perf_counter()
        loss = _run_epoch(model, sub, cfg, lr, branch, e, loss_fn)
        wall = 0.0 if cfg.deterministic else time.perf_counter() - t0
        accs, ens = (None, None) if val is None else _val_metrics(model, val)
        rows.append(LogRow(epoch, branch, lr, loss, accs, ens, wall))
        epoch += 1
        if val is not None and cfg.early_stop_delta is not None:
            if ens > best + cfg.early_stop_delta:
                best, stall = ens, 0
            else:
                stall += 1
                if stall >= cfg.early_stop_patience:
                    break
    return epoch


# -- the main sequential procedure -------------------------------------------

def train_esr(config, data: TrainData, cfg: TrainConfig, val: TrainData | None = None,
              out_dir: str | None = None) -> TrainResult:
    """Grow and train the shared-trunk ensemble branch by branch.

    ``config`` is an architecture (a fresh model is built from it) or an
    ``EsrModel`` with no branches yet. Checkpoints land in ``out_dir`` at
    every branch boundary plus ``final.npz`` and ``train_log.csv``.
    """
    cfg.validate()
    if cfg.strategy == "interleaved":
        raise ValueError("use train_interleaved for the interleaved procedure")
    if cfg.strategy == "bagging":
        raise ValueError("use train_traditional_ensemble for bagging")
    if data.labels is None:
        raise ValueError("training data has no class labels")
    model = build(config, seed=cfg.seed) if isinstance(config, ArchitectureConfig) else config
    if model.num_branches:
        raise ValueError("train_esr expects a model with no branches yet")
    shared_m, trained_m, fresh_m = _STRATEGY_MULTIPLIERS[cfg.strategy]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rows, checkpoints = [], {}
    epoch = 0
    snap = _snapshot(model)
    last_good = None
    for b in range(1, cfg.num_branches + 1):
        model.add_branch()
        if b == 1:
            # nothing is trained yet; the trunk must learn with its first branch
            model.set_trainable("shared", 1.0)
            model.set_trainable("branch:1", 1.0)
        else:
            model.set_trainable("shared", shared_m)
            for j in range(1, b):
                model.set_trainable(f"branch:{j}", trained_m)
            model.set_trainable(f"branch:{b}", fresh_m)
        sub = data.take(subset_indices(data, cfg.subset_policy, b,
                                       cfg.num_branches, cfg.seed, cfg.subset_cap))
        loss_fn = lambda out, idx: combined_loss(out, sub.labels[idx])
        try:
            epoch = _epoch_loop(model, sub, val, cfg, b, epoch, rows, loss_fn)
        except NumericFault as err:
            _restore(model, snap)
            raise TrainingDiverged(
                f"training diverged on branch {b}: {err}",
                restored_branches=model.num_branches,
                checkpoint_path=last_good,
            ) from err
        snap = _snapshot(model)
        if out_dir:
            last_good = os.path.join(out_dir, f"branch{b}.npz")
            save_checkpoint(model, last_good)
            checkpoints[b] = last_good

    log_path = None
    if out_dir:
        final = os.path.join(out_dir, "final.npz")
        save_checkpoint(model, final)
        checkpoints["final"] = final
        log_path = os.path.join(out_dir, "train_log.csv")
        write_training_log(rows, log_path)
    return TrainResult(model, rows, checkpoints, log_path)


def extend_esr(model: EsrModel, data: TrainData, cfg: TrainConfig,
               val: TrainData | None = None, out_dir: str | None = None) -> TrainResult:
    """Add one branch to an already trained model and run its phase.

    Every existing branch counts as trained, so the strategy multipliers
    gate the trunk and all earlier branches while the new branch learns
    at full rate. The schedule restarts, exactly as it does at each
    branch boundary inside ``train_esr``, and subset draws treat the
    grown branch count as the ensemble size. On divergence the model is
    restored to its pre-extension state.
    """
    cfg.validate()
    if cfg.strategy == "interleaved":
        raise ValueError("use train_interleaved for the interleaved procedure")
    if cfg.strategy == "bagging":
        raise ValueError("use train_traditional_ensemble for bagging")
    if data.labels is None:
        raise ValueError("training data has no class labels")
    if not model.num_branches:
        raise ValueError("extend_esr needs a model with at least one trained branch")
    shared_m, trained_m, fresh_m = _STRATEGY_MULTIPLIERS[cfg.strategy]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rows, checkpoints = [], {}
    snap = _snapshot(model)
    b = model.add_branch()
    model.set_trainable("shared", shared_m)
    for j in range(1, b):
        model.set_trainable(f"branch:{j}", trained_m)
    model.set_trainable(f"branch:{b}", fresh_m)
    sub = data.take(subset_indices(data, cfg.subset_policy, b, b, cfg.seed, cfg.subset_cap))
    loss_fn = lambda out, idx: combined_loss(out, sub.labels[idx])
    try:
        _epoch_loop(model, sub, val, cfg, b, 0, rows, loss_fn)
    except NumericFault as err:
        _restore(model, snap)
        raise TrainingDiverged(
            f"training diverged on branch {b}: {err}",
            restored_branches=model.num_branches,
            checkpoint_path=None,
        ) from err
    log_path = None
    if out_dir:
        path = os.path.join(out_dir, f"branch{b}.npz")
        save_checkpoint(model, path)
        checkpoints[b] = path
        log_path = os.path.join(out_dir, "train_log.csv")
        write_training_log(rows, log_path)
    return TrainResult(model, rows, checkpoints, log_path)


def train_interleaved(config, data: TrainData, cfg: TrainConfig,
                      val: TrainData | None = None, out_dir: str | None = None) -> TrainResult:
    """Round-robin alternative: all branches exist up front.

    Epoch ``e`` trains only branch ``(e % E) + 1`` (multiplier 1, the others
    0) together with the trunk, against that branch's own loss and subset.
    The total epoch budget matches the sequential procedure, and the
    schedule position is the number of epochs the active branch has seen.
    """
    cfg.validate()
    if data.labels is None:
        raise ValueError("training data has no class labels")
    model = build(config, seed=cfg.seed) if isinstance(config, ArchitectureConfig) else config
    if model.num_branches:
        raise ValueError("train_interleaved expects a model with no branches yet")
    for _ in range(cfg.num_branches):
        model.add_branch()
    subs = [data.take(subset_indices(data, cfg.subset_policy, b, cfg.num_branches,
                                     cfg.seed, cfg.subset_cap))
            for b in range(1, cfg.num_branches + 1)]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rows = []
    total_epochs = cfg.epochs_per_branch * cfg.num_branches
    for epoch in range(total_epochs):
        b = epoch % cfg.num_branches + 1
        model.set_trainable("shared", 1.0)
        for j in range(1, cfg.num_branches + 1):
            model.set_trainable(f"branch:{j}", 1.0 if j == b else 0.0)
        sub = subs[b - 1]
        turn = epoch // cfg.num_branches
        lr = cfg.schedule.lr_at(turn)
        t0 = time.perf_counter()
        loss = _run_epoch(model, sub, cfg, lr, b, turn,
                          lambda out, idx: ag.softmax_cross_entropy(
                              out.logits[b - 1], sub.labels[idx]))
        wall = 0.0 if cfg.deterministic else time.perf_counter() - t0
        accs, ens = (None, None) if val is None else _val_metrics(model, val)
        rows.append(LogRow(epoch, b, lr, loss, accs, ens, wall))

    checkpoints, log_path = {}, None
    if out_dir:
        final = os.path.join(out_dir, "final.npz")
        save_checkpoint(model, final)
        checkpoints["final"] = final
        log_path = os.path.join(out_dir, "train_log.csv")
        write_training_log(rows, log_path)
    return TrainResult(model, rows, checkpoints, log_path)


class TraditionalEnsemble:
    """Independently trained single-branch networks voting together."""

    def __init__(self, models):
        if not models:
            raise ValueError("ensemble needs at least one model")
        self.models = list(models)

    def predict_logits(self, inputs, batch_size: int = 64) -> np.ndarray:
        return np.concatenate(
            [m.predict_logits(inputs, batch_size) for m in self.models], axis=0)

    def count_parameters(self) -> int:
        return sum(m.count_parameters() for m in self.models)


def train_traditional_ensemble(config: ArchitectureConfig, data: TrainData,
                               cfg: TrainConfig, val: TrainData | None = None,
                               out_dir: str | None = None) -> TrainResult:
    """Bagging baseline: ``num_branches`` full networks, nothing shared.

    Each network is a one-branch model with its own seed and its own
    leave-one-group-out subject draw, trained like a lone branch-1.
    """
    cfg.validate()
    if data.labels is None:
        raise ValueError("training data has no class labels")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    models, rows, checkpoints = [], [], {}
    single = replace(cfg, strategy="fixed", num_branches=1)
    for n in range(1, cfg.num_branches + 1):
        seed_n = int(np.random.SeedSequence(cfg.seed, spawn_key=(500, n)).generate_state(1)[0])
        net = build(config, seed=seed_n)
        net.add_branch()
        net.set_trainable("shared", 1.0)
        net.set_trainable("branch:1", 1.0)
        sub = data.take(subset_indices(data, cfg.subset_policy, n,
                                       cfg.num_branches, cfg.seed, cfg.subset_cap))
        net_cfg = replace(single, seed=seed_n)
        loss_fn = lambda out, idx: combined_loss(out, sub.labels[idx])
        start = (n - 1) * cfg.epochs_per_branch
        _epoch_loop(net, sub, val, net_cfg, n, start, rows, loss_fn)
        models.append(net)
        if out_dir:
            path = os.path.join(out_dir, f"net{n}.npz")
            save_checkpoint(net, path)
            checkpoints[n] = path

    log_path = None
    if out_dir:
        log_path = os.path.join(out_dir, "train_log.csv")
        write_training_log(rows, log_path)
    return TrainResult(TraditionalEnsemble(models), rows, checkpoints, log_path)


# -- fine-tuning procedures ---------------------------------------------------

def fine_tune_affect(model: EsrModel, data: TrainData, cfg: TrainConfig | None = None,
                     out_dir: str | None = None) -> TrainResult:
    """Attach and tune the 2-neuron affect heads, one head at a time.

    Attaching freezes every emotion parameter, so only head weights move:
    the head being tuned runs at full rate, already-tuned heads at 0.1.
    Each stage draws a quadrant-capped subset and minimizes the summed
    affect error of the heads tuned so far. The frozen stack runs in
    inference mode throughout, so emotion predictions are bit-identical
    before and after tuning.
    """
    if cfg is None:
        cfg = TrainConfig(num_branches=model.num_branches, epochs_per_branch=10,
                          schedule=LrSchedule(0.01, 0.75, 10), subset_policy="full")
    cfg.validate()
    if data.arousal is None or data.valence is None:
        raise ValueError("affect tuning needs arousal and valence targets")
    if not model.has_affect_heads:
        model.attach_affect_heads()
    num_heads = len(model.affect_heads)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rows = []
    epoch = 0
    for b in range(1, num_heads + 1):
        for j in range(1, num_heads + 1):
            model.set_trainable(f"affect:{j}",
                                1.0 if j == b else (0.1 if j < b else 0.0))
        sub = data.take(_quadrant_indices(data, b, cfg.seed, cfg.subset_cap))
        targets = sub.affect_targets
        loss_fn = lambda out, idx: combined_affect_loss(out, targets[idx], b)
        for e in range(cfg.epochs_per_branch):
            lr = cfg.schedule.lr_at(e)
            t0 = time.perf_counter()
            # the emotion stack is fully frozen, so it runs in inference
            # mode: batchnorm buffers must not drift while heads learn
            loss = _run_epoch(model, sub, cfg, lr, b, e, loss_fn, mode="eval")
            wall = 0.0 if cfg.deterministic else time.perf_counter() - t0
            rows.append(LogRow(epoch, b, lr, loss, None, None, wall))
            epoch += 1

    checkpoints, log_path = {}, None
    if out_dir:
        final = os.path.join(out_dir, "affect.npz")
        save_checkpoint(model, final)
        checkpoints["final"] = final
        log_path = os.path.join(out_dir, "affect_log.csv")
        write_training_log(rows, log_path)
    return TrainResult(model, rows, checkpoints, log_path)


def fine_tune_transfer(model: EsrModel, data: TrainData, cfg: TrainConfig | None = None,
                       val: TrainData | None = None, out_dir: str | None = None) -> TrainResult:
    """Adapt a trained ensemble to a new dataset, branch by branch.

    Stage ``b`` trains branch ``b`` and the trunk at full rate, keeps the
    already-adapted branches moving slowly (0.2), and holds the not yet
    adapted ones still (0). The loss covers branches 1..b; inputs must
    already be preprocessed to the model's input shape.
    """
    if model.num_branches == 0:
        raise ValueError("transfer needs a model with trained branches")
    if model.has_affect_heads:
        raise ValueError("transfer tuning applies to the emotion stack, not affect heads")
    if cfg is None:
        cfg = TrainConfig(num_branches=model.num_branches, epochs_per_branch=10,
                          schedule=LrSchedule(0.1, 0.75, 10),
                          subset_policy="balanced-cap", subset_cap=64)
    cfg.validate()
    if data.labels is None:
        raise ValueError("transfer needs class labels on the new data")
    expected = tuple(model.config.input_shape)
    got = tuple(data.inputs.shape[1:])
    if got != expected:
        raise ValueError(f"inputs are {got}, model wants {expected}; resize upstream")

    num_branches = model.num_branches
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    rows, checkpoints = [], {}
    epoch = 0
    for b in range(1, num_branches + 1):
        model.set_trainable("shared", 1.0)
        for j in range(1, num_branches + 1):
            model.set_trainable(f"branch:{j}",
                                1.0 if j == b else (0.2 if j < b else 0.0))
        sub = data.take(subset_indices(data, cfg.subset_policy, b,
                                       num_branches, cfg.seed, cfg.subset_cap))
        loss_fn = lambda out, idx: _leading_branch_loss(out, sub.labels[idx], b)
        epoch = _epoch_loop(model, sub, val, cfg, b, epoch, rows, loss_fn)
        if out_dir:
            path = os.path.join(out_dir, f"transfer_branch{b}.npz")
            save_checkpoint(model, path)
            checkpoints[b] = path

    log_path = None
    if out_dir:
        final = os.path.join(out_dir, "transfer.npz")
        save_checkpoint(model, final)
        checkpoints["final"] = final
        log_path = os.path.join(out_dir, "transfer_log.csv")
        write_training_log(rows, log_path)
    return TrainResult(model, rows, checkpoints, log_path)


def _leading_branch_loss(outputs, labels, num_branches: int):
    """Combined cross-entropy restricted to the first ``num_branches`` branches."""
    labels = np.asarray(labels, dtype=np.int64)
    parts = [ag.softmax_cross_entropy(outputs.logits[j], labels)
             for j in range(num_branches)]
    total = parts[0]
    for part in parts[1:]:
        total = ag.add(total, part)
    return total
