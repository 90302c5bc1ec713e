"""Deterministic balanced subset draws.

Selection within each group is a pure function of (seed, group key): each
group draws from its own spawned generator, so adding or removing other
groups never perturbs a group's picks.
"""

from __future__ import annotations

import numpy as np

from .manifest import DatasetIndex, ManifestError


def _capped_draw(items: list, cap: int, seed: int, group_key: int) -> list:
    if len(items) <= cap:
        return list(items)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(group_key,)))
    picks = rng.choice(len(items), size=cap, replace=False)
    return [items[i] for i in sorted(picks)]


def balanced_subset(index: DatasetIndex, cap: int, seed: int = 0) -> DatasetIndex:
    """At most ``cap`` samples per emotion class, drawn without replacement."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    groups = {}
    for s in index:
        if s.emotion is None:
            raise ManifestError([(s.path, "balanced_subset needs emotion labels on every row")])
        groups.setdefault(s.emotion, []).append(s)
    chosen = []
    for cls in sorted(groups):
        chosen.extend(_capped_draw(groups[cls], cap, seed, cls))
    return index.subset(chosen)


def quadrant_of(arousal: float, valence: float) -> int:
    """Arousal-valence quadrant, zeros counted on the nonnegative side.

    0: a>=0,v>=0   1: a>=0,v<0   2: a<0,v>=0   3: a<0,v<0
    """
    return (0 if arousal >= 0 else 2) + (0 if valence >= 0 else 1)


def quadrant_balanced_subset(index: DatasetIndex, cap: int, seed: int = 0) -> DatasetIndex:
    """At most ``cap`` samples per arousal-valence quadrant."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    groups = {}
    for s in index:
        if not s.has_affect:
            raise ManifestError([(s.path, "quadrant_balanced_subset needs affect labels on every row")])
        groups.setdefault(quadrant_of(s.arousal, s.valence), []).append(s)
    chosen = []
    for q in sorted(groups):
        chosen.extend(_capped_draw(groups[q], cap, seed, q))
    return index.subset(chosen)
