"""Subject-independent fold construction.

Subjects are sorted by id and dealt round-robin across k folds, so a
subject's images all land in exactly one fold. A trial t holds out fold t
for testing and fold (t+1) mod k for validation; training uses the first
four remaining folds in ascending order (fewer when k is small).
"""

from __future__ import annotations

from dataclasses import dataclass

from .manifest import DatasetIndex

TRAIN_FOLDS_PER_TRIAL = 4


@dataclass(frozen=True)
class TrialSplit:
    trial: int
    test_fold: int
    val_fold: int
    train_folds: tuple


class FoldPlan:
    def __init__(self, fold_subjects: list):
        self.fold_subjects = [tuple(f) for f in fold_subjects]

    @property
    def k(self) -> int:
        return len(self.fold_subjects)

    def fold_of(self, subject: str) -> int:
        for i, subs in enumerate(self.fold_subjects):
            if subject in subs:
                return i
        raise KeyError(subject)

    def trial(self, t: int) -> TrialSplit:
        k = self.k
        if not 0 <= t < k:
            raise ValueError(f"trial index {t} outside [0, {k})")
        test, val = t, (t + 1) % k
        remaining = [f for f in range(k) if f not in (test, val)]
        train = tuple(remaining[: min(TRAIN_FOLDS_PER_TRIAL, len(remaining))])
        return TrialSplit(t, test, val, train)

    def trials(self) -> list:
        return [self.trial(t) for t in range(self.k)]

    def fold_index(self, index: DatasetIndex, fold: int) -> DatasetIndex:
        return index.restrict_to_subjects(self.fold_subjects[fold])

    def split_index(self, index: DatasetIndex, trial: TrialSplit):
        """(train, val, test) DatasetIndex triple for one trial."""
        train_subjects = [s for f in trial.train_folds for s in self.fold_subjects[f]]
        return (
            index.restrict_to_subjects(train_subjects),
            index.restrict_to_subjects(self.fold_subjects[trial.val_fold]),
            index.restrict_to_subjects(self.fold_subjects[trial.test_fold]),
        )


def make_subject_folds(index: DatasetIndex, k: int = 10) -> FoldPlan:
    """Deal sorted subjects round-robin into k subject-disjoint folds."""
    subjects = index.subjects
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if k > len(subjects):
        raise ValueError(f"cannot build {k} folds from {len(subjects)} subjects")
    folds = [[] for _ in range(k)]
    for i, subject in enumerate(subjects):
        folds[i % k].append(subject)
    return FoldPlan(folds)
