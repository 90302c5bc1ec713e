"""Ensemble decision rules and evaluation reports.

The default decision is a plurality vote over the branches' argmax labels.
Ties are broken by the bigger mean softmax probability among the tied
classes, then by the smaller class index, so a vote is fully deterministic
for any input. ``method="mean-prob"`` skips voting and takes the argmax of
the branch-averaged probabilities instead.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, stable for large logits."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ensemble_vote(logits: np.ndarray, method: str = "plurality") -> np.ndarray:
    """Fuse per-branch logits (E, N, K) into one label per sample."""
    logits = np.asarray(logits)
    if logits.ndim != 3:
        raise ValueError(f"expected (branches, samples, classes), got {logits.shape}")
    num_branches, n, k = logits.shape
    probs = softmax_probs(logits)
    mean_probs = probs.mean(axis=0)
    if method == "mean-prob":
        return mean_probs.argmax(axis=1)
    if method != "plurality":
        raise ValueError(f"unknown vote method {method!r}")

    branch_labels = logits.argmax(axis=2)  # (E, N)
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        counts = np.bincount(branch_labels[:, i], minlength=k)
        top = counts.max()
        tied = np.flatnonzero(counts == top)
        if len(tied) == 1:
            out[i] = tied[0]
        else:
            scores = mean_probs[i, tied]
            # argmax returns the first maximum, which is the lowest class
            # index among equal scores; that is the documented final tie-break
            out[i] = tied[np.argmax(scores)]
    return out


def ensemble_affect(affect: np.ndarray) -> np.ndarray:
    """Average the heads' (arousal, valence) predictions: (E, N, 2) -> (N, 2)."""
    affect = np.asarray(affect)
    if affect.ndim != 3 or affect.shape[2] != 2:
        raise ValueError(f"expected (heads, samples, 2), got {affect.shape}")
    return affect.mean(axis=0)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label vectors differ in length")
    if y_true.min(initial=0) < 0 or y_true.max(initial=0) >= num_classes:
        raise ValueError("true label out of range")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


@dataclass
class MetricsReport:
    """Everything the evaluation CLI prints for one model on one split."""

    accuracy: float
    per_branch_accuracy: list
    confusion: np.ndarray  # raw counts, rows = true class
    num_samples: int
    affect_rmse: float | None = None
    vote_method: str = "plurality"
    per_class_recall: list = field(default_factory=list)

    def normalized_confusion(self) -> np.ndarray:
        """Rows rescaled to sum to 1; all-zero rows stay zero."""
        m = self.confusion.astype(np.float64)
        totals = m.sum(axis=1, keepdims=True)
        return np.divide(m, totals, out=np.zeros_like(m), where=totals > 0)


def evaluate(logits, y_true, affect_pred=None, affect_true=None,
             method: str = "plurality") -> MetricsReport:
    """Score stacked branch logits (E, N, K) against integer labels."""
    logits = np.asarray(logits)
    y_true = np.asarray(y_true, dtype=np.int64)
    pred = ensemble_vote(logits, method=method)
    k = logits.shape[2]
    conf = confusion_matrix(y_true, pred, k)
    per_branch = [float((logits[b].argmax(axis=1) == y_true).mean())
                  for b in range(logits.shape[0])]
    recall = []
    for c in range(k):
        row = conf[c]
        recall.append(float(row[c] / row.sum()) if row.sum() else 0.0)
    rmse = None
    if affect_pred is not None:
        if affect_true is None:
            raise ValueError("affect_pred given without affect_true")
        fused = ensemble_affect(affect_pred)
        rmse = float(np.sqrt(np.mean((fused - np.asarray(affect_true)) ** 2)))
    return MetricsReport(
        accuracy=float((pred == y_true).mean()),
        per_branch_accuracy=per_branch,
        confusion=conf,
        num_samples=len(y_true),
        affect_rmse=rmse,
        vote_method=method,
        per_class_recall=recall,
    )


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    pvalue: float
    mean_diff: float
    n: int


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on matched score vectors.

    Identical vectors have no variance for the test to work with; that case
    is reported as no evidence of a difference (t=0, p=1) rather than NaN.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired test needs two equal-length 1-d vectors")
    if len(a) < 2:
        raise ValueError("paired test needs at least two pairs")
    if np.allclose(a, b, rtol=0.0, atol=0.0):
        return TTestResult(0.0, 1.0, 0.0, len(a))
    t, p = stats.ttest_rel(a, b)
    return TTestResult(float(t), float(p), float(np.mean(a - b)), len(a))


@dataclass(frozen=True)
class ResidualErrorReport:
    """Ensemble accuracy against the best single branch, plus a text summary.

    ``gap`` is the accuracy the vote adds beyond the strongest member; a
    single-branch ensemble has gap 0 by construction.
    """

    best_branch_accuracy: float
    ensemble_accuracy: float
    gap: float
    text: str


def residual_error_report(report: MetricsReport, class_names=None) -> ResidualErrorReport:
    """Summarize where the remaining errors sit and what the vote adds.

    The text lists per-class recall and the confusion pairs that carry the
    most errors, so a reader can see which classes the ensemble still
    mixes up; the structured fields carry the best-branch/ensemble gap.
    """
    k = report.confusion.shape[0]
    names = list(class_names) if class_names else [str(c) for c in range(k)]
    if len(names) != k:
        raise ValueError(f"need {k} class names, got {len(names)}")
    best = max(report.per_branch_accuracy)
    gap = report.accuracy - best
    lines = [
        f"samples: {report.num_samples}",
        f"accuracy: {report.accuracy:.4f} (vote: {report.vote_method})",
        f"best branch accuracy: {best:.4f}",
        f"ensemble gain over best branch: {gap:+.4f}",
        "per-class recall:",
    ]
    for c in range(k):
        lines.append(f"  {names[c]:<12} {report.per_class_recall[c]:.4f}")
    pairs = [
        (int(report.confusion[i, j]), i, j)
        for i in range(k) for j in range(k)
        if i != j and report.confusion[i, j] > 0
    ]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    lines.append("top confusions (true -> predicted):")
    if not pairs:
        lines.append("  none")
    for count, i, j in pairs[:10]:
        lines.append(f"  {names[i]} -> {names[j]}: {count}")
    if report.affect_rmse is not None:
        lines.append(f"affect rmse: {report.affect_rmse:.4f}")
    return ResidualErrorReport(best, report.accuracy, gap, "\n".join(lines) + "\n")


def save_confusion_csv(report: MetricsReport, path: str, class_names=None) -> None:
    """Raw-count confusion matrix with a header row and a true-class column."""
    k = report.confusion.shape[0]
    names = list(class_names) if class_names else [str(c) for c in range(k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + names)
        for c in range(k):
            writer.writerow([names[c]] + report.confusion[c].tolist())
