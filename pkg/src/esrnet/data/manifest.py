"""CSV dataset manifests.

A manifest is a CSV file with the exact header
``path,emotion,arousal,valence,subject``. ``path`` is relative to the
manifest's directory; ``emotion`` is a class index or empty; ``arousal``
and ``valence`` are reals in [-1, 1] or empty (both or neither); every row
needs at least one supervision signal and a nonempty subject id.
"""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

MANIFEST_HEADER = ["path", "emotion", "arousal", "valence", "subject"]


class ManifestError(ValueError):
    """Manifest-level failure carrying per-row diagnostics."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"row {r}: {msg}" for r, msg in self.problems[:8])
        more = "" if len(self.problems) <= 8 else f" (+{len(self.problems) - 8} more)"
        super().__init__(f"invalid manifest: {lines}{more}")


@dataclass
class Sample:
    path: str
    emotion: int | None
    arousal: float | None
    valence: float | None
    subject: str

    @property
    def has_affect(self) -> bool:
        return self.arousal is not None and self.valence is not None


class DatasetIndex:
    """Validated manifest rows bound to a root directory."""

    def __init__(self, root: str, samples: list):
        self.root = root
        self.samples = list(samples)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def subjects(self) -> list:
        return sorted({s.subject for s in self.samples})

    def class_histogram(self) -> dict:
        return dict(Counter(s.emotion for s in self.samples if s.emotion is not None))

    def subset(self, samples) -> "DatasetIndex":
        return DatasetIndex(self.root, list(samples))

    def restrict_to_subjects(self, subjects) -> "DatasetIndex":
        keep = set(subjects)
        return self.subset(s for s in self.samples if s.subject in keep)

    def load_image(self, sample: Sample) -> np.ndarray:
        """Decode one image to uint8 (H, W) or (H, W, 3)."""
        full = os.path.join(self.root, sample.path)
        try:
            with Image.open(full) as im:
                im = im.convert("RGB") if im.mode not in ("L", "RGB") else im.copy()
        except (UnidentifiedImageError, OSError) as e:
            raise ManifestError([(sample.path, f"unreadable image: {e}")]) from e
        return np.asarray(im)


def _parse_row(row: dict, rownum: int, num_classes: int, problems: list):
    raw_emotion = (row.get("emotion") or "").strip()
    raw_a = (row.get("arousal") or "").strip()
    raw_v = (row.get("valence") or "").strip()
    path = (row.get("path") or "").strip()
    subject = (row.get("subject") or "").strip()

    if not path:
        problems.append((rownum, "empty path"))
        return None
    if not subject:
        problems.append((rownum, "empty subject id"))
        return None

    emotion = None
    if raw_emotion:
        try:
            emotion = int(raw_emotion)
        except ValueError:
            problems.append((rownum, f"emotion {raw_emotion!r} is not an integer"))
            return None
        if not 0 <= emotion < num_classes:
            problems.append((rownum, f"emotion {emotion} outside [0, {num_classes})"))
            return None

    if bool(raw_a) != bool(raw_v):
        problems.append((rownum, "arousal and valence must both be present or both empty"))
        return None
    arousal = valence = None
    if raw_a:
        try:
            arousal, valence = float(raw_a), float(raw_v)
        except ValueError:
            problems.append((rownum, f"affect values {raw_a!r}/{raw_v!r} are not numbers"))
            return None
        if not (-1.0 <= arousal <= 1.0 and -1.0 <= valence <= 1.0):
            problems.append((rownum, f"affect ({arousal}, {valence}) outside [-1, 1]"))
            return None

    if emotion is None and arousal is None:
        problems.append((rownum, "row carries no supervision (no emotion, no affect)"))
        return None
    return Sample(path, emotion, arousal, valence, subject)


def load_dataset(manifest_path: str, num_classes: int = 8, check_files: bool = True) -> DatasetIndex:
    """Parse and validate a manifest; all row problems are reported together."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    problems, samples, seen = [], [], set()
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ManifestError([(1, f"header must be {','.join(MANIFEST_HEADER)}, "
                                     f"got {reader.fieldnames}")])
        for rownum, row in enumerate(reader, start=2):
            s = _parse_row(row, rownum, num_classes, problems)
            if s is None:
                continue
            if s.path in seen:
                problems.append((rownum, f"duplicate path {s.path!r}"))
                continue
            seen.add(s.path)
            if check_files and not os.path.isfile(os.path.join(root, s.path)):
                problems.append((rownum, f"file not found: {s.path}"))
                continue
            samples.append(s)
    if problems:
        raise ManifestError(problems)
    if not samples:
        raise ManifestError([(1, "manifest has no data rows")])
    return DatasetIndex(root, samples)


def write_manifest(path: str, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for s in samples:
            w.writerow([
                s.path,
                "" if s.emotion is None else s.emotion,
                "" if s.arousal is None else f"{s.arousal:.6f}",
                "" if s.valence is None else f"{s.valence:.6f}",
                s.subject,
            ])
