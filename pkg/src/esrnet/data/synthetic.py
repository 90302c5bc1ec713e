"""Synthetic face-like dataset generator.

Renders smooth parametric faces (ellipse head, eyes, brows, mouth) whose
geometry is driven by the emotion class, with per-subject shape/tone
variation and per-sample jitter plus pixel noise. Classes map to fixed
points on the arousal-valence plane (all four quadrants are populated)
with small per-sample scatter. Everything is a pure function of the
config and seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .manifest import Sample, write_manifest

# class id -> (brow_angle, brow_raise, eye_open, mouth_curve, mouth_open, mouth_width, asym)
CLASS_GEOMETRY = {
    0: (0.00, 0.00, 1.00, 0.00, 0.15, 1.00, 0.0),   # neutral
    1: (0.15, 0.05, 0.90, 0.90, 0.35, 1.15, 0.0),   # happy
    2: (-0.35, -0.05, 0.75, -0.80, 0.20, 0.90, 0.0),  # sad
    3: (0.30, 0.18, 1.60, 0.05, 0.95, 0.80, 0.0),   # surprise
    4: (0.45, 0.12, 1.45, -0.35, 0.70, 1.00, 0.0),  # fear
    5: (-0.55, -0.15, 0.60, -0.45, 0.25, 1.05, 0.0),  # anger
    6: (-0.25, -0.08, 0.50, -0.25, 0.50, 0.95, 0.0),  # disgust
    7: (0.10, 0.00, 0.85, 0.35, 0.20, 1.00, 1.0),   # contempt (one-sided)
}

# class id -> (valence center, arousal center); covers all four quadrants
CLASS_AFFECT = {
    0: (0.25, -0.30),
    1: (0.65, 0.35),
    2: (-0.55, -0.45),
    3: (0.10, 0.75),
    4: (-0.45, 0.60),
    5: (-0.60, 0.45),
    6: (-0.60, 0.10),
    7: (-0.35, -0.15),
}


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    subjects: int = 24
    samples_per_subject: int = 16
    size: int = 32
    seed: int = 0
    difficulty: float = 0.5  # 0 = clean geometry, 1 = heavy jitter and noise

    def validate(self) -> None:
        if not 2 <= self.num_classes <= 8:
            raise ValueError(f"num_classes must be in [2, 8], got {self.num_classes}")
        if self.subjects < 1 or self.samples_per_subject < 1:
            raise ValueError("subjects and samples_per_subject must be >= 1")
        if self.size < 16:
            raise ValueError(f"size must be >= 16, got {self.size}")
        if not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty must be in [0, 1], got {self.difficulty}")


def _soft_ellipse(yy, xx, cy, cx, ry, rx, sharp=14.0, angle=0.0):
    """Anti-aliased filled ellipse via a logistic edge profile."""
    y, x = yy - cy, xx - cx
    if angle:
        cos_a, sin_a = np.cos(angle), np.sin(angle)
        y, x = cos_a * y + sin_a * x, -sin_a * y + cos_a * x
    d = np.sqrt((y / ry) ** 2 + (x / rx) ** 2)
    return 1.0 / (1.0 + np.exp(np.clip((d - 1.0) * sharp, -40.0, 40.0)))


def _subject_params(seed: int, subject: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, subject)))
    return {
        "scale": rng.uniform(0.84, 1.08),
        "cy": rng.uniform(-0.06, 0.06),
        "cx": rng.uniform(-0.06, 0.06),
        "skin": rng.uniform(0.45, 0.68),
        "eye_dx": rng.uniform(0.24, 0.32),
        "feature": rng.uniform(0.85, 1.15),
    }


def render_face(class_id: int, subject_params: dict, rng, size: int,
                difficulty: float) -> np.ndarray:
    """One uint8 (size, size) face image."""
    brow_a, brow_r, eye_o, m_curve, m_open, m_width, asym = CLASS_GEOMETRY[class_id]
    jit = (0.4 + 0.8 * difficulty) * 0.12
    brow_a += rng.uniform(-jit, jit)
    brow_r += rng.uniform(-jit, jit) * 0.5
    eye_o = max(0.25, eye_o + rng.uniform(-jit, jit) * 2.0)
    m_curve += rng.uniform(-jit, jit) * 1.5
    m_open = max(0.05, m_open + rng.uniform(-jit, jit))
    sp = subject_params

    axis = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    img = np.full((size, size), 0.12)

    s = sp["scale"]
    cy, cx = sp["cy"], sp["cx"]
    face = _soft_ellipse(yy, xx, cy, cx, 0.80 * s, 0.62 * s)
    img = img * (1 - face) + sp["skin"] * face

    feat = sp["feature"]
    for side in (-1.0, 1.0):
        ex = cx + side * sp["eye_dx"] * s
        ey = cy - 0.24 * s
        eye = _soft_ellipse(yy, xx, ey, ex, 0.075 * eye_o * s, 0.105 * s, sharp=18)
        img = img * (1 - eye) + 0.16 * eye
        brow_y = ey - (0.16 + 0.10 * brow_r) * s
        brow = _soft_ellipse(yy, xx, brow_y, ex, 0.022 * s, 0.11 * s,
                             sharp=18, angle=side * brow_a * 0.5)
        img = img * (1 - brow) + (sp["skin"] * (1 - 0.75 * feat)) * brow

    # mouth: a soft band following a parabola; asym tilts one corner
    my = cy + 0.42 * s
    half_w = 0.30 * m_width * s
    xm = (xx - cx) / max(half_w, 1e-6)
    curve_y = my + (0.10 * m_curve) * (xm ** 2) - 0.05 * m_curve + asym * 0.06 * xm
    window = 1.0 / (1.0 + np.exp((np.abs(xm) - 1.0) * 14))
    thick = (0.030 + 0.055 * m_open) * s
    band = np.exp(-((yy - curve_y) / thick) ** 2 * 2.0) * window
    img = img * (1 - band) + 0.18 * band

    noise = rng.normal(0.0, 0.02 + 0.05 * difficulty, size=img.shape)
    img = np.clip(img + noise, 0.0, 1.0)
    return np.round(img * 255.0).astype(np.uint8)


def generate_arrays(config: SynthConfig):
    """In-memory dataset: (images uint8 (N,S,S), emotions, arousal, valence, subjects)."""
    config.validate()
    images, emotions, arousals, valences, subjects = [], [], [], [], []
    for subj in range(config.subjects):
        sp = _subject_params(config.seed, subj)
        for i in range(config.samples_per_subject):
            cls = (subj + i) % config.num_classes  # every subject shows every class
            rng = np.random.default_rng(
                np.random.SeedSequence(config.seed, spawn_key=(2, subj, i))
            )
            images.append(render_face(cls, sp, rng, config.size, config.difficulty))
            v0, a0 = CLASS_AFFECT[cls]
            arousals.append(float(np.clip(a0 + rng.uniform(-0.12, 0.12), -1, 1)))
            valences.append(float(np.clip(v0 + rng.uniform(-0.12, 0.12), -1, 1)))
            emotions.append(cls)
            subjects.append(f"s{subj:04d}")
    return (np.stack(images), np.asarray(emotions), np.asarray(arousals),
            np.asarray(valences), subjects)


def write_dataset(out_dir: str, config: SynthConfig, splits=None) -> dict:
    """Write images plus manifest.csv; optional subject-disjoint split manifests.

    splits: None or (train_frac, val_frac, test_frac) summing to 1. Returns
    the manifest paths keyed by split name.
    """
    images, emotions, arousals, valences, subjects = generate_arrays(config)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    samples = []
    for i in range(len(images)):
        rel = os.path.join("images", f"{i:05d}.png")
        Image.fromarray(images[i]).save(os.path.join(out_dir, rel))
        samples.append(Sample(rel, int(emotions[i]), float(arousals[i]),
                              float(valences[i]), subjects[i]))

    out = {}
    main = os.path.join(out_dir, "manifest.csv")
    write_manifest(main, samples)
    out["all"] = main

    if splits is not None:
        if len(splits) != 3 or abs(sum(splits) - 1.0) > 1e-9:
            raise ValueError(f"splits must be three fractions summing to 1, got {splits}")
        subj_ids = sorted({s.subject for s in samples})
        n = len(subj_ids)
        n_train = max(1, round(splits[0] * n))
        n_val = max(1, round(splits[1] * n))
        groups = {
            "train": set(subj_ids[:n_train]),
            "val": set(subj_ids[n_train:n_train + n_val]),
            "test": set(subj_ids[n_train + n_val:]),
        }
        if not groups["test"]:
            raise ValueError("split leaves no test subjects; add subjects or change fractions")
        for name, members in groups.items():
            path = os.path.join(out_dir, f"{name}.csv")
            write_manifest(path, [s for s in samples if s.subject in members])
            out[name] = path
    return out
