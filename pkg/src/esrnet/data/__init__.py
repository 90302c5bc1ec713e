"""Dataset plumbing: manifests, folds, subsets, preprocessing, augmentation."""

from .augment import AugmentationConfig, augment, warp_affine
from .folds import FoldPlan, TrialSplit, make_subject_folds
from .manifest import DatasetIndex, ManifestError, Sample, load_dataset, write_manifest
from .preprocess import bilinear_resize, preprocess, preprocess_batch
from .sampling import balanced_subset, quadrant_balanced_subset, quadrant_of
from .synthetic import SynthConfig, generate_arrays, render_face, write_dataset

__all__ = [
    "AugmentationConfig",
    "augment",
    "warp_affine",
    "FoldPlan",
    "TrialSplit",
    "make_subject_folds",
    "DatasetIndex",
    "ManifestError",
    "Sample",
    "load_dataset",
    "write_manifest",
    "bilinear_resize",
    "preprocess",
    "preprocess_batch",
    "balanced_subset",
    "quadrant_balanced_subset",
    "quadrant_of",
    "SynthConfig",
    "generate_arrays",
    "render_face",
    "write_dataset",
]
