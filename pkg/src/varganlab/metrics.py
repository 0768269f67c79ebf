"""Mode-collapse metrics for mixtures and binary design sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import BinaryPatternSpec, MixtureSpec, classify_images

KL_SMOOTHING = 1e-6


@dataclass
class ModeAssignment:
    index: np.ndarray  # nearest center per sample
    distance: np.ndarray  # Euclidean distance to that center, data units


def assign_modes(samples: np.ndarray, spec: MixtureSpec) -> ModeAssignment:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) == 0:
        raise ValueError("need a non-empty (count, dim) sample matrix")
    idx, dist = kernels.nearest_centers(samples, spec.centers)
    return ModeAssignment(idx, dist)


def high_quality_mask(assign: ModeAssignment, spec: MixtureSpec) -> np.ndarray:
    return assign.distance <= 3.0 * spec.std


def mode_coverage(assign: ModeAssignment, spec: MixtureSpec, witness: bool = True) -> int:
    """Modes hit by at least one sample; with ``witness`` the sample must also
    lie within 3 standard deviations of the center."""
    idx = assign.index[high_quality_mask(assign, spec)] if witness else assign.index
    return int(len(np.unique(idx)))


def high_quality_fraction(assign: ModeAssignment, spec: MixtureSpec) -> float:
    return float(np.mean(high_quality_mask(assign, spec)))


def kl_from_counts(counts, reference=None, eps: float = KL_SMOOTHING) -> float:
    """KL(smoothed empirical histogram || reference) in nats."""
    counts = np.asarray(counts, dtype=np.float64) + eps
    p = counts / counts.sum()
    q = np.full_like(p, 1.0 / len(p)) if reference is None else np.asarray(reference, float)
    q = q / q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def kl_mode_divergence(assign: ModeAssignment, spec: MixtureSpec) -> float:
    counts = np.bincount(assign.index, minlength=spec.N)
    return kl_from_counts(counts)


def to_images(samples: np.ndarray, spec: BinaryPatternSpec) -> np.ndarray:
    """Threshold at 0.5 (inclusive) and reshape to ``(count, side, side)``."""
    samples = np.asarray(samples)
    if samples.ndim == 3:
        samples = samples.reshape(len(samples), -1)
    if samples.shape[1] != spec.dim:
        raise ValueError(f"sample width {samples.shape[1]} is not {spec.side}x{spec.side}")
    return (samples >= 0.5).astype(np.uint8).reshape(-1, spec.side, spec.side)


def unique_design_count(samples: np.ndarray, spec: BinaryPatternSpec) -> dict[str, int]:
    """Distinct thresholded designs per category."""
    images = to_images(samples, spec)
    flat = np.unique(images.reshape(len(images), -1), axis=0)
    hp = classify_images(flat.reshape(-1, spec.side, spec.side), spec.connectivity)
    return {"HP": int(hp.sum()), "LP": int((~hp).sum())}


def category_indices(samples: np.ndarray, spec: BinaryPatternSpec) -> np.ndarray:
    """0 for HP, 1 for LP, per sample."""
    return np.where(classify_images(to_images(samples, spec), spec.connectivity), 0, 1)


def conditional_accuracy(samples: np.ndarray, requested_labels, spec: BinaryPatternSpec) -> float:
    requested = np.asarray(requested_labels).ravel()
    if len(requested) != len(samples):
        raise ValueError(f"{len(requested)} labels for {len(samples)} samples")
    return float(np.mean(category_indices(samples, spec) == requested))


def per_category_accuracy(samples, requested_labels, spec: BinaryPatternSpec) -> dict[str, float]:
    requested = np.asarray(requested_labels).ravel()
    got = category_indices(samples, spec)
    out = {}
    for k, name in enumerate(spec.categories):
        sel = requested == k
        out[name] = float(np.mean(got[sel] == k)) if sel.any() else float("nan")
    return out


@dataclass
class MetricRecord:
    modes_covered: int
    kl: float
    high_quality_fraction: float | None = None
    hp_unique: int | None = None
    lp_unique: int | None = None
    accuracy: float | None = None
    accuracy_hp: float | None = None
    accuracy_lp: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def mixture_metrics(samples: np.ndarray, spec: MixtureSpec, witness: bool = True) -> MetricRecord:
    a = assign_modes(samples, spec)
    return MetricRecord(mode_coverage(a, spec, witness), kl_mode_divergence(a, spec),
                        high_quality_fraction(a, spec))


def binary_metrics(samples: np.ndarray, spec: BinaryPatternSpec, reference_freq,
                   requested_labels=None) -> MetricRecord:
    """Unique designs per category, KL of the category histogram against
    ``reference_freq`` and, for conditional runs, accuracy."""
    counts = unique_design_count(samples, spec)
    cats = category_indices(samples, spec)
    kl = kl_from_counts(np.bincount(cats, minlength=2), reference_freq)
    rec = MetricRecord(counts["HP"] + counts["LP"], kl, None, counts["HP"], counts["LP"])
    if requested_labels is not None:
        requested = np.asarray(requested_labels).ravel()
        rec.accuracy = float(np.mean(cats == requested))
        per = per_category_accuracy(samples, requested, spec)
        rec.accuracy_hp, rec.accuracy_lp = per["HP"], per["LP"]
    return rec
