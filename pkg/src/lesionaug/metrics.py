"""Lesion size measurement and class-separability statistics.

Two instruments decide whether size still tells the classes apart: a
two-sample Kolmogorov-Smirnov test on per-class diameters, and a
one-dimensional threshold classifier ("size probe") fit on diameters alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .augment import NO_AUGMENTATION, AugmentationPolicy, apply_augmentation
from .core.image import ImageBuffer
from .core.manifest import DatasetManifest, Label

DEFAULT_TAU = 0.10
MIN_COVERAGE = 0.001
KS_TERMS = 100


class NoLesion(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class SampleTooSmall(ValueError):
    pass


class OneClassOnly(ValueError):
    pass


@dataclass(frozen=True)
class LesionMask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def _border_ring(data: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    if h <= 2 or w <= 2:
        return data.reshape(-1, 3)
    return np.concatenate([data[0], data[-1], data[1:-1, 0], data[1:-1, -1]])


def segment_lesion(img: ImageBuffer, tau: float = DEFAULT_TAU) -> LesionMask:
    """Largest 4-connected region whose color differs from the border median by more than ``tau``."""
    data = img.data
    background = np.median(_border_ring(data), axis=0)
    far = np.linalg.norm(data - background, axis=2) > tau
    labels, count = ndimage.label(far)  # default structure is 4-connected
    if count == 0:
        raise NoLesion("no pixel differs from the background")
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    if sizes[keep - 1] < MIN_COVERAGE * far.size:
        raise NoLesion(f"largest component has {sizes[keep - 1]} pixels, below 0.1% of the image")
    return LesionMask(labels == keep)


def equivalent_diameter(mask: LesionMask) -> float:
    area = mask.area
    if area < 1:
        raise EmptyMask("mask has no lesion pixels")
    return 2.0 * math.sqrt(area / math.pi)


def lesion_color_feature(img: ImageBuffer, mask: LesionMask) -> float:
    """Mean red minus mean green inside the mask; a size-independent hue cue."""
    inside = img.data[mask.bits]
    return float(inside[:, 0].mean() - inside[:, 1].mean())


# -- Kolmogorov-Smirnov ------------------------------------------------------

def kolmogorov_sf(lam: float, terms: int = KS_TERMS) -> float:
    """Survival function of the Kolmogorov distribution, series truncated at ``terms``."""
    if lam <= 0:
        return 1.0
    k = np.arange(1, terms + 1)
    p = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    return float(min(1.0, max(0.0, p)))


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sided two-sample KS statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) < 5 or len(b) < 5:
        raise SampleTooSmall(f"KS test needs at least 5 values per sample, got {len(a)} and {len(b)}")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / len(a)
    cdf_b = np.searchsorted(b, pooled, side="right") / len(b)
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    n = len(a) * len(b) / (len(a) + len(b))
    lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
    return d, kolmogorov_sf(lam)


# -- size probe ------------------------------------------------------------------

@dataclass(frozen=True)
class SizeProbe:
    """Predict Malignant when the diameter lies on the ``malignant_above`` side of ``threshold``.

    ``threshold`` may be +-inf when a constant prediction fits best.
    """

    threshold: float
    malignant_above: bool = True

    def predict(self, diameters) -> np.ndarray:
        d = np.asarray(diameters, dtype=np.float64)
        return d > self.threshold if self.malignant_above else d < self.threshold


def _split_pairs(data):
    d = np.array([float(x) for x, _ in data])
    y = np.array([lab is Label.MALIGNANT for _, lab in data])
    return d, y


def fit_size_probe(train) -> SizeProbe:
    """Best single threshold on diameter.

    Candidates are -inf, the midpoints between consecutive distinct sorted
    diameters, and +inf. Ties keep the smallest threshold, then the
    Malignant-above polarity.
    """
    d, y = _split_pairs(train)
    if y.all() or not y.any():
        raise OneClassOnly("size probe needs both classes in the training data")
    values = np.unique(d)
    thresholds = np.concatenate([[-np.inf], (values[:-1] + values[1:]) / 2.0, [np.inf]])
    order = np.argsort(d, kind="stable")
    d_sorted, y_sorted = d[order], y[order]
    # number of samples with diameter below each threshold, by class
    below = np.searchsorted(d_sorted, thresholds, side="left")
    mal_cum = np.concatenate([[0], np.cumsum(y_sorted)])
    mal_below = mal_cum[below]
    ben_below = below - mal_below
    n_mal, n_ben = int(y.sum()), int((~y).sum())
    correct_above = ben_below + (n_mal - mal_below)
    correct_below = mal_below + (n_ben - ben_below)
    best = None
    for i, t in enumerate(thresholds):
        for above, score in ((True, correct_above[i]), (False, correct_below[i])):
            if best is None or score > best[0]:
                best = (score, t, above)
    return SizeProbe(float(best[1]), best[2])


def eval_size_probe(probe: SizeProbe, test) -> float:
    d, y = _split_pairs(test)
    if len(d) == 0:
        raise ValueError("empty test set")
    return float(np.mean(probe.predict(d) == y))


# -- dataset statistics ------------------------------------------------------------

@dataclass
class LesionStats:
    benign_diameters: list = field(default_factory=list)
    malignant_diameters: list = field(default_factory=list)
    ks_statistic: float = 0.0
    ks_pvalue: float = 1.0
    skipped: int = 0

    @property
    def benign_mean(self) -> float:
        return float(np.mean(self.benign_diameters))

    @property
    def malignant_mean(self) -> float:
        return float(np.mean(self.malignant_diameters))


def measure_diameters(manifest: DatasetManifest, split: str | None = None, sample_limit: int | None = None,
                      policy: AugmentationPolicy = NO_AUGMENTATION, seed: int = 0, epoch: int = 0,
                      tau: float = DEFAULT_TAU) -> tuple[list, int]:
    """(diameter, label) pairs in sample-id order, optionally after augmentation.

    Returns the pairs and the number of images skipped for lacking a lesion.
    """
    records = sorted(manifest.records if split is None else manifest.split(split), key=lambda r: r.id)
    taken = {Label.BENIGN: 0, Label.MALIGNANT: 0}
    pairs = []
    skipped = 0
    for rec in records:
        if sample_limit is not None and taken[rec.label] >= sample_limit:
            continue
        img = apply_augmentation(rec, policy, seed, epoch, image=manifest.load(rec))
        try:
            diameter = equivalent_diameter(segment_lesion(img, tau))
        except NoLesion:
            skipped += 1
            continue
        taken[rec.label] += 1
        pairs.append((diameter, rec.label))
    return pairs, skipped


def stats_from_pairs(pairs, skipped: int = 0) -> LesionStats:
    benign = [d for d, lab in pairs if lab is Label.BENIGN]
    malignant = [d for d, lab in pairs if lab is Label.MALIGNANT]
    if len(benign) < 5 or len(malignant) < 5:
        raise SampleTooSmall(
            f"need at least 5 measurable samples per class, got {len(benign)} benign / {len(malignant)} malignant")
    d, p = ks_two_sample(benign, malignant)
    return LesionStats(benign, malignant, d, p, skipped)


def class_size_stats(manifest: DatasetManifest, sample_limit: int | None = None, split: str | None = None,
                     policy: AugmentationPolicy = NO_AUGMENTATION, seed: int = 0, epoch: int = 0,
                     tau: float = DEFAULT_TAU) -> LesionStats:
    pairs, skipped = measure_diameters(manifest, split, sample_limit, policy, seed, epoch, tau)
    return stats_from_pairs(pairs, skipped)


@dataclass
class SizeReport:
    stats: LesionStats
    probe: SizeProbe
    probe_train_acc: float
    probe_test_acc: float

    def to_dict(self) -> dict:
        return {
            "benign_mean_px": self.stats.benign_mean,
            "malignant_mean_px": self.stats.malignant_mean,
            "ks_d": self.stats.ks_statistic,
            "ks_p": self.stats.ks_pvalue,
            "probe_train_acc": self.probe_train_acc,
            "probe_test_acc": self.probe_test_acc,
            "skipped": self.stats.skipped,
        }


def size_report(manifest: DatasetManifest, policy: AugmentationPolicy = NO_AUGMENTATION, seed: int = 0,
                sample_limit: int | None = None, tau: float = DEFAULT_TAU) -> SizeReport:
    """Size separability of the training split under ``policy``.

    KS statistics come from the (augmented) train split. The probe is fit on
    those diameters and scored on the test split augmented by the same policy,
    so its test accuracy says how much size alone predicts the label in that
    augmented distribution.
    """
    train, skipped_train = measure_diameters(manifest, "train", sample_limit, policy, seed, 0, tau)
    test, skipped_test = measure_diameters(manifest, "test", sample_limit, policy, seed, 0, tau)
    stats = stats_from_pairs(train, skipped_train + skipped_test)
    probe = fit_size_probe(train)
    return SizeReport(stats, probe, eval_size_probe(probe, train), eval_size_probe(probe, test))
