"""Rotation, contrast and zoom transforms plus class-conditional policies.

All geometric transforms resample with bilinear interpolation and reflect
padding about the image center ``((W-1)/2, (H-1)/2)``. Transforms with a zero
factor return the input unchanged, bit for bit.
"""

from __future__ import annotations

import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.image import ImageBuffer, read_image, write_image
from .core.manifest import DatasetManifest, Label, Sample, save_manifest
from .core.rng import RngState, derive_stream, uniform

METHODS = ("rotation", "contrast", "zoom")


class AugmentError(RuntimeError):
    """Raised by batch augmentation; the message names the failing record."""


# -- resampling ------------------------------------------------------------

def _reflect(coord: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(coord)
    period = 2.0 * (n - 1)
    c = np.mod(np.abs(coord), period)
    return np.where(c > n - 1, period - c, c)


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``data[y, x, :]`` at real coordinates with reflect padding."""
    h, w = data.shape[:2]
    xs = _reflect(xs, w)
    ys = _reflect(ys, h)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = (1.0 - fx) * data[y0, x0] + fx * data[y0, x1]
    bottom = (1.0 - fx) * data[y1, x0] + fx * data[y1, x1]
    return np.clip((1.0 - fy) * top + fy * bottom, 0.0, 1.0)


def _grid(h: int, w: int):
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs - cx, ys - cy, cx, cy


def _cos_sin(turns: float) -> tuple[float, float]:
    quarter = turns * 4.0
    if quarter == round(quarter):
        # exact values at multiples of 90 degrees keep the index maps exact
        return [(1.0, 0.0), (0.0, -1.0), (-1.0, 0.0), (0.0, 1.0)][int(round(quarter)) % 4]
    angle = -turns * 2.0 * math.pi
    return math.cos(angle), math.sin(angle)


def rotate(img: ImageBuffer, turns: float) -> ImageBuffer:
    """Rotate by ``turns`` of a full revolution (0.25 = 90 degrees)."""
    if not -0.5 <= turns <= 0.5:
        raise ValueError(f"rotate: turns must lie in [-0.5, 0.5], got {turns}")
    if turns == 0:
        return img
    h, w = img.height, img.width
    dx, dy, cx, cy = _grid(h, w)
    c, s = _cos_sin(turns)
    xs = cx + dx * c - dy * s
    ys = cy + dx * s + dy * c
    return ImageBuffer(bilinear_sample(img.data, xs, ys))


def adjust_contrast(img: ImageBuffer, factor: float) -> ImageBuffer:
    """Scale each channel's deviation from its mean by ``1 + factor``."""
    if factor <= -1:
        raise ValueError(f"adjust_contrast: factor must exceed -1, got {factor}")
    if factor == 0:
        return img
    mean = img.data.mean(axis=(0, 1))
    return ImageBuffer(np.clip(mean + (1.0 + factor) * (img.data - mean), 0.0, 1.0))


def zoom(img: ImageBuffer, f: float) -> ImageBuffer:
    """Signed zoom about the center: ``f > 0`` magnifies content by ``1/(1-f)``."""
    if not -0.9 <= f <= 0.9:
        raise ValueError(f"zoom: factor must lie in [-0.9, 0.9], got {f}")
    if f == 0:
        return img
    h, w = img.height, img.width
    dx, dy, cx, cy = _grid(h, w)
    scale = 1.0 - f
    return ImageBuffer(bilinear_sample(img.data, cx + dx * scale, cy + dy * scale))


# -- policies --------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not (-1 < self.lo <= self.hi < 1):
            raise ValueError(f"augmentation range must satisfy -1 < lo <= hi < 1, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Per-class ranges; a method absent from both classes is not applied."""

    benign: dict = field(default_factory=dict)
    malignant: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("benign", "malignant"):
            table = {}
            for method, rng in getattr(self, name).items():
                if method not in METHODS:
                    raise ValueError(f"unknown augmentation method {method!r}")
                if not isinstance(rng, AugmentationRange):
                    rng = AugmentationRange(*rng)
                table[method] = rng
            object.__setattr__(self, name, table)
        if set(self.benign) != set(self.malignant):
            raise ValueError("both classes must define the same augmentation methods")

    @property
    def methods(self) -> tuple[str, ...]:
        return tuple(m for m in METHODS if m in self.benign)

    def ranges(self, label: Label) -> dict:
        return self.benign if label is Label.BENIGN else self.malignant

    def without(self, *methods: str) -> "AugmentationPolicy":
        return AugmentationPolicy(
            {m: r for m, r in self.benign.items() if m not in methods},
            {m: r for m, r in self.malignant.items() if m not in methods},
        )

    def only(self, *methods: str) -> "AugmentationPolicy":
        return self.without(*(m for m in METHODS if m not in methods))

    def to_dict(self) -> dict:
        return {
            "benign": {m: [r.lo, r.hi] for m, r in self.benign.items()},
            "malignant": {m: [r.lo, r.hi] for m, r in self.malignant.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AugmentationPolicy":
        return cls(
            {m: tuple(v) for m, v in doc.get("benign", {}).items()},
            {m: tuple(v) for m, v in doc.get("malignant", {}).items()},
        )


NO_AUGMENTATION = AugmentationPolicy()

TRAIN_TABLE_I = AugmentationPolicy(
    benign={"rotation": (-0.5, 0.5), "contrast": (-0.5, 0.5), "zoom": (0.0, 0.10)},
    malignant={"rotation": (-0.5, 0.5), "contrast": (-0.5, 0.5), "zoom": (-0.10, 0.0)},
)

TRAIN_INVERSE = AugmentationPolicy(
    benign={"rotation": (-0.5, 0.5), "contrast": (-0.5, 0.5), "zoom": (-0.10, 0.0)},
    malignant={"rotation": (-0.5, 0.5), "contrast": (-0.5, 0.5), "zoom": (0.0, 0.10)},
)

TEST_TABLE_II = AugmentationPolicy(
    benign={"rotation": (-0.5, 0.5), "contrast": (-0.5, 0.5), "zoom": (-0.5, 0.5)},
    malignant={"rotation": (-0.5, 0.5), "contrast": (-0.5, 0.5), "zoom": (-0.5, 0.5)},
)

POLICY_PRESETS = {
    "none": NO_AUGMENTATION,
    "table1": TRAIN_TABLE_I,
    "inverse": TRAIN_INVERSE,
    "table2": TEST_TABLE_II,
}


def load_policy(spec: str | os.PathLike) -> AugmentationPolicy:
    """Resolve a preset name or read a policy JSON document."""
    if str(spec) in POLICY_PRESETS:
        return POLICY_PRESETS[str(spec)]
    return AugmentationPolicy.from_dict(json.loads(Path(spec).read_text()))


# -- sampling and application --------------------------------------------

@dataclass(frozen=True)
class AugParams:
    rotation_turns: float = 0.0
    contrast_factor: float = 0.0
    zoom_factor: float = 0.0


_FIELD = {"rotation": "rotation_turns", "contrast": "contrast_factor", "zoom": "zoom_factor"}


def sample_params(policy: AugmentationPolicy, label: Label, rng: RngState) -> tuple[AugParams, RngState]:
    """Draw every defined factor from one stream, in rotation/contrast/zoom order."""
    ranges = policy.ranges(label)
    values = {}
    for method in METHODS:
        if method in ranges:
            r = ranges[method]
            values[_FIELD[method]], rng = uniform(rng, r.lo, r.hi)
    return AugParams(**values), rng


def draw_params(policy: AugmentationPolicy, label: Label, master_seed: int,
                sample_id: str, epoch: int) -> AugParams:
    """Factors for one sample and epoch, each method on its own derived stream."""
    ranges = policy.ranges(label)
    values = {}
    for method in METHODS:
        if method in ranges:
            r = ranges[method]
            stream = derive_stream(master_seed, sample_id, epoch, method)
            values[_FIELD[method]], _ = uniform(stream, r.lo, r.hi)
    return AugParams(**values)


def apply_params(img: ImageBuffer, params: AugParams) -> ImageBuffer:
    img = rotate(img, params.rotation_turns)
    img = adjust_contrast(img, params.contrast_factor)
    return zoom(img, params.zoom_factor)


def apply_augmentation(sample: Sample, policy: AugmentationPolicy, master_seed: int,
                       epoch: int, image: ImageBuffer | None = None) -> ImageBuffer:
    img = image if image is not None else sample.image
    if img is None:
        raise ValueError(f"sample {sample.id!r} has no loaded image")
    if not policy.methods:
        return img
    return apply_params(img, draw_params(policy, sample.label, master_seed, sample.id, epoch))


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def _augment_one(args) -> Sample:
    rec, src, dest, policy, seed, epoch = args
    try:
        img = read_image(src)
        out = apply_augmentation(rec, policy, seed, epoch, image=img)
        write_image(out, dest)
    except (OSError, ValueError) as exc:
        raise AugmentError(f"record {rec.id!r}: {exc}") from exc
    return Sample(rec.id, dest.name, rec.label, rec.split)


def augment_dataset(manifest: DatasetManifest, policy: AugmentationPolicy, master_seed: int,
                    epoch: int, out_dir: str | os.PathLike, workers: int = 1) -> DatasetManifest:
    """Write one augmented PPM per record under ``out_dir`` plus ``manifest.csv``.

    Output is a pure function of the inputs; ``workers`` only changes speed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    names = set()
    for rec in manifest.records:
        name = _UNSAFE.sub("_", rec.id) + ".ppm"
        if name in names:
            raise AugmentError(f"record {rec.id!r}: output file name {name} collides")
        names.add(name)
        try:
            src = manifest.resolve(rec)
        except FileNotFoundError as exc:
            raise AugmentError(f"record {rec.id!r}: {exc}") from exc
        jobs.append((rec, src, out_dir / name, policy, master_seed, epoch))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_augment_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_augment_one(job) for job in jobs]
    result = DatasetManifest(out_dir, records)
    save_manifest(result, out_dir / "manifest.csv")
    return result
