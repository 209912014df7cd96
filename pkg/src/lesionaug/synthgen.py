"""Synthetic skin-lesion images with lesion size as a tunable class confound.

Each lesion is a star-shaped blob ``r(t) = R * (1 + sum_k a_k cos(k t + p_k))``
for harmonics k = 2..5, rendered with 2x2 supersampling over a flat skin tone.
Size, border irregularity and hue each carry class information independently.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core.image import ImageBuffer, quantize, write_image
from .core.manifest import SPLIT_PRESETS, SPLITS, DatasetManifest, Label, Sample, save_manifest
from .core.rng import RngState, derive_stream, normal_array, truncated_normal, uniform, uniform_array

HARMONICS = (2, 3, 4, 5)

DEFAULT_SPLIT_COUNTS = {"train": 600, "validation": 100, "test": 100}


@dataclass
class SynthConfig:
    image_size: int = 64
    malignant_diameter_mean: float = 24.0
    benign_diameter_ratio: float = 0.9
    diameter_std: float = 1.5
    irregularity: dict = field(default_factory=lambda: {"benign": 0.05, "malignant": 0.15})
    lesion_color: tuple = (0.55, 0.38, 0.30)
    skin_color: tuple = (0.87, 0.72, 0.62)
    color_shift: dict = field(default_factory=lambda: {"benign": 0.0, "malignant": 0.07})
    # std of independent per-lesion offsets on each lesion channel
    color_jitter: float = 0.025
    # std of one offset shared by all channels (lesion and skin drawn separately);
    # varies brightness without touching chroma
    tone_jitter: float = 0.03
    noise_std: float = 0.02
    # lesion center offset bound, as a fraction of image_size
    jitter: float = 0.10
    split_counts: dict = field(default_factory=lambda: dict(DEFAULT_SPLIT_COUNTS))

    def __post_init__(self):
        if not 0 < self.benign_diameter_ratio <= 1:
            raise ValueError("benign_diameter_ratio must lie in (0, 1]")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        for key in ("benign", "malignant"):
            if not 0 <= self.irregularity[key] < 0.25:
                # four harmonics bounded by a < 0.25 keep r(t) > 0
                raise ValueError("irregularity must lie in [0, 0.25)")
        self.lesion_color = tuple(float(c) for c in self.lesion_color)
        self.skin_color = tuple(float(c) for c in self.skin_color)
        unknown = set(self.split_counts) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown splits in split_counts: {sorted(unknown)}")
        self.split_counts = {s: int(self.split_counts.get(s, 0)) for s in SPLITS}

    def diameter_mean(self, label: Label) -> float:
        if label is Label.BENIGN:
            return self.malignant_diameter_mean * self.benign_diameter_ratio
        return self.malignant_diameter_mean

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lesion_color"] = list(self.lesion_color)
        d["skin_color"] = list(self.skin_color)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        doc = dict(doc)
        preset = doc.pop("preset", None)
        cfg = cls(**doc)
        if preset is not None:
            cfg.split_counts = dict(SYNTH_SPLIT_PRESETS[preset])
        return cfg

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


SYNTH_SPLIT_PRESETS = {
    "default": dict(DEFAULT_SPLIT_COUNTS),
    "paper": dict(SPLIT_PRESETS["isic2018-counts"]),
}


@dataclass(frozen=True)
class RadialProfile:
    radius: float
    amplitudes: tuple
    phases: tuple

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        wobble = np.zeros_like(theta)
        for k, a, p in zip(HARMONICS, self.amplitudes, self.phases):
            wobble = wobble + a * np.cos(k * theta + p)
        return self.radius * (1.0 + wobble)


def sample_shape(rng: RngState, config: SynthConfig, label: Label) -> tuple[RadialProfile, RngState]:
    diameter, rng = truncated_normal(rng, config.diameter_mean(label), config.diameter_std)
    bound = config.irregularity[label.value]
    amps = []
    phases = []
    for _ in HARMONICS:
        a, rng = uniform(rng, -bound, bound)
        amps.append(a)
    for _ in HARMONICS:
        p, rng = uniform(rng, 0.0, 2 * math.pi)
        phases.append(p)
    return RadialProfile(diameter / 2.0, tuple(amps), tuple(phases)), rng


def rasterize(profile: RadialProfile, size: int, center: tuple[float, float]) -> np.ndarray:
    """Fractional coverage of each pixel by the blob (2x2 supersampling)."""
    coords = np.arange(size, dtype=np.float64)
    cover = np.zeros((size, size))
    for oy in (-0.25, 0.25):
        for ox in (-0.25, 0.25):
            dx = coords[None, :] + ox - center[0]
            dy = coords[:, None] + oy - center[1]
            rho = np.hypot(dx, dy)
            cover += rho <= profile(np.arctan2(dy, dx))
    return cover / 4.0


def render_sample(config: SynthConfig, label: Label, rng: RngState, sample_id: str,
                  split: str = "train") -> Sample:
    size = config.image_size
    profile, rng = sample_shape(rng, config, label)
    mid = (size - 1) / 2.0
    reach = config.jitter * size
    jx, rng = uniform(rng, -reach, reach)
    jy, rng = uniform(rng, -reach, reach)
    cover = rasterize(profile, size, (mid + jx, mid + jy))

    lesion = np.array(config.lesion_color)
    lesion[0] += config.color_shift[label.value]
    if config.color_jitter > 0:
        offset, rng = normal_array(rng, 3)
        lesion = lesion + config.color_jitter * offset
    skin = np.array(config.skin_color)
    if config.tone_jitter > 0:
        tones, rng = normal_array(rng, 2)
        lesion = lesion + config.tone_jitter * tones[0]
        skin = np.clip(skin + config.tone_jitter * tones[1], 0.0, 1.0)
    lesion = np.clip(lesion, 0.0, 1.0)
    img = skin + cover[..., None] * (lesion - skin)
    if config.noise_std > 0:
        noise, rng = normal_array(rng, img.size)
        img = img + config.noise_std * noise.reshape(img.shape)
    img = quantize(img).astype(np.float64) / 255.0
    return Sample(sample_id, f"images/{sample_id}.ppm", label, split, image=ImageBuffer(img))


def sample_labels(count: int) -> list[Label]:
    """Alternate classes starting with Benign, so odd counts favour Benign."""
    return [Label.BENIGN if i % 2 == 0 else Label.MALIGNANT for i in range(count)]


def generate_samples(config: SynthConfig, master_seed: int, root: str | os.PathLike = ".") -> DatasetManifest:
    """In-memory dataset; every record carries its rendered image."""
    records = []
    for split in SPLITS:
        for n, label in enumerate(sample_labels(config.split_counts[split])):
            sid = f"synth-{split}-{n}"
            rng = derive_stream(master_seed, sid, 0, "synth")
            records.append(render_sample(config, label, rng, sid, split))
    return DatasetManifest(Path(root), records)


def generate_dataset(config: SynthConfig, master_seed: int, out_dir: str | os.PathLike) -> DatasetManifest:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest = generate_samples(config, master_seed, out_dir)
    for rec in manifest.records:
        write_image(rec.image, out_dir / rec.path)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
