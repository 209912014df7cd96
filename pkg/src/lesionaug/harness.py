"""Five-regime augmentation experiment: gap table, ordering verdict, curves."""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import NO_AUGMENTATION, TEST_TABLE_II, TRAIN_INVERSE, TRAIN_TABLE_I, AugmentationPolicy
from .core.manifest import DatasetManifest
from .metrics import SizeReport, size_report
from .model.layers import MICRO_DEFAULT, ModelConfig, load_model_config
from .model.training import TrainConfig, TrainHistory, evaluate, train
from .synthgen import SynthConfig, generate_samples

log = logging.getLogger(__name__)

REGIME_ORDER = ("none", "rot_contrast", "resizing", "full", "inverse")
# strict chain checked by verify_gap_ordering, largest gap first
GAP_CHAIN = ("inverse", "none", "rot_contrast", "resizing", "full")
FULL_GAP_MAX = 0.05
NONE_MARGIN = 0.05
PROBE_MAX = 0.60
KS_RATIO_MAX = 0.5
# a 400-image test split keeps the binomial noise of each test accuracy near 0.02
EXPERIMENT_SPLIT_COUNTS = {"train": 600, "validation": 100, "test": 400}


@dataclass(frozen=True)
class Regime:
    name: str
    train_policy: AugmentationPolicy
    test_policy: AugmentationPolicy = TEST_TABLE_II


REGIMES = {
    "none": Regime("none", NO_AUGMENTATION),
    "rot_contrast": Regime("rot_contrast", TRAIN_TABLE_I.without("zoom")),
    "resizing": Regime("resizing", TRAIN_TABLE_I.only("zoom")),
    "full": Regime("full", TRAIN_TABLE_I),
    "inverse": Regime("inverse", TRAIN_INVERSE),
}


@dataclass
class RegimeReport:
    regime: str
    train_accuracy: float
    test_accuracy: float
    history: TrainHistory
    size: SizeReport
    replicate: int = 0

    @property
    def gap(self) -> float:
        return self.train_accuracy - self.test_accuracy

    @property
    def size_stats(self):
        return self.size.stats

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "replicate": self.replicate,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "gap": self.gap,
            "size_stats": self.size.to_dict(),
            "size_probe": {"threshold": self.size.probe.threshold,
                           "malignant_above": self.size.probe.malignant_above},
            "history": self.history.to_dict(),
        }


@dataclass
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(split_counts=dict(EXPERIMENT_SPLIT_COUNTS)))
    model: ModelConfig = MICRO_DEFAULT
    train: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    replicates: int = 3
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def replicate_seed(self, replicate: int) -> int:
        return self.master_seed + replicate

    @classmethod
    def from_dict(cls, doc: dict, **overrides) -> "ExperimentConfig":
        doc = dict(doc)
        kwargs = {}
        if "synth" in doc:
            synth = {"split_counts": dict(EXPERIMENT_SPLIT_COUNTS), **doc.pop("synth")}
            kwargs["synth"] = SynthConfig.from_dict(synth)
        if "model" in doc:
            model = doc.pop("model")
            kwargs["model"] = load_model_config(model) if isinstance(model, str) else ModelConfig.from_dict(model)
        if "train" in doc:
            kwargs["train"] = TrainConfig.from_dict(doc.pop("train"))
        for key in ("master_seed", "replicates", "workers"):
            if key in doc:
                kwargs[key] = int(doc.pop(key))
        if doc:
            raise ValueError(f"unknown experiment config keys: {sorted(doc)}")
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def run_regime(regime: Regime | str, manifest: DatasetManifest, config: ExperimentConfig,
               seed: int | None = None, replicate: int = 0) -> RegimeReport:
    """Train a fresh model under the regime's train policy and score it.

    Train accuracy is on the clean train split; test accuracy on the test split
    under the regime's test policy. ``seed`` defaults to the master seed.
    """
    if isinstance(regime, str):
        regime = REGIMES[regime]
    seed = config.master_seed if seed is None else seed
    tc = TrainConfig(**{**config.train.to_dict(), "seed": seed})
    model, history = train(config.model, manifest, tc, regime.train_policy)
    train_acc = evaluate(model, manifest, "train", None, seed)
    test_acc = evaluate(model, manifest, "test", regime.test_policy, seed)
    size = size_report(manifest, regime.train_policy, seed)
    log.info("replicate %d %s: train %.3f test %.3f", replicate, regime.name, train_acc, test_acc)
    return RegimeReport(regime.name, train_acc, test_acc, history, size, replicate)


@functools.lru_cache(maxsize=2)
def _dataset(synth_json: str, seed: int) -> DatasetManifest:
    return generate_samples(SynthConfig.from_dict(json.loads(synth_json)), seed)


def _job(args) -> RegimeReport:
    config, replicate, name = args
    seed = config.replicate_seed(replicate)
    data = _dataset(json.dumps(config.synth.to_dict(), sort_keys=True), seed)
    return run_regime(REGIMES[name], data, config, seed, replicate)


def run_table_iv(config: ExperimentConfig) -> list[list[RegimeReport]]:
    """All five regimes on one synthetic dataset per replicate.

    Returns one list of reports (in ``REGIME_ORDER``) per replicate. Replicate
    ``r`` uses seed ``master_seed + r`` for data, training and augmentation, so
    its reports do not depend on how many replicates are run.
    """
    jobs = [(config, r, name) for r in range(config.replicates) for name in REGIME_ORDER]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            flat = list(pool.map(_job, jobs))
    else:
        flat = [_job(j) for j in jobs]
    n = len(REGIME_ORDER)
    return [flat[i:i + n] for i in range(0, len(flat), n)]


def _flatten(reports) -> list[RegimeReport]:
    out = []
    for item in reports:
        out.extend(item if isinstance(item, (list, tuple)) else [item])
    return out


def mean_metrics(reports) -> dict[str, dict[str, float]]:
    """Per-regime mean train and test accuracy; the gap is their difference."""
    flat = _flatten(reports)
    out = {}
    for name in REGIME_ORDER:
        rows = [r for r in flat if r.regime == name]
        if not rows:
            continue
        tr = float(np.mean([r.train_accuracy for r in rows]))
        te = float(np.mean([r.test_accuracy for r in rows]))
        out[name] = {"train_accuracy": tr, "test_accuracy": te, "gap": tr - te}
    return out


def mean_gaps(reports) -> dict[str, float]:
    return {name: m["gap"] for name, m in mean_metrics(reports).items()}


@dataclass
class GapVerdict:
    gaps: dict
    pairs: dict
    full_small: bool
    none_margin: bool

    @property
    def violations(self) -> list[str]:
        return [k for k, ok in self.pairs.items() if not ok]

    @property
    def ordering_ok(self) -> bool:
        return all(self.pairs.values())

    @property
    def passed(self) -> bool:
        return self.ordering_ok and self.full_small and self.none_margin

    def to_dict(self) -> dict:
        return {
            "gaps": dict(self.gaps),
            "pairs": dict(self.pairs),
            "full_gap_below_0.05": self.full_small,
            "none_exceeds_full_by_0.05": self.none_margin,
            "ordering_pass": self.ordering_ok,
            "pass": self.passed,
        }


def verify_gap_ordering(gaps) -> GapVerdict:
    """Check inverse > none > rot_contrast > resizing > full on mean gaps.

    ``gaps`` is a mapping from regime name to mean gap, or the reports
    themselves. Each of the four strict inequalities is reported separately.
    """
    if not isinstance(gaps, dict):
        gaps = mean_gaps(gaps)
    missing = set(GAP_CHAIN) - set(gaps)
    if missing:
        raise ValueError(f"missing gaps for regimes: {sorted(missing)}")
    pairs = {f"{a}>{b}": bool(gaps[a] > gaps[b]) for a, b in zip(GAP_CHAIN, GAP_CHAIN[1:])}
    return GapVerdict(
        {k: float(gaps[k]) for k in GAP_CHAIN},
        pairs,
        bool(gaps["full"] < FULL_GAP_MAX),
        bool(gaps["none"] >= gaps["full"] + NONE_MARGIN),
    )


def check_neutralization(replicate: list[RegimeReport]) -> dict:
    """Per-replicate size checks on the augmented training sets.

    Zoom-bearing regimes must at least halve the unaugmented KS D and leave the
    size probe at or below 0.60 on the similarly augmented test split. The
    inverse regime must instead hand the probe a size rule worth more than
    0.60, pointing malignant toward larger lesions.
    """
    by = {r.regime: r for r in replicate}
    base_d = by["none"].size.stats.ks_statistic
    out = {"none_ks_d": base_d, "regimes": {}}
    ok = True
    for name in ("resizing", "full"):
        s = by[name].size
        d_ok = s.stats.ks_statistic <= KS_RATIO_MAX * base_d
        p_ok = s.probe_test_acc <= PROBE_MAX
        out["regimes"][name] = {"ks_d": s.stats.ks_statistic, "ks_ratio_ok": d_ok,
                                "probe_test_acc": s.probe_test_acc, "probe_ok": p_ok}
        ok = ok and d_ok and p_ok
    inv = by["inverse"].size
    inv_ok = inv.probe.malignant_above and inv.probe_test_acc > PROBE_MAX
    out["regimes"]["inverse"] = {"ks_d": inv.stats.ks_statistic, "probe_test_acc": inv.probe_test_acc,
                                 "malignant_above": inv.probe.malignant_above, "probe_ok": inv_ok}
    out["pass"] = bool(ok and inv_ok)
    return out


# -- report files -------------------------------------------------------------------

def _svg_chart(title: str, train: list, val: list, width: int = 480, height: int = 320) -> str:
    pad = 40
    n = max(len(train), 2)

    def pts(values):
        coords = []
        for i, v in enumerate(values):
            x = pad + (width - 2 * pad) * i / (n - 1)
            y = height - pad - (height - 2 * pad) * float(v)
            coords.append(f"{x:.2f},{y:.2f}")
        return " ".join(coords)

    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="{pad - 6}" y="{pad + 4}" text-anchor="end" font-size="10">1.0</text>',
        f'<text x="{pad - 6}" y="{height - pad + 4}" text-anchor="end" font-size="10">0.0</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{pts(train)}"/>',
        f'<polyline fill="none" stroke="#d62728" stroke-width="2" points="{pts(val)}"/>',
        f'<text x="{width - pad}" y="{pad}" text-anchor="end" font-size="11" fill="#1f77b4">train</text>',
        f'<text x="{width - pad}" y="{pad + 14}" text-anchor="end" font-size="11" fill="#d62728">validation</text>',
        "</svg>",
        "",
    ])


def emit_report(reports, out_dir: str | os.PathLike, verdict: GapVerdict | None = None,
                neutralization: list | None = None) -> None:
    """Write table_iv.csv/json, per-regime curves (CSV and SVG) and verdict.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flat = _flatten(reports)
    means = mean_metrics(flat)
    with (out / "table_iv.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regime", "train_accuracy", "test_accuracy", "gap"])
        for name, m in means.items():
            w.writerow([name, repr(m["train_accuracy"]), repr(m["test_accuracy"]), repr(m["gap"])])
    doc = {"mean": means, "reports": [r.to_dict() for r in flat]}
    (out / "table_iv.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for name in means:
        rows = [r for r in flat if r.regime == name]
        with (out / f"curves_{name}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "epoch", "train_acc", "val_acc", "train_loss"])
            for r in rows:
                for epoch, tr, va, loss in r.history.rows():
                    w.writerow([r.replicate, epoch, repr(tr), repr(va), repr(loss)])
        # mean curve over replicates
        train_curve = np.mean([r.history.train_acc for r in rows], axis=0)
        val_curve = np.mean([r.history.val_acc for r in rows], axis=0)
        (out / f"curves_{name}.svg").write_text(_svg_chart(name, list(train_curve), list(val_curve)))
    if verdict is not None:
        body = verdict.to_dict()
        if neutralization is not None:
            body["neutralization"] = neutralization
            body["neutralization_pass"] = all(n["pass"] for n in neutralization)
        (out / "verdict.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig, out_dir: str | os.PathLike | None = None):
    """Run, verify and write everything; returns (reports, verdict, neutralization)."""
    reports = run_table_iv(config)
    verdict = verify_gap_ordering(reports)
    neutral = [check_neutralization(rep) for rep in reports]
    target = out_dir or config.out_dir
    if target is not None:
        emit_report(reports, target, verdict, neutral)
    return reports, verdict, neutral
