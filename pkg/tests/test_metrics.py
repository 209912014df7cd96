import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import kolmogorov

from lesionaug.augment import TRAIN_TABLE_I
from lesionaug.core import DatasetManifest, ImageBuffer, Label, Sample
from lesionaug.metrics import (
    EmptyMask,
    LesionMask,
    NoLesion,
    OneClassOnly,
    SampleTooSmall,
    SizeProbe,
    class_size_stats,
    equivalent_diameter,
    eval_size_probe,
    fit_size_probe,
    ks_two_sample,
    segment_lesion,
    size_report,
)
from lesionaug.synthgen import SynthConfig, generate_samples

from conftest import disk_image


def brute_ks_d(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


def brute_probe(pairs):
    """Exhaustive threshold search with the documented tie rules."""
    ds = sorted(set(d for d, _ in pairs))
    cands = [-math.inf] + [(x + y) / 2 for x, y in zip(ds, ds[1:])] + [math.inf]
    best = None
    for t in cands:
        for above in (True, False):
            correct = 0
            for d, lab in pairs:
                pred = (d > t) if above else (d < t)
                correct += pred == (lab is Label.MALIGNANT)
            if best is None or correct > best[0]:
                best = (correct, t, above)
    return SizeProbe(best[1], best[2])


class TestSegmentation:
    def test_uniform_image(self):
        with pytest.raises(NoLesion):
            segment_lesion(ImageBuffer(np.full((16, 16, 3), 0.4)))

    @pytest.mark.parametrize("radius", [4.0, 8.0, 12.0, 20.0])
    def test_disk_area_exact(self, radius):
        img = disk_image(64, radius)
        expected = int(np.all(img.data == np.array([0.3, 0.2, 0.1]), axis=2).sum())
        assert segment_lesion(img).area == expected

    @pytest.mark.parametrize("radius", [12.0, 20.0, 28.0])
    def test_disk_area_continuous(self, radius):
        area = segment_lesion(disk_image(64, radius)).area
        assert abs(area - math.pi * radius ** 2) <= 0.03 * math.pi * radius ** 2

    def test_keeps_largest_blob(self):
        big = disk_image(64, 8.0, center=20.0).data.copy()
        small = disk_image(64, 4.0, center=50.0).data
        inside_small = np.all(small != small[0, 0], axis=2)
        big[inside_small] = small[inside_small]
        mask = segment_lesion(ImageBuffer(big))
        assert mask.bits[20, 20] and not mask.bits[50, 50]
        assert mask.area == segment_lesion(disk_image(64, 8.0, center=20.0)).area

    def test_tiny_speck_is_no_lesion(self):
        data = np.full((64, 64, 3), 0.5)
        data[30, 30] = 0.0  # 1 pixel < 0.1% of 4096
        with pytest.raises(NoLesion):
            segment_lesion(ImageBuffer(data))

    def test_four_connectivity(self):
        data = np.full((40, 40, 3), 0.9)
        data[10:20, 10:20] = 0.1
        data[20:30, 20:30] = 0.1  # touches the first square only diagonally
        data[20:29, 20:29] = 0.1
        mask = segment_lesion(ImageBuffer(data))
        assert mask.area == 100


class TestDiameter:
    def test_single_pixel(self):
        bits = np.zeros((5, 5), bool)
        bits[2, 2] = True
        assert equivalent_diameter(LesionMask(bits)) == pytest.approx(2 / math.sqrt(math.pi))

    def test_full_mask(self):
        assert equivalent_diameter(LesionMask(np.ones((64, 64), bool))) == pytest.approx(2 * math.sqrt(4096 / math.pi))
        assert equivalent_diameter(LesionMask(np.ones((64, 64), bool))) == pytest.approx(72.2, abs=0.05)

    def test_empty(self):
        with pytest.raises(EmptyMask):
            equivalent_diameter(LesionMask(np.zeros((3, 3), bool)))

    @pytest.mark.parametrize("radius", [5, 8, 12, 16, 20, 24, 28])
    def test_rasterized_disk(self, radius):
        d = equivalent_diameter(segment_lesion(disk_image(64, radius)))
        assert abs(d - 2 * radius) <= 1.0

    @given(st.integers(1, 99), st.integers(1, 99))
    def test_monotone(self, a, b):
        def mask(n):
            bits = np.zeros(100, bool)
            bits[:n] = True
            return LesionMask(bits.reshape(10, 10))
        assert (equivalent_diameter(mask(a)) <= equivalent_diameter(mask(b))) == (a <= b)


class TestKS:
    def test_identical(self):
        a = [1.0, 5.0, 2.0, 2.0, 9.0]
        assert ks_two_sample(a, a)[0] == 0.0
        assert ks_two_sample(a, a)[1] == 1.0

    def test_disjoint(self):
        d, p = ks_two_sample([1, 2, 3, 4, 5], [6, 7, 8, 9, 10])
        assert d == 1.0
        assert p < 0.01

    def test_worked_example(self):
        a, b = [1, 2, 3, 4, 5], [3, 4, 5, 6, 7]
        d, _ = ks_two_sample(a, b)
        assert d == brute_ks_d(a, b) == pytest.approx(0.4)

    def test_brute_force_oracle_random(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = np.round(rng.normal(0, 1, rng.integers(5, 20)), 1)
            b = np.round(rng.normal(0.5, 1.5, rng.integers(5, 20)), 1)
            d, p = ks_two_sample(a, b)
            assert d == pytest.approx(brute_ks_d(a, b), abs=1e-12)
            n = len(a) * len(b) / (len(a) + len(b))
            lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
            assert p == pytest.approx(min(1.0, kolmogorov(lam)), abs=1e-10)

    def test_too_small(self):
        with pytest.raises(SampleTooSmall):
            ks_two_sample([1, 2, 3, 4], [1, 2, 3, 4, 5])

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=30),
           st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=30))
    def test_symmetric_and_bounded(self, a, b):
        d1, p1 = ks_two_sample(a, b)
        d2, p2 = ks_two_sample(b, a)
        assert d1 == d2 and p1 == p2
        assert 0 <= d1 <= 1 and 0 <= p1 <= 1

    def test_p_decreases_with_d(self):
        base = list(range(20))
        ps = [ks_two_sample(base, [x + shift for x in base])[1] for shift in range(0, 21, 2)]
        assert all(x >= y for x, y in zip(ps, ps[1:]))


def pairs_from(ds, labels):
    return list(zip(ds, labels))


class TestProbe:
    def test_separable(self):
        train = [(d, Label.BENIGN) for d in (10, 11, 12)] + [(d, Label.MALIGNANT) for d in (20, 21)]
        probe = fit_size_probe(train)
        assert eval_size_probe(probe, train) == 1.0
        assert probe.malignant_above and probe.threshold == 16.0

    def test_inverted_polarity(self):
        train = [(d, Label.MALIGNANT) for d in (10, 11, 12)] + [(d, Label.BENIGN) for d in (20, 21)]
        probe = fit_size_probe(train)
        assert not probe.malignant_above
        assert eval_size_probe(probe, train) == 1.0

    def test_one_class(self):
        with pytest.raises(OneClassOnly):
            fit_size_probe([(1.0, Label.BENIGN), (2.0, Label.BENIGN)])

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 30))
            ds = np.round(rng.normal(20, 3, n), 0)
            labels = [Label.from_index(int(i)) for i in rng.integers(0, 2, n)]
            labels[0], labels[-1] = Label.BENIGN, Label.MALIGNANT
            pairs = pairs_from(ds, labels)
            assert fit_size_probe(pairs) == brute_probe(pairs)

    def test_permuted_labels_near_chance(self):
        rng = np.random.default_rng(11)
        ds = rng.normal(20, 3, 2000)
        labels = [Label.from_index(int(i)) for i in rng.permutation(np.arange(2000) % 2)]
        probe = fit_size_probe(pairs_from(ds[:1000], labels[:1000]))
        acc = eval_size_probe(probe, pairs_from(ds[1000:], labels[1000:]))
        assert abs(acc - 0.5) <= 0.05

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        ds = rng.normal(20, 3, 200)
        labels = [Label.MALIGNANT if d + rng.normal(0, 2) > 20 else Label.BENIGN for d in ds]
        train, test = pairs_from(ds[:100], labels[:100]), pairs_from(ds[100:], labels[100:])
        acc = eval_size_probe(fit_size_probe(train), test)
        for f in (np.log, np.sqrt, lambda x: x ** 3, lambda x: 2 * x + 7):
            tt = [(f(d), l) for d, l in train]
            te = [(f(d), l) for d, l in test]
            assert eval_size_probe(fit_size_probe(tt), te) == acc


class TestClassStats:
    def test_one_class_manifest(self):
        cfg = SynthConfig(split_counts={"train": 12, "validation": 0, "test": 0})
        m = generate_samples(cfg, 1)
        benign_only = DatasetManifest(m.root, [r for r in m.records if r.label is Label.BENIGN])
        with pytest.raises(SampleTooSmall):
            class_size_stats(benign_only)

    def test_sample_limit_and_skips(self):
        cfg = SynthConfig(split_counts={"train": 30, "validation": 0, "test": 0})
        m = generate_samples(cfg, 1)
        blank = Sample("blank", "blank.ppm", Label.BENIGN, "train", image=ImageBuffer(np.full((64, 64, 3), 0.5)))
        m = DatasetManifest(m.root, list(m.records) + [blank])
        stats = class_size_stats(m, sample_limit=10)
        assert len(stats.benign_diameters) == 10 and len(stats.malignant_diameters) == 10
        full = class_size_stats(m)
        assert full.skipped == 1 and len(full.benign_diameters) == 15

    def test_neutralization(self):
        cfg = SynthConfig(split_counts={"train": 300, "validation": 0, "test": 300})
        m = generate_samples(cfg, 77)
        clean = size_report(m)
        zoomed = size_report(m, TRAIN_TABLE_I, seed=77)
        assert clean.stats.ks_pvalue < 0.01
        assert clean.probe_test_acc >= 0.75
        assert zoomed.stats.ks_statistic <= 0.5 * clean.stats.ks_statistic
        assert zoomed.probe_test_acc <= 0.60
