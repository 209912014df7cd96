import numpy as np
import pytest

from lesionaug.core import ImageBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h, w, quantized=False):
    data = rng.random((h, w, 3))
    if quantized:
        data = np.round(data * 255) / 255
    return ImageBuffer(data)


def disk_image(size, radius, center=None, lesion=(0.3, 0.2, 0.1), skin=(0.9, 0.8, 0.7)):
    """Hard-edged disk: pixel centers within ``radius`` of ``center`` get the lesion color."""
    c = (size - 1) / 2 if center is None else center
    ys, xs = np.mgrid[0:size, 0:size]
    inside = np.hypot(xs - c, ys - c) <= radius
    data = np.where(inside[..., None], np.array(lesion), np.array(skin))
    return ImageBuffer(data)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict_line():
    """Record one pass/fail line for an acceptance criterion."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
