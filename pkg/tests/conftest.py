import numpy as np
import pytest

from fskd.backbone import BackboneConfig
from fskd.data.datasets import Dataset
from fskd.data.synth import synthetic_digits


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def digits():
    """A small balanced synthetic digit set (60 images, 32x32 RGB)."""
    return synthetic_digits(60, seed=7)


@pytest.fixture
def tiny_config():
    return BackboneConfig((4, 8), blocks_per_stage=1, embedding_dim=8, input_size=16, in_channels=3)


def make_tiny_dataset():
    """Two well separated classes of 16x16 images, cheap enough to train on in a test."""
    rng = np.random.default_rng(0)
    n = 48
    labels = np.arange(n) % 2
    images = np.empty((n, 16, 16, 3), dtype=np.uint8)
    yy, xx = np.mgrid[0:16, 0:16]
    for i, y in enumerate(labels):
        base = np.where((xx < 8) if y == 0 else (yy < 8), 200, 40)
        noise = rng.integers(-20, 21, size=(16, 16, 3))
        images[i] = np.clip(base[..., None] + noise, 0, 255)
    return Dataset(images, labels)


@pytest.fixture
def tiny_dataset():
    return make_tiny_dataset()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
