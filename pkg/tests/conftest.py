import sys

import numpy as np
import pytest
from hypothesis import settings

from hweeg.dataio import LETTERS, Epoch, EpochDataset, Recording

settings.register_profile("hweeg", max_examples=40, deadline=None)
settings.load_profile("hweeg")


def make_dataset(n_per_class=10, n_channels=3, n_samples=100, seed=0, setting="me_cue", interleave=True):
    """Balanced dataset with labels cycling L, V, O, W (chronological order)."""
    rng = np.random.default_rng(seed)
    epochs = []
    n = n_per_class * len(LETTERS)
    for i in range(n):
        label = LETTERS[i % 4] if interleave else LETTERS[i // n_per_class]
        data = rng.standard_normal((n_channels, n_samples))
        epochs.append(Epoch(data, label, setting, float(i), "s0"))
    return EpochDataset(tuple(epochs), 100.0, tuple(f"ch{i}" for i in range(n_channels)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_recording():
    x = np.arange(20, dtype=float).reshape(2, 10) * 0.25
    return Recording(("C3", "C4"), 1000.0, x, start_time_s=1.5, clock_domain="amplifier", name="tiny")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
