import numpy as np
import pytest

from phqface.synth import SynthConfig, generate_cohort

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_cohort():
    cfg = SynthConfig(seed=11, n_participants=15, emas_mean=12, emas_std=2, signal_strength=4.0,
                      item_noise_std=2.0, attention_failure_rate=0.1, n_annotated_images=40)
    return generate_cohort(cfg)


@pytest.fixture(scope="session")
def small_dataset(small_cohort):
    ds, _, _ = small_cohort.dataset()
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
