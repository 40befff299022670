import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import settings  # noqa: E402

from fcdn.data import STANDARD_BANDS, SynthSpec, default_plan, synth_generate  # noqa: E402

settings.register_profile("fcdn", deadline=None, max_examples=50)
settings.load_profile("fcdn")

_acceptance: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if "acceptance" in report.keywords:
            label = report.nodeid.split("::")[-1]
            _acceptance.append((label, "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict, secs in _acceptance:
        terminalreporter.write_line(f"{verdict}  {label}  ({secs:.1f} s)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """4 classes x 20 trials, 8 channels, 1 s at 250 Hz."""
    return synth_generate(SynthSpec(K=8, T=250, fs_hz=250.0, n_per_class=20, C=4, plan=default_plan(8, 4), seed=3))


@pytest.fixture(scope="session")
def alpha_band():
    return STANDARD_BANDS["alpha"]
