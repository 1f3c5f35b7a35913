import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from stewcodec.frame import Frame  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_frame(width: int, height: int, seed: int, poc=None) -> Frame:
    rng = np.random.default_rng(seed)
    return Frame(rng.integers(0, 256, (height, width), dtype=np.uint8),
                 rng.integers(0, 256, (height // 2, width // 2), dtype=np.uint8),
                 rng.integers(0, 256, (height // 2, width // 2), dtype=np.uint8), poc)


@pytest.fixture
def rand_frame():
    return random_frame


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
