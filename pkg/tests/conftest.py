from pathlib import Path

import numpy as np
import pytest

from spintip.spinspace import Vocabulary

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TOY = {
    "A": [0.383, -0.321, 0.0],
    "B": [0.820, 0.0, 0.0],
    "C": [0.0, 0.0, 0.500],
    "D": [0.866, 0.500, 0.0],
}


@pytest.fixture
def toy():
    return Vocabulary.from_mapping(TOY)


@pytest.fixture
def acca_vocab():
    return Vocabulary.from_mapping({**TOY, "C": [-0.150, -0.200, 0.0]})


@pytest.fixture
def configs():
    return CONFIGS


# acceptance criteria register one line each; printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
