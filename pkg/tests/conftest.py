import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jointtok.vocab import SeedVocab  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def fixture_vocab():
    return SeedVocab(["a", "b", "ab"], np.log([0.4, 0.2, 0.4]))


@pytest.fixture
def acceptance_report():
    def report(criterion: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


LN = math.log
