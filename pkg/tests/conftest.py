import json
from importlib import resources

import pytest

from hybridnash.game import SaddleReference, build_example1


def pinned_reference(seed=42) -> SaddleReference:
    res = resources.files("hybridnash") / "fixtures" / f"example1_seed{seed}.json"
    return SaddleReference.from_dict(json.loads(res.read_text()))


@pytest.fixture(scope="session")
def example1_reference():
    return build_example1(42), pinned_reference(42)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; printed again in the terminal summary."""

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
