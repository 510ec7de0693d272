import time

import pytest

from fpplab.weight_field import Constant, TwoPoint, Uniform, WeightField


@pytest.fixture
def uniform_field():
    return WeightField(Uniform(0.001, 1 / 16), 2, seed=11)


@pytest.fixture
def two_point_field():
    return WeightField(TwoPoint(0.02, 0.05, 0.5), 2, seed=5)


@pytest.fixture
def constant_field():
    return WeightField(Constant(0.05), 2, seed=0)


# acceptance reporting: one line per criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


class AcceptanceRecorder:
    def __init__(self, capsys):
        self._capsys = capsys
        self._start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self._start

    def record(self, number: int, title: str, passed: bool, detail: str = "") -> bool:
        status = "PASS" if passed else "FAIL"
        line = f"ACCEPTANCE {number:>2}: {status}  {title}  [{self.elapsed:.1f} s]"
        if detail:
            line += f"  {detail}"
        ACCEPTANCE_LINES.append(line)
        with self._capsys.disabled():
            print("\n" + line)
        return passed


@pytest.fixture
def acceptance(capsys):
    return AcceptanceRecorder(capsys)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
