import numpy as np
import pytest

from conflictlens import synth
from conflictlens.events import CriticalEvent, one_hot_encode


def make_event(**overrides) -> CriticalEvent:
    base = dict(
        pet=1.5,
        veh_median_speed=15.0,
        veh_conflict_speed=12.0,
        vru_median_speed=3.0,
        vru_conflict_speed=4.0,
        proximity="high",
        vru_type="bicycle",
        vehicle_type="car",
        arrived_first="car",
        vru_location="crosswalk",
        veh_movement="through",
        nearside=True,
        vru_movement="through",
        veh_signal="green",
        vru_signal="green",
        weather="clear",
        lighting="daylight",
        label=None,
    )
    base.update(overrides)
    return CriticalEvent(**base)


@pytest.fixture(scope="session")
def default_events():
    return synth.generate_dataset(synth.GeneratorConfig(seed=1), n=1470)


@pytest.fixture(scope="session")
def default_matrix(default_events):
    return one_hot_encode(default_events)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def imbalanced_matrix():
    """Exactly 89 positives and 1381 negatives, the combined-data class counts."""
    events = synth.generate_dataset(synth.GeneratorConfig(seed=7), n=4000)
    pos = [e for e in events if e.label][:89]
    neg = [e for e in events if not e.label][:1381]
    return one_hot_encode(pos + neg)


ACCEPTANCE_LINES: list[tuple[int, str]] = []


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for the one-line acceptance verdicts printed after the run."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
