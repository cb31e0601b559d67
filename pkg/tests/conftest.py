import numpy as np
import pytest

from refmi.data import TrialDataset


def random_pd(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim))
    m = a @ a.T + 0.5 * dim * np.eye(dim)
    return 0.5 * (m + m.T)


def make_dataset(arm, outcomes, ids=None, validate=True) -> TrialDataset:
    outcomes = np.asarray(outcomes, dtype=float)
    if ids is None:
        ids = [f"p{i}" for i in range(outcomes.shape[0])]
    return TrialDataset(ids, np.asarray(arm), outcomes, validate=validate)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# One human-readable pass/fail line per acceptance criterion, echoed after the
# normal pytest output so they are visible even when capture is on.
acceptance_lines: list = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_lines):
            terminalreporter.write_line(line)
