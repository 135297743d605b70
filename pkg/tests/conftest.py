import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from statebench.embeddings import train_als
from statebench.ingest import CsvSchema, InteractionLog, SplitPlan, clean, load_csv, split
from statebench.synth import generate

settings.register_profile(
    "ci", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

# pass/fail lines collected by the acceptance tests, echoed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_log(users, items, feedback=None, timestamps=None, n_users=None, n_items=None):
    """Hand-built log; ids default to ``u<i>``/``i<j>`` string catalogs."""
    users = np.asarray(users, dtype=np.int32)
    items = np.asarray(items, dtype=np.int32)
    if feedback is None:
        feedback = np.ones(len(users))
    if timestamps is None:
        timestamps = np.arange(len(users), dtype=np.int64)
    nu = n_users if n_users is not None else (int(users.max()) + 1 if len(users) else 0)
    ni = n_items if n_items is not None else (int(items.max()) + 1 if len(items) else 0)
    return InteractionLog(
        users, items, np.asarray(feedback, dtype=np.float64),
        np.asarray(timestamps, dtype=np.int64),
        tuple(f"u{i}" for i in range(nu)), tuple(f"i{j}" for j in range(ni)),
    )


@pytest.fixture(scope="session")
def tiny_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "tiny.csv"
    generate(path, seed=11, n_users=80, n_items=200, n_events=2500)
    return path


@pytest.fixture(scope="session")
def tiny_log(tiny_csv):
    return clean(load_csv(tiny_csv))


@pytest.fixture(scope="session")
def tiny_split(tiny_log):
    return split(tiny_log, SplitPlan(n_windows=4))


@pytest.fixture(scope="session")
def tiny_space(tiny_split):
    return train_als(tiny_split.warm_train, 6, 0.01, 5, 40.0, seed=3)


@pytest.fixture(scope="session")
def ml100k(tmp_path_factory):
    """The full-size evaluation dataset.

    Points at a real MovieLens-100K ``u.data`` when STATEBENCH_ML100K is
    set; otherwise a synthetic stand-in of the same shape (943 users,
    1682 items, 100k events) is generated once per session.
    """
    env = os.environ.get("STATEBENCH_ML100K")
    if env:
        return Path(env), CsvSchema(user_col=0, item_col=1, feedback_col=2,
                                    ts_col=3, delimiter="\t", header=False)
    path = tmp_path_factory.mktemp("ml100k") / "ml100k-synth.csv"
    generate(path, seed=0)
    return path, CsvSchema()
