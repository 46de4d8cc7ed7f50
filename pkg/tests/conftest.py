"""Shared fixtures plus a terminal summary for acceptance-tagged tests."""

from __future__ import annotations

import numpy as np
import pytest

from eigenshot.store import FeatureSet, LabelSet

_ACCEPTANCE: dict[str, tuple[str, str]] = {}
_DETAILS: dict[str, str] = {}


def record_detail(criterion: str, text: str) -> None:
    """Stash a measured detail (error bound, win count, runtime) for the
    acceptance summary line."""
    _DETAILS[criterion] = text


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(criterion, description=...): marks a test as one "
        "acceptance criterion; outcomes are summarized at the end of the run",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE[marker.args[0]] = (status, marker.kwargs.get("description", ""))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        status, desc = _ACCEPTANCE[crit]
        detail = _DETAILS.get(crit)
        line = f"{crit}: {status}  {desc}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


def random_feature_set(
    rng: np.random.Generator,
    n: int | None = None,
    d: int | None = None,
    prefix: str = "x",
) -> FeatureSet:
    n = n if n is not None else int(rng.integers(1, 40))
    d = d if d is not None else int(rng.integers(1, 9))
    vectors = rng.normal(size=(n, d))
    return FeatureSet([f"{prefix}{i}" for i in range(n)], vectors)


def random_labelset(
    rng: np.random.Generator, ids: list[str], num_classes: int
) -> LabelSet:
    return LabelSet(
        {sid: int(rng.integers(num_classes)) for sid in ids}, num_classes
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
