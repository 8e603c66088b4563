import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "metric oracle and worked example",
    2: "gradient suite at float64",
    3: "attention invariants",
    4: "equivariance and masking",
    5: "tiny-preset overfit",
    6: "ablation ordering on small preset",
    7: "subject-disjoint folds",
    8: "F1@k monotone in every report",
    9: "bit-identical reruns",
}

_outcomes: dict[int, list[bool]] = {}


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(n, []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        results = _outcomes.get(n)
        if results is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        tr.write_line(f"criterion {n}: {status}  {title} ({len(results or [])} checks)")
