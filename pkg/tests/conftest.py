"""Shared fixtures and the acceptance-criteria summary hook."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gafecg.synthetic import write_toy_corpus

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """A six-record synthetic dataset tree with ground-truth R positions."""
    root = tmp_path_factory.mktemp("toy_corpus")
    truth = write_toy_corpus(root, n_healthy=3, n_mi=3, duration_s=25.0, seed=11)
    return root, truth


@pytest.fixture(scope="session")
def pipeline_run(toy_corpus, tmp_path_factory):
    """One full CLI pipeline run (variant ds1) over the toy corpus."""
    from gafecg.cli import main

    root, _ = toy_corpus
    out = tmp_path_factory.mktemp("pipeline") / "out"
    argv = [
        "pipeline",
        "--dataset-root", str(root),
        "--out", str(out),
        "--variant", "ds1",
        "--epochs", "2",
        "--patience", "2",
        "--seed", "3",
    ]
    assert main(argv) == 0
    return out, argv


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# --- acceptance summary -----------------------------------------------------


def pytest_collection_modifyitems(config, items):
    mapping = {}
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            mapping[item.nodeid] = (marker.args[0], marker.args[1])
    config._acceptance_map = mapping


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mapping = getattr(config, "_acceptance_map", {})
    if not mapping:
        return
    tally: dict[int, dict] = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", None)
            if nodeid not in mapping:
                continue
            if status in ("passed", "failed", "error") and report.when != "call":
                continue
            num, title = mapping[nodeid]
            entry = tally.setdefault(
                num, {"title": title, "passed": 0, "failed": 0, "skipped": 0}
            )
            key = "failed" if status == "error" else status
            entry[key] += 1
    if not tally:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(tally):
        entry = tally[num]
        total = entry["passed"] + entry["failed"] + entry["skipped"]
        if entry["failed"]:
            verdict = f"FAIL ({entry['failed']}/{total} checks failed)"
        elif entry["passed"]:
            verdict = f"PASS ({entry['passed']}/{total} checks)"
        else:
            verdict = "SKIPPED"
        if entry["skipped"] and entry["passed"]:
            verdict += f" [{entry['skipped']} skipped]"
        terminalreporter.write_line(
            f"criterion {num}: {verdict} - {entry['title']}"
        )
