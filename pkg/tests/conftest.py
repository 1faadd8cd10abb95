"""Shared fixtures plus a terminal summary that prints one PASS/FAIL line
per acceptance criterion (tests named ``test_criterion_*``)."""

import re

import numpy as np
import pytest

from cryb.synth import synth_corpus

_ACCEPT_RESULTS = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not match:
        return
    key = (int(match.group(1)), match.group(2))
    if report.when == "call":
        _ACCEPT_RESULTS[key] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        # a broken fixture counts as a failure of the criterion
        _ACCEPT_RESULTS[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPT_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), outcome in sorted(_ACCEPT_RESULTS.items()):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(
            f"[ACCEPT] criterion {number:2d} ({name}): {status}")


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small binary-cry corpus shared by tests that just need real files."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    manifest = synth_corpus("target_cry", n_subjects=8, clips_per_subject=3,
                            class_count=2, seed=13, out_dir=root)
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
