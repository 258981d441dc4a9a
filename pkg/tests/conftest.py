"""Shared fixtures: synthetic stores, caption pools, and stats files."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from capgap import CaptionRecord, Datastore, ModalityStats, compute_stats

WORDS = [
    "river", "stone", "lantern", "meadow", "harbor", "sparrow", "timber",
    "alley", "summit", "ember", "willow", "canyon", "drift", "orchard",
    "beacon", "thicket", "mural", "jetty", "prairie", "gully",
]


def caption_text(i: int) -> str:
    """Distinct deterministic caption, at least five tokens long."""
    a = WORDS[i % len(WORDS)]
    b = WORDS[(i * 7 + 3) % len(WORDS)]
    return f"a {a} beside the {b} at dusk number {i}"


def make_records(n: int) -> list[CaptionRecord]:
    return [CaptionRecord(id=i, text=caption_text(i)) for i in range(n)]


def make_store(n: int, dim: int, metric: str = "l2", seed: int = 0) -> Datastore:
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(n, dim)).astype(np.float32)
    return Datastore.build(emb, make_records(n), metric)


@pytest.fixture
def small_store() -> Datastore:
    return make_store(12, 6, "l2", seed=42)


@pytest.fixture
def stats_pair() -> tuple[ModalityStats, ModalityStats]:
    """Image/text stats with distinct means and spreads, shared dim."""
    rng = np.random.default_rng(5)
    img = rng.normal(loc=2.0, scale=1.5, size=(300, 8))
    txt = rng.normal(loc=-1.0, scale=0.4, size=(300, 8))
    return compute_stats(img, "image"), compute_stats(txt, "text")


# One line per acceptance criterion at the end of the run, independent of
# pytest's capture settings, so a glance at the tail shows the gate status.
_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.when == "call":
        _acceptance_results[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _acceptance_results[name] = "error" if report.failed else report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_results.items():
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{status}  {name}")
