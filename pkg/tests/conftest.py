import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from agcluster.netmodel import Exploit, FactCatalog, NetworkSpec, intern_fact  # noqa: E402
from agcluster.scenario import example_three_server, resolve_preset  # noqa: E402


@pytest.fixture
def fig1():
    return example_three_server()


@pytest.fixture
def tree32():
    return resolve_preset("tree:3x2:all").spec


def make_spec(initial, exploits, facts=()):
    """Tiny helper: exploits given as (pre-strings, post-strings)."""
    cat = FactCatalog()
    for f in facts:
        intern_fact(cat, f)
    init = frozenset(intern_fact(cat, s) for s in initial)
    out = []
    for i, (pre, post) in enumerate(exploits):
        out.append(
            Exploit(
                i,
                f"e{i}",
                frozenset(intern_fact(cat, s) for s in pre),
                frozenset(intern_fact(cat, s) for s in post),
            )
        )
    return NetworkSpec(catalog=cat, exploits=out, initial=init)


_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        terminalreporter.write_line(f"{_acceptance[name]:8s} {name}")
