import numpy as np
import pytest

from riskmpc.riskcore import (
    CVaR,
    Expectation,
    MeanUpperSemideviation,
    WorstCase,
    make_envelope,
)
from riskmpc.synthesis import synthesize_terminal
from riskmpc.sysmodel import make_system, reference_system


@pytest.fixture(scope="session")
def reference_sys():
    return reference_system()


@pytest.fixture(scope="session")
def reference_certs(reference_sys):
    """Certificates for the families used across the MPC/stability tests."""
    fams = {
        "expectation": Expectation(),
        "mus0.25": MeanUpperSemideviation(0.25),
        "mus0.5": MeanUpperSemideviation(0.5),
        "mus0.75": MeanUpperSemideviation(0.75),
        "mus1": MeanUpperSemideviation(1.0),
        "worst": WorstCase(),
    }
    out = {}
    for key, fam in fams.items():
        env = make_envelope(fam, reference_sys.pmf)
        out[key] = (env, synthesize_terminal(reference_sys, env))
    return out


@pytest.fixture
def scalar_sys():
    return make_system([[[0.5]]], [[[1.0]]], [1.0], [[1.0]], [[1.0]])


def all_families(L):
    return [Expectation(), MeanUpperSemideviation(0.0), MeanUpperSemideviation(0.3),
            MeanUpperSemideviation(1.0), WorstCase(), CVaR(0.25), CVaR(1.0)]


def random_pmf(rng, L):
    p = rng.uniform(0.05, 1.0, L)
    return p / p.sum()


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion.

    Usage: ``criterion(n, ok, detail)``; the line is printed immediately
    and repeated in the terminal summary.
    """

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
