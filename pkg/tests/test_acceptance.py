"""Acceptance suite at its stated tolerances, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) with
the measured values next to the bounds.
"""

import pytest

from mlhhg import acceptance
from mlhhg.runner import dumps

from .conftest import ACCEPTANCE_LINES


@pytest.fixture(scope="module")
def evaluation():
    return acceptance.Evaluation()


def _scalars(d):
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in d.items() if isinstance(v, (int, float, bool)))


def _check(record):
    line = (f"{'PASS' if record['passed'] else 'FAIL'} criterion {record['id']}: {record['name']} "
            f"| {_scalars(record['measured'])} | bound {record['bound']}")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert record["passed"], line


@pytest.mark.parametrize("check", acceptance.CHECKS, ids=lambda c: c.__name__)
def test_criterion(check, evaluation):
    _check(check(evaluation))


def test_determinism():
    first = dumps(acceptance.verify(determinism=False))
    second = dumps(acceptance.verify(determinism=False))
    _check({"id": "11", "name": "verify twice gives byte-identical reports",
            "passed": first == second, "measured": {"identical": first == second},
            "bound": {"identical": True}})
