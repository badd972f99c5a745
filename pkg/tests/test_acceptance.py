"""Acceptance criteria 1-9 at the full level, one PASS/FAIL line each."""

import pytest

from eikscat.acceptance import CRITERIA, run_criterion


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = run_criterion(number, "full")
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, f"{result.line()} gates={result.gates}"
