"""Acceptance criteria, one test per criterion.

Each case prints its quantitative summary line (visible under
``pytest -v -s`` or on failure) and asserts the criterion's pass flag.
The runners pin their own seeds and tolerances; nothing here loosens
them.
"""

import os

import pytest

from cslsim import acceptance

_THREADS = min(4, os.cpu_count() or 1)


@pytest.mark.parametrize(
    "runner", acceptance.RUNNERS, ids=[r.__name__ for r in acceptance.RUNNERS])
def test_criterion(runner):
    result = runner(_THREADS)
    print(result.line())
    assert result.passed, result.detail
