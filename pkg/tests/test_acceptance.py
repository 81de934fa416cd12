"""One test per acceptance criterion, at the criterion's own tolerance.

Monte Carlo criteria share replica runs cached under ``$BONDSEP_CACHE``
(default ``~/.cache/bondsep``); a cold cache costs about two hours on one core.
Each result line is printed in the "acceptance criteria" section of the
pytest summary.
"""

import pytest

from bondsep.acceptance import CRITERIA, FAST_EXTRAS, _evaluate, criterion
from conftest import ACCEPTANCE_LINES


def _params():
    for key, (_, _, fast) in CRITERIA.items():
        yield pytest.param(key, id=f"criterion-{key}", marks=() if fast else pytest.mark.slow)


@pytest.mark.parametrize("key", list(_params()))
def test_criterion(key):
    r = criterion(key)
    ACCEPTANCE_LINES.append(r.line())
    assert r.error is None, r.error
    assert r.passed, r.summary


@pytest.mark.parametrize("key", list(FAST_EXTRAS))
def test_supporting_check(key):
    title, fn = FAST_EXTRAS[key]
    r = _evaluate(key, title, fn, {"cache": None, "threads": 1})
    ACCEPTANCE_LINES.append(r.line())
    assert r.passed, r.summary
