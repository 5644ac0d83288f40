import pytest

from stochmf.invariants import Check, run_all
from stochmf.model import hubbard_chain, random_model


@pytest.mark.parametrize("model", [hubbard_chain(2, 1.0, 1.0), hubbard_chain(3, 1.0, 2.0),
                                   random_model(5, 2, seed=4, coupling_scale=0.5)],
                         ids=["dimer", "hubbard3", "random5"])
def test_all_checks_pass(model):
    checks = run_all(model, seed=1)
    assert len(checks) == 8
    assert [c.name for c in checks if not c.ok] == []


def test_check_flags_nan_and_excess():
    assert not Check("x", float("nan"), 1.0).ok
    assert not Check("x", 2.0, 1.0).ok
    assert Check("x", 1.0, 1.0).ok
