import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochmf.errors import MalformedTensor
from stochmf.model import (
    ModelSpec,
    antisymmetrize,
    check_invariants,
    hubbard_chain,
    load_model,
    model_from_dict,
    model_to_dict,
    random_model,
    save_model,
)


def test_antisymmetrize_zero():
    assert not np.any(antisymmetrize(np.zeros((3, 3, 3, 3))))


def test_antisymmetrize_kills_symmetric_part():
    rng = np.random.default_rng(0)
    R = rng.normal(size=(3, 3, 3, 3))
    R = R + R.transpose(1, 0, 3, 2)
    R = R + R.transpose(0, 1, 3, 2)
    assert np.max(np.abs(antisymmetrize(R))) < 1e-14


def test_antisymmetrize_hubbard_by_loops():
    U = 1.7
    raw = np.zeros((4, 4, 4, 4))
    raw[0, 1, 0, 1] = raw[1, 0, 1, 0] = U
    raw[2, 3, 2, 3] = raw[3, 2, 3, 2] = U
    ref = np.zeros_like(raw)
    for i in range(4):
        for j in range(4):
            for k in range(4):
                for l in range(4):
                    ref[i, j, k, l] = raw[i, j, k, l] - raw[i, j, l, k]
    assert np.array_equal(antisymmetrize(raw), ref)
    assert np.array_equal(hubbard_chain(2, 1.0, U).V.real, ref)


def test_antisymmetrize_rejects_broken_exchange():
    raw = np.zeros((2, 2, 2, 2))
    raw[0, 1, 0, 1] = 1.0
    with pytest.raises(MalformedTensor):
        antisymmetrize(raw)


def test_free_dimer():
    m = hubbard_chain(2, 1.0, 0.0)
    assert not np.any(m.V)
    expected = np.zeros((4, 4))
    expected[0, 2] = expected[2, 0] = expected[1, 3] = expected[3, 1] = -1.0
    assert np.array_equal(m.T.real, expected)


def test_single_site_has_no_hopping():
    m = hubbard_chain(1, 3.0, 2.0)
    assert np.count_nonzero(m.T - np.diag(np.diag(m.T))) == 0


def test_invariants_on_construction():
    m = hubbard_chain(3, 1.0, 2.0)
    check_invariants(m.T, m.V)
    assert m.A == 3 and m.M == 6
    with pytest.raises(MalformedTensor):
        ModelSpec(np.array([[0, 1], [2, 0]]), np.zeros((2, 2, 2, 2)), 1)
    with pytest.raises(MalformedTensor):
        ModelSpec(np.zeros((2, 2)), np.zeros((2, 2, 2, 2)), 3)


def test_arrays_are_read_only(dimer):
    with pytest.raises(ValueError):
        dimer.T[0, 0] = 1.0


def test_random_model_scale_zero():
    assert not np.any(random_model(4, 2, seed=3, coupling_scale=0.0).V)


def test_random_model_is_deterministic():
    a, b = random_model(4, 2, seed=1, coupling_scale=0.5), random_model(4, 2, seed=1, coupling_scale=0.5)
    assert a.T.tobytes() == b.T.tobytes() and a.V.tobytes() == b.V.tobytes()
    check_invariants(a.T, a.V)


@settings(max_examples=25, deadline=None)
@given(M=st.integers(2, 5), seed=st.integers(0, 10**6), scale=st.floats(0.0, 3.0))
def test_random_models_satisfy_invariants(M, seed, scale):
    m = random_model(M, 1 + seed % M, seed, scale)
    check_invariants(m.T, m.V)


def test_json_roundtrip(tmp_path, rand_model):
    path = tmp_path / "m.json"
    save_model(rand_model, path)
    back = load_model(path)
    assert np.max(np.abs(back.V - rand_model.V)) < 1e-15
    assert np.array_equal(back.T, rand_model.T)


def test_json_unknown_field(tmp_path, dimer):
    d = model_to_dict(dimer)
    d["Vraw"] = []
    with pytest.raises(MalformedTensor, match="Vraw"):
        model_from_dict(json.loads(json.dumps(d)))
