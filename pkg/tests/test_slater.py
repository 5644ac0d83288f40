import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _util import orthonormal, random_slater
from stochmf import fock
from stochmf.errors import NearSingularOverlap, RankLoss
from stochmf.slater import (
    DyadState,
    adjugate,
    antisym_product,
    correlation_c12,
    dyad_density,
    kbody_density,
    overlap,
    partial_trace2,
    restabilize,
    rho1_of,
    two_body_lowdin,
)


def test_overlap_orthonormal(rng):
    W = orthonormal(rng, 5, 3)
    f, detf = overlap(DyadState.pure(W))
    assert np.allclose(f, np.eye(3), atol=1e-14) and abs(detf - 1) < 1e-14


def test_overlap_multilinear(rng):
    Wa, Wb = random_slater(rng, 4, 2), random_slater(rng, 4, 2)
    _, d0 = overlap(DyadState(Wa, Wb))
    c = 0.3 - 1.2j
    Wc = Wa.copy()
    Wc[:, 1] *= c
    _, d1 = overlap(DyadState(Wc, Wb))
    assert abs(d1 - c * d0) < 1e-12


def test_overlap_cofactor_oracle(rng):
    Wa, Wb = random_slater(rng, 4, 2), random_slater(rng, 4, 2)
    f = [[sum(Wb[i, r].conjugate() * Wa[i, c] for i in range(4)) for c in range(2)] for r in range(2)]
    ref = f[0][0] * f[1][1] - f[0][1] * f[1][0]
    assert abs(overlap(DyadState(Wa, Wb))[1] - ref) < 1e-12


def test_overlap_floor():
    Wa = np.eye(4)[:, :2].astype(complex)
    Wb = np.eye(4)[:, 2:].astype(complex)
    with pytest.raises(NearSingularOverlap):
        overlap(DyadState(Wa, Wb))
    assert rho1_of(DyadState(Wa, Wb)).shape == (4, 4)


def test_dyad_density_pure_is_projector(rng):
    W = orthonormal(rng, 5, 2)
    u = dyad_density(DyadState.pure(W)).u1
    assert np.allclose(u, W @ W.conj().T, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(2, 6))
def test_u1_idempotent_with_trace_A(seed, M):
    rng = np.random.default_rng(seed)
    A = 1 + seed % (M - 1) if M > 1 else 1
    d = DyadState(random_slater(rng, M, A), random_slater(rng, M, A))
    u = dyad_density(d, floor=None).u1
    assert abs(np.trace(u) - A) < 1e-8
    assert np.max(np.abs(u @ u - u)) < 1e-6 * max(1.0, np.max(np.abs(u)) ** 2)


@pytest.mark.parametrize("M,A", [(4, 2), (5, 3), (6, 3), (6, 4)])
def test_kbody_matches_fock(rng, M, A):
    Wa, Wb = random_slater(rng, M, A), random_slater(rng, M, A)
    b = fock.sector(M, A)
    pa, pb = fock.embed_slater(Wa, b), fock.embed_slater(Wb, b)
    d = DyadState(Wa, Wb)
    assert np.max(np.abs(kbody_density(d, 1) - fock.one_body_density(pb, pa, b))) < 1e-10
    r12 = kbody_density(d, 2)
    assert np.max(np.abs(r12 - fock.two_body_density(pb, pa, b))) < 1e-10
    assert np.max(np.abs(two_body_lowdin(Wa, Wb) - r12)) < 1e-10
    assert np.max(np.abs(partial_trace2(r12) - (A - 1) * kbody_density(d, 1))) < 1e-10


def test_kbody_preconditions(rng):
    d = DyadState.pure(orthonormal(rng, 3, 1))
    with pytest.raises(ValueError):
        kbody_density(d, 2)
    with pytest.raises(ValueError):
        kbody_density(d, 3)
    with pytest.raises(ValueError):
        correlation_c12(d)


def test_c12_vanishes(rng):
    for M, A in [(4, 2), (6, 3)]:
        d = DyadState(random_slater(rng, M, A), random_slater(rng, M, A), 0.3 + 0.1j)
        scale = np.max(np.abs(kbody_density(d, 2)))
        assert np.max(np.abs(correlation_c12(d))) <= 1e-8 * max(1.0, scale)


def test_adjugate_regular_and_singular(rng):
    f = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.allclose(adjugate(f), np.linalg.det(f) * np.linalg.inv(f), atol=1e-12)
    s = np.array([[1.0, 2.0], [2.0, 4.0]])
    assert np.allclose(adjugate(s), [[4.0, -2.0], [-2.0, 1.0]], atol=1e-12)


def test_rho1_of_batched(rng):
    Wa = random_slater(rng, 4, 2)[None].repeat(3, 0)
    Wb = random_slater(rng, 4, 2)[None].repeat(3, 0)
    d = DyadState(Wa, Wb, np.array([0.0, 0.1, 1j]))
    r = rho1_of(d)
    for k in range(3):
        ref = dyad_density(DyadState(Wa[k], Wb[k], d.logw[k])).rho1
        assert np.allclose(r[k], ref, atol=1e-12)


def test_restabilize_orthonormal_is_identity(rng):
    W = orthonormal(rng, 5, 2)
    r = np.diagonal(np.linalg.qr(W)[1])
    W = W * (r / np.abs(r)).conj()
    d = DyadState.pure(W)
    out = restabilize(d)
    assert np.allclose(out.Wa, d.Wa, atol=1e-13) and abs(out.logw) < 1e-13


def test_restabilize_gauge_invariance(rng):
    d = DyadState(random_slater(rng, 5, 3), random_slater(rng, 5, 3), 0.2 - 0.4j)
    out = restabilize(d)
    assert np.max(np.abs(dyad_density(out).u1 - dyad_density(d).u1)) < 1e-12
    assert abs(out.weight() / d.weight() - 1) < 1e-12


def test_restabilize_ill_conditioned(rng):
    # graded column scales keep the input exactly representable; mixing the
    # columns would already smear det f at the 1e-8 level before restabilizing
    Q = orthonormal(rng, 6, 3)
    Wb = random_slater(rng, 6, 3)
    d = DyadState(Q * np.array([1.0, 1e-4, 1e-8]), Wb)
    assert np.linalg.cond(d.Wa) > 1e7
    exact = np.linalg.det(Wb.conj().T @ Q) * 1e-12
    out = restabilize(d)
    assert np.linalg.cond(out.Wa) < 10 and np.linalg.cond(out.Wb) < 10
    assert abs(out.weight() / exact - 1) < 1e-9


def test_restabilize_rank_loss():
    W = np.zeros((4, 2), dtype=complex)
    W[0, 0] = W[0, 1] = 1.0
    with pytest.raises(RankLoss):
        restabilize(DyadState.pure(W))


def test_antisym_product_convention(rng):
    a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    R = antisym_product(a, b)
    assert R[0, 1, 2, 0] == a[0, 2] * b[1, 0] - a[0, 0] * b[1, 2]
