"""Slater determinants and dyads ``|Phi_a><Phi_b|``.

A Slater state is an ``(M, A)`` complex array whose columns are the occupied
orbitals (not necessarily orthonormal). Every function here also accepts
stacks with leading batch axes, ``(..., M, A)``.

Two-body tensors use ``R[i, k, j, l] = <ik|R|jl>``; reshaping to
``(M*M, M*M)`` gives the operator matrix. The antisymmetrized product is
``A(a b) = (a (x) b)(1 - P12)``, which fixes ``Tr_2 rho12 = (A-1) rho1``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations

import numpy as np

from .errors import NearSingularOverlap, RankLoss

OVERLAP_FLOOR = 1e-12
RANK_TOL = 1e-13


def dag(X):
    return np.swapaxes(X, -1, -2).conj()


def projector(W):
    """Orthogonal projector onto the column span of ``W``."""
    try:
        return W @ np.linalg.solve(dag(W) @ W, dag(W))
    except np.linalg.LinAlgError:
        raise RankLoss("orbital set is rank deficient") from None


@dataclass(frozen=True)
class DyadState:
    """``exp(logw) |Phi_a><Phi_b|`` with ket orbitals ``Wa`` and bra orbitals ``Wb``."""

    Wa: np.ndarray
    Wb: np.ndarray
    logw: np.ndarray | complex = 0j

    @classmethod
    def pure(cls, W, batch: int | None = None) -> "DyadState":
        W = np.asarray(W, dtype=complex)
        if batch is not None:
            W = np.broadcast_to(W, (batch,) + W.shape).copy()
            return cls(W, W.copy(), np.zeros(batch, dtype=complex))
        return cls(W, W.copy(), 0j)

    @property
    def M(self) -> int:
        return self.Wa.shape[-2]

    @property
    def A(self) -> int:
        return self.Wa.shape[-1]

    def weight(self):
        """Effective scalar weight ``exp(logw) det(f)``."""
        return np.exp(self.logw) * np.linalg.det(dag(self.Wb) @ self.Wa)


@dataclass(frozen=True)
class DyadDensity:
    """``rho1 = detf * u1`` with ``u1`` idempotent and ``Tr u1 = A``."""

    u1: np.ndarray
    detf: np.ndarray | complex

    @property
    def rho1(self):
        return np.asarray(self.detf)[..., None, None] * self.u1


def overlap(dyad: DyadState, floor: float | None = OVERLAP_FLOOR):
    """Overlap matrix ``f = Wb^+ Wa`` and ``det f`` (including ``exp(logw)``)."""
    f = dag(dyad.Wb) @ dyad.Wa
    detf = np.exp(dyad.logw) * np.linalg.det(f)
    if floor is not None and np.any(np.abs(detf) < floor):
        raise NearSingularOverlap(f"|det f| = {np.min(np.abs(detf)):.3e} below floor {floor:.1e}")
    return f, detf


def dyad_density(dyad: DyadState, floor: float | None = OVERLAP_FLOOR) -> DyadDensity:
    f, detf = overlap(dyad, floor)
    u1 = dyad.Wa @ np.linalg.solve(f, dag(dyad.Wb))
    return DyadDensity(u1, detf)


def adjugate(f):
    """``adj(f) = det(f) f^-1``, evaluated through an SVD so singular ``f`` is fine."""
    U, s, Vh = np.linalg.svd(f)
    A = s.shape[-1]
    if A == 1:
        cof = np.ones_like(s)
    else:
        cof = np.stack([np.prod(np.delete(s, i, axis=-1), axis=-1) for i in range(A)], axis=-1)
    phase = np.linalg.det(U) * np.linalg.det(Vh)
    return phase[..., None, None] * (dag(Vh) * cof[..., None, :]) @ dag(U)


def rho1_of(dyad: DyadState):
    """``rho1 = exp(logw) Wa adj(f) Wb^+``; well defined even for singular overlaps."""
    f = dag(dyad.Wb) @ dyad.Wa
    w = np.exp(np.asarray(dyad.logw))[..., None, None]
    return w * (dyad.Wa @ adjugate(f) @ dag(dyad.Wb))


def antisym_product(a, b):
    """``A(a_1 b_2)[i, k, j, l] = a_ij b_kl - a_il b_kj``."""
    return np.einsum("...ij,...kl->...ikjl", a, b) - np.einsum("...il,...kj->...ikjl", a, b)


def partial_trace2(R):
    """Trace over the second particle of a two-body tensor."""
    return np.einsum("...ikjk->...ij", R)


def as_matrix(R):
    M = R.shape[-1]
    return R.reshape(R.shape[:-4] + (M * M, M * M))


def as_tensor(R):
    M = int(round(np.sqrt(R.shape[-1])))
    return R.reshape(R.shape[:-2] + (M, M, M, M))


def kbody_density(dyad: DyadState, k: int = 2):
    """``rho_1..k = det f A(u_1 ... u_k)`` for ``k`` in {1, 2}.

    Higher ``k`` would follow the same pattern with a full antisymmetrizer.
    """
    if k not in (1, 2):
        raise ValueError("only k = 1 and k = 2 are implemented")
    if k > dyad.A:
        raise ValueError(f"k = {k} exceeds particle number A = {dyad.A}")
    den = dyad_density(dyad)
    if k == 1:
        return den.rho1
    return np.asarray(den.detf)[..., None, None, None, None] * antisym_product(den.u1, den.u1)


def _minor_det(f, rows, cols):
    keep_r = [r for r in range(f.shape[0]) if r not in rows]
    keep_c = [c for c in range(f.shape[1]) if c not in cols]
    if not keep_r:
        return 1.0
    return np.linalg.det(f[np.ix_(keep_r, keep_c)])


def two_body_lowdin(Wa, Wb) -> np.ndarray:
    """Transition two-body density ``<Phi_b| a+_j a+_l a_k a_i |Phi_a>`` from cofactors
    of the overlap matrix (no inverse, no one-body density involved). Single dyad only."""
    M, A = Wa.shape
    f = Wb.conj().T @ Wa
    out = np.zeros((M, M, M, M), dtype=complex)
    for p, q in combinations(range(A), 2):
        ket = np.outer(Wa[:, p], Wa[:, q]) - np.outer(Wa[:, q], Wa[:, p])  # [i, k]
        for r, s in combinations(range(A), 2):
            bra = np.outer(Wb[:, r], Wb[:, s]) - np.outer(Wb[:, s], Wb[:, r])  # [j, l]
            sign = (-1) ** (p + q + r + s)
            out += sign * _minor_det(f, (r, s), (p, q)) * np.einsum("ik,jl->ikjl", ket, bra.conj())
    return out


def correlation_c12(dyad: DyadState):
    """``C12 = rho12 - A(u1 rho2)`` with ``rho12`` from the cofactor expansion.

    Vanishes for every Slater dyad; the residual is returned for inspection.
    """
    if dyad.A < 2:
        raise ValueError("two-body correlations need A >= 2")
    den = dyad_density(dyad)
    rho12 = np.exp(dyad.logw) * two_body_lowdin(dyad.Wa, dyad.Wb)
    return rho12 - antisym_product(den.u1, den.rho1)


def _qr_gauge(W):
    Q, R = np.linalg.qr(W)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    scale = np.max(np.abs(d), axis=-1, keepdims=True)
    if np.any(np.abs(d) <= RANK_TOL * scale) or not np.all(np.isfinite(d)):
        raise RankLoss("orbital set lost rank during re-conditioning")
    # positive diagonal of R: orthonormal input is left untouched
    phase = d / np.abs(d)
    return Q * phase[..., None, :], np.sum(np.log(np.abs(d)), axis=-1)


def restabilize(dyad: DyadState) -> DyadState:
    """Re-orthonormalize ket and bra orbitals, folding the gauge into ``logw``.

    ``Wa = Qa Ra`` and ``Wb = Qb Rb`` give ``det f = det(Ra) conj(det Rb) det(Qb^+ Qa)``.
    """
    Qa, la = _qr_gauge(dyad.Wa)
    Qb, lb = _qr_gauge(dyad.Wb)
    return replace(dyad, Wa=Qa, Wb=Qb, logw=dyad.logw + la + np.conj(lb))
