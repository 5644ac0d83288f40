"""Exact many-body reference in the fixed-particle-number Fock sector.

Basis states are occupation bitmasks sorted by value. A mask with occupied
modes ``i1 < i2 < ... < iA`` stands for ``a+_i1 a+_i2 ... a+_iA |0>``, so the
annihilator ``a_p`` picks up ``(-1)**(number of occupied modes below p)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .errors import DimensionGuardExceeded
from .meanfield import e0, h_mf

MAX_DIM = 5000


@dataclass(frozen=True)
class FockBasis:
    M: int
    A: int
    states: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.A <= self.M:
            raise ValueError(f"A={self.A} outside [0, {self.M}]")
        masks = sorted(sum(1 << i for i in occ) for occ in combinations(range(self.M), self.A))
        object.__setattr__(self, "states", np.array(masks, dtype=np.int64))

    @property
    def dim(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict[int, int]:
        return {int(m): n for n, m in enumerate(self.states)}

    @cached_property
    def occupied(self) -> np.ndarray:
        """(dim, A) array of occupied modes in ascending order."""
        bits = (self.states[:, None] >> np.arange(self.M)) & 1
        return np.array([np.flatnonzero(b) for b in bits], dtype=int).reshape(self.dim, self.A)

    @cached_property
    def annihilators(self) -> list[sp.csr_matrix]:
        """``a_p`` as sparse maps from this sector to the (A-1)-particle sector."""
        if self.A == 0:
            return [sp.csr_matrix((0, self.dim)) for _ in range(self.M)]
        lower = sector(self.M, self.A - 1)
        ops = []
        for p in range(self.M):
            rows, cols, vals = [], [], []
            below = (1 << p) - 1
            for n, m in enumerate(self.states):
                m = int(m)
                if m >> p & 1:
                    rows.append(lower.index[m ^ (1 << p)])
                    cols.append(n)
                    vals.append(-1.0 if bin(m & below).count("1") % 2 else 1.0)
            ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(lower.dim, self.dim)))
        return ops

    def annihilate(self, psi: np.ndarray) -> np.ndarray:
        """Stack ``a_p psi`` for every mode: shape (M, dim_{A-1})."""
        return np.stack([a @ psi for a in self.annihilators])

    def annihilate2(self, psi: np.ndarray) -> np.ndarray:
        """``out[k, i] = a_k a_i psi`` in the (A-2)-particle sector."""
        lower = sector(self.M, self.A - 1)
        first = self.annihilate(psi)
        return np.stack([[a @ first[i] for i in range(self.M)] for a in lower.annihilators])


_SECTORS: dict[tuple[int, int], FockBasis] = {}


def sector(M: int, A: int) -> FockBasis:
    key = (M, A)
    if key not in _SECTORS:
        _SECTORS[key] = FockBasis(M, A)
    return _SECTORS[key]


def _guard(basis: FockBasis) -> None:
    if comb(basis.M, basis.A) > MAX_DIM:
        raise DimensionGuardExceeded(f"Fock dimension {comb(basis.M, basis.A)} exceeds {MAX_DIM}")


def one_body_operator(X: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Dense matrix of ``sum_ij X_ij a+_i a_j`` in the sector."""
    _guard(basis)
    if basis.A == 0:
        return np.zeros((basis.dim, basis.dim), dtype=complex)
    stack = sp.vstack(basis.annihilators).tocsr()
    d1 = basis.annihilators[0].shape[0]
    out = stack.T @ sp.kron(sp.csr_matrix(np.asarray(X, dtype=complex)), sp.identity(d1)) @ stack
    return out.toarray()


def build_hamiltonian(model, basis: FockBasis | None = None) -> np.ndarray:
    basis = basis or sector(model.M, model.A)
    _guard(basis)
    M = model.M
    H = one_body_operator(model.T, basis)
    if basis.A < 2 or not np.any(model.V):
        return H
    lower = sector(M, basis.A - 1)
    pairs = [(k, l) for k in range(M) for l in range(k + 1, M)]
    # C_(kl) = a_l a_k ; H2 = sum_{i<j, k<l} V_ijkl C_ij^+ C_kl
    C = sp.vstack([lower.annihilators[l] @ basis.annihilators[k] for k, l in pairs]).tocsr()
    d2 = sector(M, basis.A - 2).dim
    P = np.array([[model.V[i, j, k, l] for (k, l) in pairs] for (i, j) in pairs])
    H2 = C.conj().T @ sp.kron(sp.csr_matrix(P), sp.identity(d2)) @ C
    H = H + H2.toarray()
    return 0.5 * (H + H.conj().T)


def propagate_exact(psi0: np.ndarray, H: np.ndarray, t: float, hbar: float = 1.0) -> np.ndarray:
    """``exp(-iHt/hbar) psi0`` via a full eigendecomposition."""
    w, U = np.linalg.eigh(H)
    return U @ (np.exp(-1j * w * t / hbar) * (U.conj().T @ psi0))


def exact_path(psi0, H, times, hbar: float = 1.0) -> np.ndarray:
    w, U = np.linalg.eigh(H)
    c = U.conj().T @ psi0
    return np.array([U @ (np.exp(-1j * w * t / hbar) * c) for t in times])


def one_body_density(psiL: np.ndarray, psiR: np.ndarray, basis: FockBasis) -> np.ndarray:
    """``rho[i, j] = <psiL| a+_j a_i |psiR>``."""
    return basis.annihilate(psiR) @ basis.annihilate(psiL).conj().T


def two_body_density(psiL: np.ndarray, psiR: np.ndarray, basis: FockBasis) -> np.ndarray:
    """``rho12[i, k, j, l] = <psiL| a+_j a+_l a_k a_i |psiR>``; ``Tr_2 rho12 = (A-1) rho1``."""
    M = basis.M
    if basis.A < 2:
        return np.zeros((M,) * 4, dtype=complex)
    ZR = basis.annihilate2(psiR)
    ZL = basis.annihilate2(psiL)
    return np.einsum("kix,ljx->ikjl", ZR, ZL.conj())


def density_matrix_one_body(D: np.ndarray, basis: FockBasis) -> np.ndarray:
    """One-body density of a many-body density matrix ``D`` (``Tr(a+_j a_i D)``)."""
    w, vecs = np.linalg.eigh(0.5 * (D + D.conj().T))
    return sum(wk * one_body_density(vecs[:, k], vecs[:, k], basis) for k, wk in enumerate(w))


def embed_slater(W: np.ndarray, basis: FockBasis | None = None) -> np.ndarray:
    """Amplitudes of ``prod_j (sum_i W_ij a+_i)|0>``: minors of ``W`` on each mask's rows."""
    W = np.asarray(W)
    M, A = W.shape
    basis = basis or sector(M, A)
    if A == 0:
        return np.ones(1, dtype=complex)
    return np.linalg.det(W[basis.occupied]).astype(complex)


def apply_hres(W: np.ndarray, model, basis: FockBasis | None = None, H: np.ndarray | None = None) -> np.ndarray:
    """Residual part of ``H|Phi>``: ``H|Phi> - H_1|Phi>`` with the mean-field splitting
    ``H_1|Phi> = (E0 + sum <pbar|h_MF|h> a+_pbar a_hhat)|Phi>``."""
    basis = basis or sector(model.M, W.shape[1])
    H = build_hamiltonian(model, basis) if H is None else H
    phi = embed_slater(W, basis)
    rho = W @ np.linalg.solve(W.conj().T @ W, W.conj().T)
    q = np.eye(model.M) - rho
    h1_phi = e0(model, rho) * phi + one_body_operator(q @ h_mf(model, rho) @ rho, basis) @ phi
    return H @ phi - h1_phi


def noise_square(W: np.ndarray, dec, basis: FockBasis | None = None) -> np.ndarray:
    """``1/2 sum_s lambda_s^2 B_s B_s |Phi>`` with ``B_s`` the particle-hole part of ``O_s``.

    The Ito contraction ``1/2 dB dB |Phi>`` equals ``dt`` times this vector.
    """
    M, A = W.shape
    basis = basis or sector(M, A)
    phi = embed_slater(W, basis)
    rho = W @ np.linalg.solve(W.conj().T @ W, W.conj().T)
    q = np.eye(M) - rho
    out = np.zeros_like(phi)
    for lam, O in zip(dec.lambdas, dec.ops):
        B = one_body_operator(q @ O @ rho, basis)
        out += 0.5 * lam**2 * (B @ (B @ phi))
    return out
