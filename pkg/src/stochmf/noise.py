"""Spectral splitting of the two-body interaction into one-body noise channels.

The matrix ``Q[(ij), (kl)] = -V[i, k, j, l] / hbar`` is real symmetric for a real
interaction. Its eigenpairs ``(omega_s, o_s)`` give channel operators
``O_s = o_s.reshape(M, M)`` with the global operator identity

    V[i, k, j, l] = -hbar * sum_s omega_s * O_s[i, j] * O_s[k, l].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedTensor, UnsupportedComplexInteraction


def lambda_of(omega):
    """Noise amplitude with ``lambda**2 == 1j * omega / 2``.

    For negative ``omega`` the square root is taken of ``|omega|``.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega == 0):
        raise ValueError("lambda is undefined for a zero frequency")
    out = np.sqrt(np.abs(omega)) * (1 + 1j * np.sign(omega)) / 2
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class NoiseDecomposition:
    omegas: np.ndarray  # (S,)
    ops: np.ndarray  # (S, M, M), real, Frobenius-orthonormal
    lambdas: np.ndarray  # (S,)
    eps: float
    hbar: float = 1.0

    @property
    def S(self) -> int:
        return len(self.omegas)

    @property
    def M(self) -> int:
        return self.ops.shape[1]

    def channels(self):
        return list(zip(self.omegas, self.ops, self.lambdas))

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "hbar": self.hbar,
            "channels": [
                {"omega": float(w), "lambda": [float(l.real), float(l.imag)], "O": O.real.tolist()}
                for w, O, l in self.channels()
            ],
        }


def decompose(model, eps: float = 1e-12) -> NoiseDecomposition:
    V = model.V
    M = model.M
    if np.max(np.abs(V.imag), initial=0.0) > 1e-14:
        raise UnsupportedComplexInteraction("noise channels require a real-valued interaction")
    Q = -V.real.transpose(0, 2, 1, 3).reshape(M * M, M * M) / model.hbar
    if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-10:
        raise MalformedTensor("interaction lacks the (ij)<->(kl) symmetry needed for the splitting")
    w, vecs = np.linalg.eigh(0.5 * (Q + Q.T))
    keep = np.abs(w) >= eps if eps > 0 else w != 0
    w = w[keep]
    ops = vecs[:, keep].T.reshape(-1, M, M)
    lambdas = lambda_of(w) if len(w) else np.zeros(0, dtype=complex)
    return NoiseDecomposition(w, ops.astype(complex), np.atleast_1d(lambdas), eps, model.hbar)


def reconstruct(dec: NoiseDecomposition) -> np.ndarray:
    """``V[i, j, k, l] = -hbar sum_s omega_s O_s[i, k] O_s[j, l]``."""
    M = dec.M
    if dec.S == 0:
        return np.zeros((M,) * 4, dtype=complex)
    return -dec.hbar * np.einsum("s,sik,sjl->ijkl", dec.omegas, dec.ops, dec.ops)


def q_matrix(model) -> np.ndarray:
    M = model.M
    return -model.V.real.transpose(0, 2, 1, 3).reshape(M * M, M * M) / model.hbar
