"""Physical system definition: basis size, particle number, one- and two-body matrix elements.

Tensor conventions used throughout the package:

* ``T[i, j] = <i|t|j>``.
* ``V[i, j, k, l] = <ij|v~|kl>`` is the antisymmetrized interaction, and the
  Hamiltonian reads ``sum T_ij a+_i a_j + 1/4 sum V_ijkl a+_i a+_j a_l a_k``.
* Reshaping ``V`` to ``(M*M, M*M)`` gives the two-body operator matrix with
  row index ``(i, j)`` and column index ``(k, l)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedTensor

TOL_HERMITIAN = 1e-12
TOL_EXCHANGE = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelSpec:
    """Immutable model container; invariants are checked at construction."""

    T: np.ndarray
    V: np.ndarray
    A: int
    hbar: float = 1.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        T = _readonly(self.T)
        V = _readonly(self.V)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "V", V)
        M = T.shape[0]
        if T.shape != (M, M):
            raise MalformedTensor(f"T must be square, got shape {T.shape}")
        if V.shape != (M, M, M, M):
            raise MalformedTensor(f"V must have shape {(M,) * 4}, got {V.shape}")
        if not (1 <= int(self.A) <= M):
            raise MalformedTensor(f"particle number A={self.A} outside [1, {M}]")
        if self.hbar <= 0:
            raise MalformedTensor("hbar must be positive")
        check_invariants(T, V)

    @property
    def M(self) -> int:
        return self.T.shape[0]

    def with_particles(self, A: int) -> "ModelSpec":
        return ModelSpec(self.T, self.V, A, self.hbar, self.name)

    def vmatrix(self) -> np.ndarray:
        """Two-body operator matrix of shape (M^2, M^2)."""
        M = self.M
        return self.V.reshape(M * M, M * M)


def check_invariants(T, V, tol_v: float = TOL_EXCHANGE) -> None:
    if np.max(np.abs(T - T.conj().T), initial=0.0) > TOL_HERMITIAN:
        raise MalformedTensor("T is not Hermitian")
    if np.max(np.abs(V + V.transpose(1, 0, 2, 3)), initial=0.0) > tol_v:
        raise MalformedTensor("V is not antisymmetric in its first index pair")
    if np.max(np.abs(V + V.transpose(0, 1, 3, 2)), initial=0.0) > tol_v:
        raise MalformedTensor("V is not antisymmetric in its second index pair")
    if np.max(np.abs(V - V.transpose(2, 3, 0, 1).conj()), initial=0.0) > tol_v:
        raise MalformedTensor("V is not Hermitian")


def antisymmetrize(raw) -> np.ndarray:
    """Return ``v_ijkl - v_ijlk`` for a raw tensor with ``v_ijkl = v_jilk``."""
    raw = np.asarray(raw)
    if raw.ndim != 4 or len(set(raw.shape)) != 1:
        raise MalformedTensor(f"raw interaction must be a rank-4 cube, got {raw.shape}")
    if np.max(np.abs(raw - raw.transpose(1, 0, 3, 2)), initial=0.0) > TOL_EXCHANGE:
        raise MalformedTensor("raw interaction violates particle-exchange symmetry v_ijkl = v_jilk")
    return raw - raw.transpose(0, 1, 3, 2)


def hubbard_chain(L: int, t_hop: float, U: float, A: int | None = None, hbar: float = 1.0) -> ModelSpec:
    """Open Hubbard chain; mode index ``2*site + spin`` (spin 0 = up, 1 = down).

    ``A`` defaults to half filling (``A = L``).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    M = 2 * L
    T = np.zeros((M, M), dtype=complex)
    for site in range(L - 1):
        for spin in (0, 1):
            p, q = 2 * site + spin, 2 * (site + 1) + spin
            T[p, q] = T[q, p] = -t_hop
    raw = np.zeros((M, M, M, M))
    for site in range(L):
        up, dn = 2 * site, 2 * site + 1
        raw[up, dn, up, dn] = U
        raw[dn, up, dn, up] = U
    return ModelSpec(T, antisymmetrize(raw), L if A is None else A, hbar, name=f"hubbard{L}")


def random_model(M: int, A: int, seed: int, coupling_scale: float = 1.0, hbar: float = 1.0) -> ModelSpec:
    """Random Hermitian ``T`` and random real interaction with the physical symmetries."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    T = 0.5 * (X + X.conj().T)
    R = rng.normal(size=(M, M, M, M))
    # exchange symmetry v_ijkl = v_jilk and hermiticity v_ijkl = v_klij
    R = R + R.transpose(1, 0, 3, 2)
    R = R + R.transpose(2, 3, 0, 1)
    raw = 0.25 * coupling_scale * R
    return ModelSpec(T, antisymmetrize(raw), A, hbar, name=f"random{M}_{seed}")


def _cplx(x) -> complex:
    if isinstance(x, (list, tuple)):
        re, im = x
        return complex(re, im)
    return complex(x)


def model_from_dict(d: dict) -> ModelSpec:
    allowed = {"M", "A", "hbar", "T", "V_raw", "name"}
    unknown = set(d) - allowed
    if unknown:
        raise MalformedTensor(f"unknown model fields: {sorted(unknown)}")
    M = int(d["M"])
    T = np.array([[_cplx(x) for x in row] for row in d["T"]], dtype=complex)
    if T.shape != (M, M):
        raise MalformedTensor(f"T has shape {T.shape}, expected {(M, M)}")
    raw = np.zeros((M, M, M, M), dtype=complex)
    for entry in d.get("V_raw", []):
        raw[entry["i"], entry["j"], entry["k"], entry["l"]] = _cplx(entry["value"])
    return ModelSpec(T, antisymmetrize(raw), int(d["A"]), float(d.get("hbar", 1.0)), d.get("name", "file"))


def load_model(path) -> ModelSpec:
    """Read a JSON model file holding the raw (non-antisymmetrized) interaction."""
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh))


def model_to_dict(model: ModelSpec, raw: np.ndarray | None = None) -> dict:
    """Serialize a model. Without ``raw``, ``V/2`` is written: it is a valid raw tensor
    whose antisymmetrization gives back ``V``."""
    M = model.M
    if raw is None:
        raw = 0.5 * model.V
    entries = []
    for idx in zip(*np.nonzero(np.abs(raw) > 0)):
        val = raw[idx]
        entries.append({"i": int(idx[0]), "j": int(idx[1]), "k": int(idx[2]), "l": int(idx[3]),
                        "value": [float(val.real), float(val.imag)]})
    return {
        "M": M,
        "A": model.A,
        "hbar": model.hbar,
        "name": model.name,
        "T": [[[float(z.real), float(z.imag)] for z in row] for row in model.T],
        "V_raw": entries,
    }


def save_model(model: ModelSpec, path, raw: np.ndarray | None = None) -> None:
    with open(Path(path), "w") as fh:
        json.dump(model_to_dict(model, raw), fh, indent=1)
