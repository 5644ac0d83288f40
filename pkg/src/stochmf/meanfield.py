"""Mean-field potential, Hartree-Fock energy, SSE drift operator and TDHF propagation.

All functions accept a stack of densities with shape ``(..., M, M)``.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ConvergenceError


def vbar(model, rho):
    """``vbar_ij = sum_kl V_ikjl rho_lk``."""
    return np.einsum("ikjl,...lk->...ij", model.V, rho)


def h_mf(model, rho):
    return model.T + vbar(model, rho)


def e0(model, rho):
    """``Tr(rho h_MF - rho vbar / 2)``, the Hartree-Fock energy for a projector."""
    v = vbar(model, rho)
    return np.einsum("...ij,...ji->...", rho, model.T + 0.5 * v)


hf_energy = e0


def h_sse(model, rho):
    """Drift operator of the one-body SSE: ``h_MF(rho) - rho vbar(rho) / 2``.

    No symmetrization is applied, so dyadic (non-Hermitian) densities are fine.
    """
    v = vbar(model, rho)
    return model.T + v - 0.5 * rho @ v


def _is_hermitian(h) -> bool:
    return np.allclose(h, np.swapaxes(h, -1, -2).conj(), rtol=0.0, atol=1e-13)


def propagator(h, dt: float, hbar: float = 1.0):
    """``(exp(-i dt h / hbar), its inverse)`` for a stack of one-body matrices."""
    if _is_hermitian(h):
        hh = 0.5 * (h + np.swapaxes(h, -1, -2).conj())
        w, V = np.linalg.eigh(hh)
        ph = np.exp(-1j * dt / hbar * w)
        U = (V * ph[..., None, :]) @ np.swapaxes(V, -1, -2).conj()
        return U, np.swapaxes(U, -1, -2).conj()
    U = scipy.linalg.expm(-1j * dt / hbar * h)
    return U, scipy.linalg.expm(1j * dt / hbar * h)


def midpoint_step(model, rho, dt: float, tol: float = 1e-13, max_iter: int = 50):
    """Self-consistent midpoint step ``rho -> U rho U^-1`` with
    ``U = exp(-i dt h_MF(rho_mid) / hbar)`` and ``rho_mid = (rho + rho_new) / 2``.

    Returns ``(rho_new, U, U_inv)``.
    """
    rho = np.asarray(rho, dtype=complex)
    guess = rho
    for _ in range(max_iter):
        U, Ui = propagator(h_mf(model, 0.5 * (rho + guess)), dt, model.hbar)
        new = U @ rho @ Ui
        if np.max(np.abs(new - guess)) <= tol:
            return new, U, Ui
        guess = new
    raise ConvergenceError(f"TDHF midpoint iteration did not converge in {max_iter} iterations")


def tdhf_step(model, rho, dt: float, tol: float = 1e-13, max_iter: int = 50):
    """One step of ``i hbar d(rho)/dt = [h_MF(rho), rho]``.

    The update is a similarity transform, so trace and spectrum are kept exactly
    (and Hermiticity, for Hermitian input).
    """
    return midpoint_step(model, rho, dt, tol, max_iter)[0]


def _grid(t0: float, t1: float, dt: float) -> tuple[int, float]:
    span = t1 - t0
    if span < 0:
        raise ValueError("t1 must not precede t0")
    if span == 0:
        return 0, dt
    n = max(1, int(np.ceil(span / dt - 1e-9)))
    return n, span / n


def u_mf(model, rho0, t0: float, t1: float, dt: float):
    """Time-ordered mean-field propagator along the self-consistent TDHF path.

    Returns ``(U, path, times)`` with ``path[n] = U_n rho0 U_n^+`` on the grid.
    The step is shortened, if needed, so that the grid ends exactly at ``t1``.
    """
    n, h = _grid(t0, t1, dt)
    M = model.M
    U = np.eye(M, dtype=complex)
    rho = np.asarray(rho0, dtype=complex)
    path = [rho]
    for _ in range(n):
        rho, Us, _ = midpoint_step(model, rho, h)
        U = Us @ U
        path.append(rho)
    times = t0 + h * np.arange(n + 1)
    return U, np.array(path), times


def tdhf_path(model, rho0, times, dt: float):
    """TDHF densities at the requested output times (each reached with step ``<= dt``)."""
    out = [np.asarray(rho0, dtype=complex)]
    rho = out[0]
    for ta, tb in zip(times[:-1], times[1:]):
        n, h = _grid(ta, tb, dt)
        for _ in range(n):
            rho = tdhf_step(model, rho, h)
        out.append(rho)
    return np.array(out)
