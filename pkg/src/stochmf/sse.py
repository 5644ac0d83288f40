"""Stochastic propagation of Slater determinants, dyads and dyadic densities.

One noise vector is shared by all orbitals of a determinant, and bra and ket
receive independent vectors. Bra orbitals are stepped with the same rule as
ket orbitals; taking the adjoint then produces ``lambda*`` and ``-h``
automatically. Every routine broadcasts over leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, RankLoss
from .meanfield import h_mf, h_sse, propagator, vbar
from .slater import DyadDensity, DyadState, antisym_product, dag, dyad_density, projector


@dataclass(frozen=True)
class NoiseDraw:
    """Gaussian increments, variance ``dt`` per channel, for ket (a) and bra (b)."""

    dWa: np.ndarray
    dWb: np.ndarray
    dt: float

    @classmethod
    def sample(cls, rng: np.random.Generator, S: int, dt: float, batch: tuple = ()) -> "NoiseDraw":
        w = rng.standard_normal((2,) + tuple(batch) + (S,)) * np.sqrt(dt)
        return cls(w[0], w[1], dt)

    @classmethod
    def zero(cls, S: int, dt: float, batch: tuple = ()) -> "NoiseDraw":
        z = np.zeros(tuple(batch) + (S,))
        return cls(z, z.copy(), dt)

    def shared(self) -> "NoiseDraw":
        """Same vector on both sides (used for diagonal consistency checks)."""
        return NoiseDraw(self.dWa, self.dWa.copy(), self.dt)


@dataclass(frozen=True)
class SseParams:
    dt: float
    scheme: str = "differential"  # or "exponential"
    drift: str = "midpoint"  # or "euler"
    stabilize_every: int = 10
    seed: int = 0
    midpoint_tol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("differential", "exponential"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.drift not in ("midpoint", "euler"):
            raise ValueError(f"unknown drift {self.drift!r}")
        if self.stabilize_every < 0:
            raise ValueError("stabilize_every must be >= 0")


def _trace(X):
    return np.einsum("...ii->...", X)


def channel_sum(dec, dW, adjoint: bool = False):
    """``sum_s lambda_s dW_s O_s``, or ``sum_s lambda_s* dW_s O_s^+`` for the bra side."""
    if dec.S == 0:
        return np.zeros(np.shape(dW)[:-1] + (dec.M, dec.M), dtype=complex)
    if adjoint:
        return np.einsum("...s,s,sji->...ij", dW, dec.lambdas.conj(), dec.ops.conj())
    return np.einsum("...s,s,sij->...ij", dW, dec.lambdas, dec.ops)


def _check_rank(W):
    s = np.linalg.svd(W, compute_uv=False)
    if not np.all(np.isfinite(s)) or np.any(s[..., -1] <= 1e-13 * s[..., 0]):
        raise RankLoss("orbital set lost rank")


def _drift(model, W, rho, params: SseParams):
    """Noise-free part of the orbital step.

    ``euler``: ``W + dt/(i hbar) h(rho) W``.
    ``midpoint``: ``exp(-i dt h_MF(rho_mid)/hbar) W`` times the scalar factor
    ``exp(-dt Tr(rho_mid vbar(rho_mid)) / (2 i hbar))`` spread over the columns.
    The ``-rho vbar / 2`` part of ``h`` only re-mixes occupied orbitals, so it
    enters the determinant through its trace alone; the projector then follows
    the TDHF midpoint path exactly.
    """
    dt, hbar = params.dt, model.hbar
    if params.drift == "euler":
        return W + dt / (1j * hbar) * (h_sse(model, rho) @ W)
    A = W.shape[-1]
    guess = rho
    for _ in range(params.max_iter):
        mid = 0.5 * (rho + guess)
        U, Ui = propagator(h_mf(model, mid), dt, hbar)
        new = U @ rho @ Ui
        done = np.max(np.abs(new - guess), initial=0.0) <= params.midpoint_tol
        guess = new
        if done:
            break
    else:
        raise ConvergenceError("midpoint drift did not converge")
    z = -0.5 * dt / (1j * hbar) * _trace(mid @ vbar(model, mid))
    return (U @ W) * np.exp(z / A)[..., None, None]


def step_orbitals(model, W, dec, params: SseParams, dWa, check: bool = True):
    """``|d alpha> = dt/(i hbar) h(rho)|alpha> + sum_s lambda_s (1-rho) O_s |alpha> dW_s``.

    ``dWa`` is either a :class:`NoiseDraw` (its ket part is used) or an array.
    """
    dW = dWa.dWa if isinstance(dWa, NoiseDraw) else dWa
    rho = projector(W)
    q = np.eye(W.shape[-2]) - rho
    out = _drift(model, W, rho, params) + q @ channel_sum(dec, dW) @ W
    if check:
        _check_rank(out)
    return out


def exponential_step(model, W, dec, params: SseParams, dWa, check: bool = True):
    """Exponential form: ``W -> exp(dt/(i hbar) h(rho) + sum_s lambda_s dW_s (1-rho) O_s rho) W``.

    The exponent is a one-body operator, so the result is again a single
    determinant. The particle-hole noise generator squares to zero.
    """
    dW = dWa.dWa if isinstance(dWa, NoiseDraw) else dWa
    rho = projector(W)
    q = np.eye(W.shape[-2]) - rho
    Z = params.dt / (1j * model.hbar) * h_sse(model, rho) + q @ channel_sum(dec, dW) @ rho
    out = scipy.linalg.expm(Z) @ W
    if check:
        _check_rank(out)
    return out


def step_dyad(model, dyad: DyadState, dec, params: SseParams, draw: NoiseDraw, check: bool = True) -> DyadState:
    """Advance ket with ``draw.dWa`` and bra with the independent ``draw.dWb``."""
    step = exponential_step if params.scheme == "exponential" else step_orbitals
    Wa = step(model, dyad.Wa, dec, params, draw.dWa, check)
    Wb = step(model, dyad.Wb, dec, params, draw.dWb, check)
    return replace(dyad, Wa=Wa, Wb=Wb)


# --- density-level stepping -------------------------------------------------


def ddetf(dyad: DyadState, dec, draw: NoiseDraw, den: DyadDensity | None = None):
    """Increment of the dyad weight (pure noise, no ``dt`` term):

    ``det f [sum_s lambda_s Tr(u1 (1-rho_a) O_s) dWa_s + sum_s lambda_s* Tr(O_s^+ (1-rho_b) u1) dWb_s]``.
    """
    den = den or dyad_density(dyad, floor=None)
    rho_a, rho_b = projector(dyad.Wa), projector(dyad.Wb)
    return _ddetf(den, rho_a, rho_b, dec, draw)


def _ddetf(den, rho_a, rho_b, dec, draw):
    M = den.u1.shape[-1]
    one = np.eye(M)
    Ga = channel_sum(dec, draw.dWa)
    Gb = channel_sum(dec, draw.dWb, adjoint=True)
    ta = _trace(den.u1 @ (one - rho_a) @ Ga)
    tb = _trace(Gb @ (one - rho_b) @ den.u1)
    return np.asarray(den.detf) * (ta + tb)


def density_increment(model, den: DyadDensity, aux, dec, draw: NoiseDraw):
    """``(d rho1, d det f)`` from the stochastic one-body density equation:

    ``d rho1 = dt/(i hbar) [h_MF(u1), rho1] + db1`` where ``db1`` holds the two
    direct noise terms and the two trace terms built from the self-densities
    ``aux = (rho_a, rho_b)`` of ket and bra.
    """
    rho_a, rho_b = aux
    u = den.u1
    rho1 = den.rho1
    M = u.shape[-1]
    one = np.eye(M)
    hm = h_mf(model, u)
    drift = draw.dt / (1j * model.hbar) * (hm @ rho1 - rho1 @ hm)
    Ga = channel_sum(dec, draw.dWa)
    Gb = channel_sum(dec, draw.dWb, adjoint=True)
    ta = _trace(u @ (one - rho_a) @ Ga)[..., None, None]
    tb = _trace(Gb @ (one - rho_b) @ u)[..., None, None]
    db1 = (one - u) @ Ga @ rho1 + ta * rho1 + rho1 @ Gb @ (one - u) + tb * rho1
    return drift + db1, _ddetf(den, rho_a, rho_b, dec, draw)


def projector_increment(model, P, dec, dW, dt: float):
    """Ito increment of the self-density of one determinant:

    ``dt/(i hbar)[h_MF(P), P] + sum_s |lambda_s|^2 dt [(1-P) O_s P O_s^+ (1-P) - P O_s^+ (1-P) O_s P]``
    ``+ (1-P) G P + P G^+ (1-P)`` with ``G = sum_s lambda_s dW_s O_s``.
    """
    M = P.shape[-1]
    q = np.eye(M) - P
    hm = h_mf(model, P)
    out = dt / (1j * model.hbar) * (hm @ P - P @ hm)
    for lam, O in zip(dec.lambdas, dec.ops):
        Od = O.conj().T
        out = out + abs(lam) ** 2 * dt * (q @ O @ P @ Od @ q - P @ Od @ q @ O @ P)
    G = channel_sum(dec, dW)
    return out + q @ G @ P + P @ dag(G) @ q


def step_density(model, den: DyadDensity, aux, dec, params: SseParams, draw: NoiseDraw):
    """One Ito-Euler step at density level.

    ``aux = (rho_a, rho_b)`` must be carried along: the trace terms need the
    self-densities of both factors, which ``u1`` alone does not determine.
    Returns ``(DyadDensity, (rho_a, rho_b))``.
    """
    rho_a, rho_b = aux
    d_rho, d_det = density_increment(model, den, aux, dec, draw)
    rho1 = den.rho1 + d_rho
    detf = np.asarray(den.detf) + d_det
    new_aux = (
        rho_a + projector_increment(model, rho_a, dec, draw.dWa, draw.dt),
        rho_b + projector_increment(model, rho_b, dec, draw.dWb, draw.dt),
    )
    return DyadDensity(rho1 / detf[..., None, None], detf), new_aux


def noise_k2(dyad: DyadState, dec, draw: NoiseDraw):
    """Stochastic term of the two-body density equation (k = 2):

    ``sum_i (1-u_i) G_a^i rho12 + rho12 sum_i G_b^i (1-u_i) + (t_a + t_b) rho12``
    where ``G_a = sum lambda dWa O``, ``G_b = sum lambda* dWb O^+`` and ``t_a, t_b``
    are the trace terms of the weight increment.
    """
    if dyad.A < 2:
        raise ValueError("two-body noise needs A >= 2")
    den = dyad_density(dyad, floor=None)
    u = den.u1
    M = u.shape[-1]
    one = np.eye(M)
    rho12 = np.asarray(den.detf)[..., None, None, None, None] * antisym_product(u, u)
    Ga = channel_sum(dec, draw.dWa)
    Gb = channel_sum(dec, draw.dWb, adjoint=True)
    B = (one - u) @ Ga
    C = Gb @ (one - u)
    rho_a, rho_b = projector(dyad.Wa), projector(dyad.Wb)
    ta = _trace(u @ (one - rho_a) @ Ga)[..., None, None, None, None]
    tb = _trace(Gb @ (one - rho_b) @ u)[..., None, None, None, None]
    left = np.einsum("...im,...mkjl->...ikjl", B, rho12) + np.einsum("...km,...imjl->...ikjl", B, rho12)
    right = np.einsum("...ikml,...mj->...ikjl", rho12, C) + np.einsum("...ikjm,...ml->...ikjl", rho12, C)
    return left + right + (ta + tb) * rho12


# --- orbital-level Ito differential (independent route) ---------------------


def _taylor(Wa, Wb, X, Y):
    """Second-order expansion of ``u(eps)`` and ``det f(eps)/det f`` for
    ``Wa -> Wa + eps X`` and ``Wb -> Wb + eps Y``."""
    f = dag(Wb) @ Wa
    P = np.linalg.inv(f)
    g1 = dag(Wb) @ X + dag(Y) @ Wa
    g2 = dag(Y) @ X
    Pg1 = P @ g1
    t1 = _trace(Pg1)
    d2 = _trace(P @ g2) + 0.5 * (t1**2 - _trace(Pg1 @ Pg1))
    inv1 = -Pg1 @ P
    inv2 = Pg1 @ Pg1 @ P - P @ g2 @ P
    WbH, YH = dag(Wb), dag(Y)
    u0 = Wa @ P @ WbH
    u1 = X @ P @ WbH + Wa @ P @ YH + Wa @ inv1 @ WbH
    u2 = X @ P @ YH + X @ inv1 @ WbH + Wa @ inv1 @ YH + Wa @ inv2 @ WbH
    return t1, d2, u0, u1, u2


@dataclass(frozen=True)
class Differential:
    drho1: np.ndarray
    ddetf: np.ndarray
    drho12: np.ndarray | None = None


def orbital_differential(model, dyad: DyadState, dec, draw: NoiseDraw, two_body: bool = False) -> Differential:
    """Ito differential of ``(rho1, det f[, rho12])`` induced by the orbital SSE.

    Linear terms come from the drift ``dt/(i hbar) h(rho) W`` and the noise;
    second-order terms are contracted with ``dW_s dW_s' = delta dt`` and
    ``dWa dWb = 0``. Nothing here uses the density-level equations.
    """
    Wa, Wb = dyad.Wa, dyad.Wb
    M = Wa.shape[-2]
    one = np.eye(M)
    dt = draw.dt
    rho_a, rho_b = projector(Wa), projector(Wb)
    qa, qb = one - rho_a, one - rho_b
    base_det = np.exp(dyad.logw) * np.linalg.det(dag(Wb) @ Wa)
    bd = np.asarray(base_det)[..., None, None]
    X = dt / (1j * model.hbar) * h_sse(model, rho_a) @ Wa + qa @ channel_sum(dec, draw.dWa) @ Wa
    Y = dt / (1j * model.hbar) * h_sse(model, rho_b) @ Wb + qb @ channel_sum(dec, draw.dWb) @ Wb
    t1, _, u0, u1, _ = _taylor(Wa, Wb, X, Y)
    t1 = np.asarray(t1)[..., None, None]
    drho1 = bd * (t1 * u0 + u1)
    dd = base_det * np.asarray(t1)[..., 0, 0]
    d12 = None
    if two_body:
        d12 = t1[..., None, None] * antisym_product(u0, u0) + antisym_product(u1, u0) + antisym_product(u0, u1)
    zero = np.zeros_like(Wa)
    for lam, O in zip(dec.lambdas, dec.ops):
        for Xs, Ys in ((lam * qa @ O @ Wa, zero), (zero, lam * qb @ O @ Wb)):
            s1, s2, _, v1, v2 = _taylor(Wa, Wb, Xs, Ys)
            s1 = np.asarray(s1)[..., None, None]
            s2 = np.asarray(s2)[..., None, None]
            drho1 = drho1 + dt * bd * (s2 * u0 + s1 * v1 + v2)
            dd = dd + dt * base_det * s2[..., 0, 0]
            if two_body:
                d12 = d12 + dt * (
                    s2[..., None, None] * antisym_product(u0, u0)
                    + s1[..., None, None] * (antisym_product(v1, u0) + antisym_product(u0, v1))
                    + antisym_product(v2, u0) + antisym_product(u0, v2) + antisym_product(v1, v1)
                )
    if two_body:
        d12 = np.asarray(base_det)[..., None, None, None, None] * d12
    return Differential(drho1, dd, d12)
