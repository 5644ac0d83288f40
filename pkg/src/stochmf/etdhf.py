"""Coarse-grained extended TDHF: one rare jump per coarse interval.

A mixed one-body density is propagated by its mean field over an interval
``Dt = N * Ds``. Within the interval each replica jumps exactly once, at
``tau = t0 + k * Ds``, by

    delta = sum_s lambda_s dW_s (1-rho) O_s rho + sum_s lambda_s* dW'_s rho O_s^+ (1-rho)

with independent Gaussian vectors ``dW, dW'`` of variance ``Ds``. Averaged over
replicas, ``A(delta (x) delta)`` reproduces ``Ds/(i hbar) F12``, so the summed
jump corrections converge to the Born-type collision integral computed by
:func:`born_correction`. The correlated two-body density is then projected
back onto a one-body density.

Two-body tensors follow the layout of :mod:`stochmf.slater`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PositivityLoss
from .meanfield import midpoint_step
from .noise import decompose
from .slater import as_tensor, dag, partial_trace2

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
SPECTRUM_TOL = 1e-8
CLIP_TOL = 1e-4


@dataclass(frozen=True)
class MixedDensity:
    """Hermitian one-body density with occupations in ``[0, 1]`` and trace ``A``."""

    rho1: np.ndarray
    A: int

    def __post_init__(self):
        rho = np.array(self.rho1, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"rho1 must be square, got shape {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise ValueError("rho1 is not Hermitian")
        n = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
        if n.min() < -SPECTRUM_TOL or n.max() > 1 + SPECTRUM_TOL:
            raise ValueError(f"occupations outside [0, 1]: [{n.min():.3e}, {n.max():.3e}]")
        if abs(np.trace(rho).real - self.A) > 1e-8:
            raise ValueError(f"Tr rho1 = {np.trace(rho).real:.10f} differs from A = {self.A}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho1", rho)

    @classmethod
    def from_occupations(cls, n, orbitals=None) -> "MixedDensity":
        n = np.asarray(n, dtype=float)
        U = np.eye(len(n)) if orbitals is None else np.asarray(orbitals)
        A = int(round(n.sum()))
        return cls((U * n) @ dag(U), A)

    @property
    def occupations(self):
        return np.linalg.eigvalsh(self.rho1)


@dataclass(frozen=True)
class CoarseParams:
    """``Dt`` coarse interval, ``N`` jump slots (``Ds = Dt / N``).

    ``tau_coll`` and ``tau_free`` are documentation-only: the scheme assumes
    ``tau_coll << Dt << tau_free`` but never checks it.
    """

    Dt: float
    N: int = 10
    policy: str = "stratified"  # or "sampled"
    mean_field: str = "shared"  # or "per_replica"
    mf_substeps: int = 1
    tau_coll: float | None = None
    tau_free: float | None = None

    def __post_init__(self):
        if not self.Dt > 0:
            raise ConfigError("Dt must be positive")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.mf_substeps < 1:
            raise ConfigError("mf_substeps must be >= 1")
        if self.policy not in ("stratified", "sampled"):
            raise ConfigError(f"unknown jump policy {self.policy!r}")
        if self.mean_field not in ("shared", "per_replica"):
            raise ConfigError(f"unknown mean-field mode {self.mean_field!r}")

    @property
    def Ds(self) -> float:
        return self.Dt / self.N

    def metadata(self) -> dict:
        return {"Dt": self.Dt, "N": self.N, "Ds": self.Ds, "policy": self.policy,
                "mean_field": self.mean_field, "mf_substeps": self.mf_substeps,
                "tau_coll": self.tau_coll, "tau_free": self.tau_free}


def _as_rho(rho):
    return np.asarray(rho.rho1 if isinstance(rho, MixedDensity) else rho, dtype=complex)


def f12(rho, model) -> np.ndarray:
    """``(1-rho)(1-rho) v (rho rho) - (rho rho) v (1-rho)(1-rho)`` as a two-body tensor."""
    rho = _as_rho(rho)
    M = rho.shape[-1]
    R = np.kron(rho, rho)
    Q = np.kron(np.eye(M) - rho, np.eye(M) - rho)
    V = model.vmatrix()
    return as_tensor(Q @ V @ R - R @ V @ Q)


def _mf_grid(model, rho0, t0, n, h, substeps):
    """Mean-field path on ``t0 + k h`` (k = 0..n) and the one-step propagators."""
    rho = _as_rho(rho0)
    path, steps = [rho], []
    for _ in range(n):
        U = np.eye(model.M, dtype=complex)
        for _ in range(substeps):
            rho, Us, _ = midpoint_step(model, rho, h / substeps)
            U = Us @ U
        path.append(rho)
        steps.append(U)
    return np.array(path), steps


def _to_final(steps):
    """``U(t_n, t_k)`` for every grid point ``k``."""
    M = steps[0].shape[0] if steps else 0
    out = [np.eye(M, dtype=complex)]
    for U in reversed(steps):
        out.append(out[-1] @ U)
    return out[::-1]


def _conj12(U, R):
    """``(U (x) U) R (U (x) U)^+`` for a two-body tensor."""
    return np.einsum("ia,kb,abcd,jc,ld->ikjl", U, U, R, U.conj(), U.conj())


def born_correction(rho0, t0: float, tf: float, quad_steps: int, model, rule: str = "trapezoid",
                    mf_substeps: int = 1) -> np.ndarray:
    """``(1/(i hbar)) int_t0^tf ds U12(tf, s) F12(s) U12(tf, s)^+`` along the mean-field path.

    ``rule='trapezoid'`` is the default; ``rule='left'`` uses the nodes
    ``t0 + k h`` (k < quad_steps), matching the stratified jump times.
    """
    if quad_steps < 2:
        raise ValueError("quad_steps must be >= 2")
    if rule not in ("trapezoid", "left"):
        raise ValueError(f"unknown quadrature rule {rule!r}")
    M = model.M
    if tf == t0:
        return np.zeros((M,) * 4, dtype=complex)
    h = (tf - t0) / quad_steps
    path, steps = _mf_grid(model, rho0, t0, quad_steps, h, mf_substeps)
    to_f = _to_final(steps)
    w = np.full(quad_steps + 1, h)
    if rule == "trapezoid":
        w[0] = w[-1] = h / 2
    else:
        w[-1] = 0.0
    out = np.zeros((M,) * 4, dtype=complex)
    for k in range(quad_steps + 1):
        if w[k]:
            out += w[k] * _conj12(to_f[k], f12(path[k], model))
    return out / (1j * model.hbar)


def trace_down(R, A: int):
    """One-body density implied by a two-body correction: ``Tr_2 R / (A - 1)``."""
    return partial_trace2(R) / (A - 1)


def _g(rho):
    # Tr_2 A(rho (x) rho) = rho Tr(rho) - rho^2, batched
    tr = np.einsum("...ii->...", rho)[..., None, None]
    return tr * rho - rho @ rho


def _jumps(rho, dec, dWa, dWb):
    """Batch of jump increments at density ``rho``."""
    M = rho.shape[-1]
    q = np.eye(M) - rho
    Ga = np.einsum("ns,s,sij->nij", dWa, dec.lambdas, dec.ops)
    Gb = np.einsum("ns,s,sji->nij", dWb, dec.lambdas.conj(), dec.ops.conj())
    return q @ Ga @ rho + rho @ Gb @ q


def _propagate_batch(model, rho, n_steps, h, substeps):
    for _ in range(n_steps * substeps):
        rho = midpoint_step(model, rho, h / substeps)[0]
    return rho


def _rng(seed, interval, k):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(interval, k)))


def _project(rho_mf, corr, A):
    """Hermitize, check and clip the projected spectrum, restore the trace.

    The Monte-Carlo correction only conserves the trace on average, so the
    deficit is returned to the partially occupied levels (weights ``n(1-n)``).
    """
    rho = rho_mf + corr
    rho = 0.5 * (rho + dag(rho))
    n, U = np.linalg.eigh(rho)
    excess = max(0.0, -n.min(), n.max() - 1.0)
    if excess > CLIP_TOL:
        raise PositivityLoss(f"occupation {n.min() if -n.min() > n.max() - 1 else n.max():.3e} "
                             f"outside [0, 1] by more than {CLIP_TOL:g}; reduce Dt")
    clipped = np.clip(n, 0.0, 1.0)
    deficit = A - clipped.sum()
    weight = clipped * (1 - clipped)
    if weight.sum() > 0:
        clipped = clipped + deficit * weight / weight.sum()
    else:
        clipped = clipped + deficit / len(clipped)
    clipped = np.clip(clipped, 0.0, 1.0)
    return (U * clipped) @ dag(U), {"clip_excess": excess, "trace_deficit": float(deficit)}


def coarse_step_stochastic(model, rho0, cp: CoarseParams, n_traj: int, dec=None, seed: int = 0,
                           t0: float = 0.0, interval: int = 0):
    """One coarse interval. Returns ``(MixedDensity at t0 + Dt, diagnostics)``.

    ``stratified``: ``n_traj`` replicas jump at every slot ``k`` and the slot
    means are summed. ``sampled``: ``n_traj * N`` replicas with uniformly drawn
    slots, mean scaled by ``N``. Each replica contributes
    ``Tr_2 A(rho_n (x) rho_n) - Tr_2 A(rho_mf (x) rho_mf)`` at the final time.
    """
    if model.A < 2:
        raise ConfigError("the collision term needs A >= 2")
    if n_traj < 2:
        raise ConfigError("n_traj must be >= 2")
    dec = decompose(model) if dec is None else dec
    rho0 = _as_rho(rho0)
    A, M, N, Ds = model.A, model.M, cp.N, cp.Ds
    path, steps = _mf_grid(model, rho0, t0, N, Ds, cp.mf_substeps)
    to_f = _to_final(steps)
    rho_f = path[-1]
    g_mf = _g(rho_f)

    def samples(k, rng, size):
        dW = rng.standard_normal((2, size, dec.S)) * np.sqrt(Ds)
        delta = _jumps(path[k], dec, dW[0], dW[1])
        if cp.mean_field == "shared":
            U = to_f[k]
            rho_n = rho_f + U @ delta @ dag(U)
        else:
            rho_n = _propagate_batch(model, path[k] + delta, N - k, Ds, cp.mf_substeps)
        return _g(rho_n) - g_mf

    jumps = np.zeros(N, dtype=np.int64)
    per_slot = np.zeros((N, M, M), dtype=complex)
    var = np.zeros((M, M))
    if dec.S == 0:
        jumps[:] = n_traj
    elif cp.policy == "stratified":
        for k in range(N):
            c = samples(k, _rng(seed, interval, k), n_traj)
            per_slot[k] = c.mean(axis=0)
            var += (c.real.var(axis=0, ddof=1) + c.imag.var(axis=0, ddof=1)) / n_traj
            jumps[k] = n_traj
    else:
        rng = _rng(seed, interval, N)
        total = n_traj * N
        slots = rng.integers(0, N, size=total)
        c_all = np.zeros((total, M, M), dtype=complex)
        for k in range(N):
            idx = np.flatnonzero(slots == k)
            if len(idx):
                c_all[idx] = samples(k, _rng(seed, interval, k), len(idx))
                per_slot[k] = N * c_all[idx].sum(axis=0) / total
            jumps[k] = len(idx)
        var = N**2 * (c_all.real.var(axis=0, ddof=1) + c_all.imag.var(axis=0, ddof=1)) / total
    corr2 = per_slot.sum(axis=0)
    se = np.sqrt(var) / (A - 1)
    rho_new, clip = _project(rho_f, corr2 / (A - 1), A)
    diag = {
        **cp.metadata(),
        "t0": t0,
        "tf": t0 + cp.Dt,
        "n_traj": n_traj,
        "jumps_per_slot": jumps.tolist(),
        "jumps_per_replica": 1,
        "correction": corr2 / (A - 1),
        "correction_se": se,
        "correction_norm": float(np.linalg.norm(corr2) / (A - 1)),
        "rho_mf": rho_f,
        **clip,
    }
    if clip["clip_excess"] > 0:
        log.info("clipped occupations by %.2e", clip["clip_excess"])
    return MixedDensity(rho_new, A), diag


@dataclass
class CoarseSeries:
    times: np.ndarray
    densities: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


def coarse_evolution(model, rho0, cp: CoarseParams, n_intervals: int, n_traj: int, dec=None,
                     seed: int = 0, t0: float = 0.0) -> CoarseSeries:
    """Chain coarse steps; correlations are discarded after every interval."""
    if n_intervals < 0:
        raise ConfigError("n_intervals must be >= 0")
    dec = decompose(model) if dec is None else dec
    rho = rho0 if isinstance(rho0, MixedDensity) else MixedDensity(rho0, model.A)
    out = CoarseSeries(t0 + cp.Dt * np.arange(n_intervals + 1), [rho])
    for i in range(n_intervals):
        rho, diag = coarse_step_stochastic(model, rho, cp, n_traj, dec, seed, t0 + i * cp.Dt, i)
        out.densities.append(rho)
        out.diagnostics.append(diag)
    return out
