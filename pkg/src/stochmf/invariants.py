"""Self-checks run by the ``validate`` command.

Each check returns a :class:`Check` with the measured residual and its
tolerance. Everything here is deterministic and cheap for the small models the
Fock reference can handle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fock
from .etdhf import f12
from .meanfield import e0, tdhf_step
from .noise import decompose, reconstruct
from .slater import DyadState, as_matrix, correlation_c12, kbody_density
from .sse import NoiseDraw, SseParams, step_dyad


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)


def _random_slater(rng, M, A):
    W = rng.normal(size=(M, A)) + 1j * rng.normal(size=(M, A))
    return np.linalg.qr(W)[0]


def _random_projector(rng, M, A):
    W = _random_slater(rng, M, A)
    return W @ W.conj().T


def check_decomposition(model, dec) -> Check:
    return Check("decomposition_roundtrip", float(np.max(np.abs(model.V - reconstruct(dec)))), 1e-10)


def check_fluctuation_dissipation(model, dec, rng) -> Check:
    W = _random_slater(rng, model.M, model.A)
    basis = fock.sector(model.M, model.A)
    lhs = fock.noise_square(W, dec, basis)
    rhs = fock.apply_hres(W, model, basis) / (1j * model.hbar)
    return Check("fluctuation_dissipation", float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-300)), 1e-8)


def check_slater_vs_fock(model, rng) -> Check:
    M, A = model.M, model.A
    Wa = _random_slater(rng, M, A)
    Wb = _random_slater(rng, M, A)
    basis = fock.sector(M, A)
    ref = fock.one_body_density(fock.embed_slater(Wb, basis), fock.embed_slater(Wa, basis), basis)
    got = kbody_density(DyadState(Wa, Wb), 1)
    return Check("slater_rho1_vs_fock", float(np.max(np.abs(ref - got))), 1e-10)


def check_c12(model, rng) -> Check:
    if model.A < 2:
        return Check("c12_vanishes", 0.0, 1e-10)
    d = DyadState(_random_slater(rng, model.M, model.A), _random_slater(rng, model.M, model.A))
    return Check("c12_vanishes", float(np.max(np.abs(correlation_c12(d)))), 1e-10)


def check_hf_energy(model, rng) -> Check:
    W = _random_slater(rng, model.M, model.A)
    basis = fock.sector(model.M, model.A)
    phi = fock.embed_slater(W, basis)
    H = fock.build_hamiltonian(model, basis)
    exact = np.vdot(phi, H @ phi).real
    return Check("hf_energy_identity", float(abs(exact - e0(model, W @ W.conj().T).real)), 1e-10)


def check_f12_antihermitian(model, rng) -> Check:
    F = as_matrix(f12(0.5 * _random_projector(rng, model.M, model.A), model))
    return Check("f12_antihermitian", float(np.max(np.abs(F + F.conj().T))), 1e-12)


def check_tdhf_energy(model, rng, steps: int = 50, dt: float = 0.01) -> Check:
    rho = _random_projector(rng, model.M, model.A)
    E0 = e0(model, rho).real
    for _ in range(steps):
        rho = tdhf_step(model, rho, dt)
    return Check("tdhf_energy_drift", float(abs(e0(model, rho).real - E0)), 1e-8)


def check_sse_idempotency(model, dec, rng, steps: int = 20, dt: float = 1e-3) -> Check:
    d = DyadState.pure(_random_slater(rng, model.M, model.A))
    params = SseParams(dt=dt)
    worst = 0.0
    for _ in range(steps):
        d = step_dyad(model, d, dec, params, NoiseDraw.sample(rng, dec.S, dt))
        u = kbody_density(d, 1) / d.weight()
        worst = max(worst, float(np.max(np.abs(u @ u - u))), float(abs(np.trace(u) - model.A)))
    return Check("sse_idempotency", worst, 1e-8)


def run_all(model, seed: int = 0, eps: float = 1e-12) -> list[Check]:
    rng = np.random.default_rng(seed)
    dec = decompose(model, eps)
    return [
        check_decomposition(model, dec),
        check_fluctuation_dissipation(model, dec, rng),
        check_slater_vs_fock(model, rng),
        check_c12(model, rng),
        check_hf_energy(model, rng),
        check_f12_antihermitian(model, rng),
        check_tdhf_energy(model, rng),
        check_sse_idempotency(model, dec, rng),
    ]
