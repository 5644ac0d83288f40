"""Monte-Carlo ensembles of dyads: seeding, propagation, averaging, checkpoints.

Trajectories are propagated in fixed-size blocks. Block ``b`` draws its noise
from ``SeedSequence(master_seed, spawn_key=(b,))``, so trajectory ``i`` always
sees the same stream (column ``i % block_size`` of block ``i // block_size``)
no matter how many workers run. Block results are reduced in block order.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import TooManyAborts
from .noise import decompose
from .slater import DyadState, rho1_of
from .sse import NoiseDraw, SseParams, step_dyad

log = logging.getLogger(__name__)

THREADS_ENV = "STOCHMF_THREADS"
ABORT_TOLERANCE = 0.01


def n_workers_from_env(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, default)))
    except ValueError:
        return default


def block_rng(master_seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(block,)))


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean_rho1: np.ndarray  # (n_t, M, M)
    se_re: np.ndarray
    se_im: np.ndarray
    mean_detf: np.ndarray  # (n_t,)
    se_detf: np.ndarray  # (n_t, 2) real / imaginary parts
    n_alive: np.ndarray  # (n_t,)
    n_traj: int
    n_aborted: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def se(self):
        return self.se_re + 1j * self.se_im


@dataclass
class _Partial:
    s1: np.ndarray
    s2re: np.ndarray
    s2im: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    count: np.ndarray
    aborted: int
    final: DyadState | None = None
    rng_state: dict | None = None


def _stabilize_masked(dyad: DyadState, alive: np.ndarray) -> tuple[DyadState, np.ndarray]:
    """QR re-conditioning of every live trajectory; rank-deficient ones are retired."""
    Qa, Ra = np.linalg.qr(dyad.Wa)
    Qb, Rb = np.linalg.qr(dyad.Wb)
    da = np.diagonal(Ra, axis1=-2, axis2=-1)
    db = np.diagonal(Rb, axis1=-2, axis2=-1)
    ok = np.all(np.isfinite(da), axis=-1) & np.all(np.isfinite(db), axis=-1)
    ok &= np.all(np.abs(da) > 1e-13 * np.max(np.abs(da), axis=-1, keepdims=True), axis=-1)
    ok &= np.all(np.abs(db) > 1e-13 * np.max(np.abs(db), axis=-1, keepdims=True), axis=-1)
    ok &= np.isfinite(dyad.logw)
    with np.errstate(all="ignore"):
        pa, pb = da / np.abs(da), db / np.abs(db)
        logw = dyad.logw + np.sum(np.log(np.abs(da)), axis=-1) + np.sum(np.log(np.abs(db)), axis=-1)
        Wa = Qa * pa[..., None, :]
        Wb = Qb * pb[..., None, :]
    alive = alive & ok
    # retired trajectories keep a harmless placeholder and are excluded from all sums
    Wa[~alive] = np.eye(*dyad.Wa.shape[-2:])
    Wb[~alive] = np.eye(*dyad.Wb.shape[-2:])
    logw = np.where(alive, logw, 0.0)
    return DyadState(Wa, Wb, logw), alive


def _run_block(model, dec, start: DyadState, params: SseParams, n_steps: int, record: list[int],
               rng: np.random.Generator, keep_final: bool) -> _Partial:
    B = start.Wa.shape[0]
    M = model.M
    n_out = len(record)
    s1 = np.zeros((n_out, M, M), dtype=complex)
    s2re = np.zeros((n_out, M, M))
    s2im = np.zeros((n_out, M, M))
    d1 = np.zeros(n_out, dtype=complex)
    d2 = np.zeros((n_out, 2))
    count = np.zeros(n_out, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    dyad = start
    out = 0

    def accumulate(k):
        rho = rho1_of(dyad)
        w = dyad.weight()
        good = alive & np.all(np.isfinite(rho), axis=(-1, -2)) & np.isfinite(w)
        r = rho[good]
        s1[k] = r.sum(axis=0)
        s2re[k] = (r.real**2).sum(axis=0)
        s2im[k] = (r.imag**2).sum(axis=0)
        d1[k] = w[good].sum()
        d2[k] = [(w[good].real ** 2).sum(), (w[good].imag ** 2).sum()]
        count[k] = good.sum()
        return good

    fused = params.scheme == "differential"
    if fused:
        arrays = _kernels.kernel_arrays(model, dec)
        opts = (params.dt, model.hbar, params.drift == "midpoint", params.midpoint_tol, params.max_iter)

    if record and record[0] == 0:
        accumulate(0)
        out = 1
    for n in range(1, n_steps + 1):
        draw = NoiseDraw.sample(rng, dec.S, params.dt, (B,))
        if fused:
            Wa, ok_a = _kernels.step_orbitals_batch(dyad.Wa, draw.dWa, *arrays, *opts)
            Wb, ok_b = _kernels.step_orbitals_batch(dyad.Wb, draw.dWb, *arrays, *opts)
            alive &= ok_a & ok_b
            dyad = DyadState(Wa, Wb, dyad.logw)
        else:
            with np.errstate(all="ignore"):
                dyad = step_dyad(model, dyad, dec, params, draw, check=False)
        if params.stabilize_every and n % params.stabilize_every == 0:
            dyad, alive = _stabilize_masked(dyad, alive)
        if out < n_out and record[out] == n:
            alive = accumulate(out)
            out += 1
    return _Partial(s1, s2re, s2im, d1, d2, count, int(B - alive.sum()),
                    dyad if keep_final else None,
                    rng.bit_generator.state if keep_final else None)


def _initial_dyad(initial) -> DyadState:
    if isinstance(initial, DyadState):
        return initial
    return DyadState.pure(initial)


def run(model, initial, params: SseParams, n_traj: int, horizon: float, output_every: int = 1,
        dec=None, master_seed: int | None = None, block_size: int = 1000,
        n_workers: int | None = None, checkpoint: str | None = None) -> EnsembleStats:
    """Propagate ``n_traj`` independent dyads from ``initial`` and average ``rho1``.

    ``initial`` is an ``(M, A)`` Slater matrix (pure state, ``Wa = Wb``) or a
    single :class:`DyadState`.
    """
    if n_traj < 2:
        raise ValueError("n_traj must be >= 2")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    dec = decompose(model) if dec is None else dec
    seed = params.seed if master_seed is None else master_seed
    n_steps = int(round(horizon / params.dt))
    record = list(range(0, n_steps + 1, max(1, output_every)))
    if record[-1] != n_steps:
        record.append(n_steps)
    init = _initial_dyad(initial)
    blocks = [(b, min(block_size, n_traj - b * block_size)) for b in range(-(-n_traj // block_size))]

    def work(item):
        b, size = item
        start = DyadState(
            np.broadcast_to(init.Wa, (size,) + init.Wa.shape).astype(complex),
            np.broadcast_to(init.Wb, (size,) + init.Wb.shape).astype(complex),
            np.full(size, init.logw, dtype=complex),
        )
        return _run_block(model, dec, start, params, n_steps, record, block_rng(seed, b), checkpoint is not None)

    workers = n_workers or n_workers_from_env()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(item) for item in blocks]

    stats = _reduce(parts, np.array(record) * params.dt, n_traj)
    stats.meta = {"master_seed": seed, "dt": params.dt, "n_steps": n_steps, "block_size": block_size,
                  "n_channels": dec.S}
    if stats.n_aborted:
        log.warning("%d of %d trajectories aborted", stats.n_aborted, n_traj)
    if stats.n_aborted > ABORT_TOLERANCE * n_traj:
        raise TooManyAborts(f"{stats.n_aborted} of {n_traj} trajectories aborted (> {ABORT_TOLERANCE:.0%})")
    if checkpoint is not None:
        save_checkpoint(checkpoint, parts, blocks, seed, n_steps * params.dt, block_size)
    return stats


def _reduce(parts: list[_Partial], times, n_traj: int) -> EnsembleStats:
    s1 = sum(p.s1 for p in parts)
    s2re = sum(p.s2re for p in parts)
    s2im = sum(p.s2im for p in parts)
    d1 = sum(p.d1 for p in parts)
    d2 = sum(p.d2 for p in parts)
    n = sum(p.count for p in parts)
    nn = np.maximum(n, 1)[:, None, None]
    mean = s1 / nn
    with np.errstate(invalid="ignore"):
        corr = nn / np.maximum(nn - 1, 1)
        var_re = np.maximum(s2re / nn - mean.real**2, 0.0) * corr
        var_im = np.maximum(s2im / nn - mean.imag**2, 0.0) * corr
    se_re = np.sqrt(var_re / nn)
    se_im = np.sqrt(var_im / nn)
    n1 = np.maximum(n, 1)
    md = d1 / n1
    vd = np.maximum(d2 / n1[:, None] - np.stack([md.real**2, md.imag**2], axis=-1), 0.0)
    vd = vd * (n1 / np.maximum(n1 - 1, 1))[:, None]
    se_d = np.sqrt(vd / n1[:, None])
    return EnsembleStats(np.asarray(times, dtype=float), mean, se_re, se_im, md, se_d, n, n_traj,
                         sum(p.aborted for p in parts))


def observable(stats: EnsembleStats, O) -> tuple[np.ndarray, np.ndarray]:
    """``Tr(O mean_rho1(t))`` and its standard error (real, imaginary parts propagated
    linearly and independently per entry)."""
    O = np.asarray(O, dtype=complex)
    Ot = O.T  # Tr(O rho) = sum_ij O_ji rho_ij
    val = np.einsum("ij,tij->t", Ot, stats.mean_rho1)
    var_re = np.einsum("ij,tij->t", Ot.real**2, stats.se_re**2) + np.einsum("ij,tij->t", Ot.imag**2, stats.se_im**2)
    var_im = np.einsum("ij,tij->t", Ot.imag**2, stats.se_re**2) + np.einsum("ij,tij->t", Ot.real**2, stats.se_im**2)
    return val, np.sqrt(var_re) + 1j * np.sqrt(var_im)


# --- checkpoints ------------------------------------------------------------


def _pairs(a):
    return [[float(z.real), float(z.imag)] for z in np.ravel(a)]


def save_checkpoint(path, parts, blocks, master_seed, time, block_size) -> None:
    """JSON lines: one header, then one record per trajectory and per block RNG state."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"kind": "header", "master_seed": master_seed, "time": time,
                             "block_size": block_size}) + "\n")
        for (b, size), p in zip(blocks, parts):
            fh.write(json.dumps({"kind": "rng", "block": b, "state": p.rng_state}) + "\n")
            d = p.final
            for c in range(size):
                fh.write(json.dumps({
                    "kind": "traj", "index": b * block_size + c, "block": b, "seed": [master_seed, b],
                    "time": time, "shape": list(d.Wa.shape[1:]),
                    "Wa": _pairs(d.Wa[c]), "Wb": _pairs(d.Wb[c]), "logw": _pairs(d.logw[c]),
                }) + "\n")


def load_checkpoint(path) -> dict:
    """Read a checkpoint back: returns header fields, per-block RNG states and a batched dyad."""
    header, rng_states, recs = None, {}, []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["kind"] == "header":
                header = rec
            elif rec["kind"] == "rng":
                rng_states[rec["block"]] = rec["state"]
            else:
                recs.append(rec)
    recs.sort(key=lambda r: r["index"])

    def arr(pairs, shape):
        a = np.array(pairs, dtype=float)
        return (a[:, 0] + 1j * a[:, 1]).reshape(shape)

    Wa = np.array([arr(r["Wa"], r["shape"]) for r in recs])
    Wb = np.array([arr(r["Wb"], r["shape"]) for r in recs])
    logw = np.array([arr(r["logw"], ())[()] for r in recs])
    return {**header, "rng_states": rng_states, "dyads": DyadState(Wa, Wb, logw),
            "indices": [r["index"] for r in recs]}
