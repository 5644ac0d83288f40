"""Command-line front end: ``stochmf <mode> --config PATH [--seed N] [--out PATH]``.

Exit codes
----------
0 success, 1 unexpected library error, 2 configuration error,
3 malformed or complex interaction tensor, 4 Fock dimension guard,
5 rank loss, 6 near-singular overlap, 7 convergence failure,
8 positivity loss, 9 too many aborted trajectories, 10 validation failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import platform
import sys
from dataclasses import replace

import numba
import numpy as np
import scipy

from . import __version__, ensemble, fock
from .config import MODES, RunConfig, build_model, load_config, serialize
from .errors import ConfigError, StochMFError, ValidationFailed
from .etdhf import CoarseParams, MixedDensity, coarse_step_stochastic
from .invariants import run_all
from .meanfield import tdhf_path
from .noise import decompose, reconstruct
from .sse import SseParams

log = logging.getLogger("stochmf")


def versions() -> str:
    return (f"stochmf={__version__} numpy={np.__version__} scipy={scipy.__version__} "
            f"numba={numba.__version__} python={platform.python_version()}")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def echo(cfg: RunConfig) -> str:
    """Config echo for headers; the output path is left out so reruns compare equal."""
    return serialize(replace(cfg, out=None))


class ResultWriter:
    """Comma-separated output with a self-describing ``#`` header."""

    def __init__(self, fh, cfg: RunConfig, columns: list[str]):
        self.fh = fh
        fh.write("# stochmf results\n")
        fh.write(f"# mode: {cfg.mode}\n")
        fh.write(f"# seed: {cfg.seed}\n")
        fh.write(f"# versions: {versions()}\n")
        fh.write(f"# config: {echo(cfg)}\n")
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(columns)
        self.width = len(columns)

    def row(self, values) -> None:
        self.writer.writerow([_fmt(v) for v in values])
        self.fh.flush()

    def failed(self, exc: BaseException, code: int) -> None:
        self.writer.writerow(["FAILED", code, type(exc).__name__, str(exc)])
        self.fh.flush()


def rho_columns(M: int) -> list[str]:
    cols = ["time"]
    cols += [f"rho_{i}_{j}_{p}" for i in range(M) for j in range(M) for p in ("re", "im")]
    cols += [f"se_{i}_{j}_{p}" for i in range(M) for j in range(M) for p in ("re", "im")]
    cols += ["detf_re", "detf_im", "detf_se_re", "detf_se_im"]
    return cols


def observable_columns(cfg: RunConfig) -> list[str]:
    return [c for o in cfg.observables for c in (o.name, f"{o.name}_se")]


def _row(t, rho, se_re, se_im, detf, detf_se, cfg: RunConfig):
    M = rho.shape[0]
    vals = [t]
    vals += [x for z in rho.ravel() for x in (z.real, z.imag)]
    vals += [x for pair in zip(se_re.ravel(), se_im.ravel()) for x in pair]
    vals += [detf.real, detf.imag, detf_se[0], detf_se[1]]
    for o in cfg.observables:
        d = np.asarray(o.diag, dtype=float)
        if d.shape != (M,):
            raise ConfigError(f"config.observables: {o.name} has {len(d)} entries, model has M = {M}")
        vals += [float(np.sum(d * np.diag(rho).real)), float(np.sqrt(np.sum(d**2 * np.diag(se_re) ** 2)))]
    return vals


def output_times(cfg: RunConfig) -> np.ndarray:
    n_steps = int(round(cfg.horizon / cfg.dt))
    idx = list(range(0, n_steps + 1, cfg.output_every))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return np.array(idx) * cfg.dt


def initial_slater(cfg: RunConfig, model) -> np.ndarray:
    occ = cfg.initial.get("occupied")
    if occ is None:
        raise ConfigError("config.initial.occupied: required for this mode")
    if len(occ) != model.A or max(occ) >= model.M or min(occ) < 0:
        raise ConfigError(f"config.initial.occupied: need {model.A} distinct modes in [0, {model.M})")
    W = np.zeros((model.M, model.A), dtype=complex)
    W[occ, np.arange(model.A)] = 1.0
    return W


def initial_density(cfg: RunConfig, model) -> np.ndarray:
    if "occupied" in cfg.initial:
        W = initial_slater(cfg, model)
        return W @ W.conj().T
    n = np.asarray(cfg.initial["occupations"], dtype=float)
    if n.shape != (model.M,):
        raise ConfigError(f"config.initial.occupations: need {model.M} entries")
    if abs(n.sum() - model.A) > 1e-8:
        raise ConfigError(f"config.initial.occupations: sum {n.sum()} differs from A = {model.A}")
    return np.diag(n).astype(complex)


# --- modes -----------------------------------------------------------------


def _deterministic_rows(cfg, times, rhos):
    M = rhos[0].shape[0]
    zero = np.zeros((M, M))
    for t, rho in zip(times, rhos):
        yield _row(t, rho, zero, zero, 1.0 + 0j, (0.0, 0.0), cfg)


def run_exact(cfg, model):
    basis = fock.sector(model.M, model.A)
    H = fock.build_hamiltonian(model, basis)
    psi0 = fock.embed_slater(initial_slater(cfg, model), basis)
    times = output_times(cfg)
    rhos = [fock.one_body_density(psi, psi, basis) for psi in fock.exact_path(psi0, H, times, model.hbar)]
    yield from _deterministic_rows(cfg, times, rhos)


def run_tdhf(cfg, model):
    times = output_times(cfg)
    yield from _deterministic_rows(cfg, times, tdhf_path(model, initial_density(cfg, model), times, cfg.dt))


def run_sse(cfg, model):
    params = SseParams(dt=cfg.dt, scheme=cfg.scheme, drift=cfg.drift, stabilize_every=cfg.stabilize_every,
                       seed=cfg.seed)
    stats = ensemble.run(model, initial_slater(cfg, model), params, cfg.n_traj, cfg.horizon,
                         output_every=cfg.output_every, dec=decompose(model, cfg.eps),
                         block_size=cfg.block_size, checkpoint=cfg.checkpoint)
    for k, t in enumerate(stats.times):
        yield _row(t, stats.mean_rho1[k], stats.se_re[k], stats.se_im[k], stats.mean_detf[k],
                   stats.se_detf[k], cfg)


def run_etdhf(cfg, model, diag_rows: list):
    c = cfg.coarse
    cp = CoarseParams(c.Dt, c.N, c.policy, c.mean_field, c.mf_substeps, c.tau_coll, c.tau_free)
    dec = decompose(model, cfg.eps)
    rho = MixedDensity(initial_density(cfg, model), model.A)
    M = model.M
    zero = np.zeros((M, M))
    yield _row(0.0, rho.rho1, zero, zero, 1.0 + 0j, (0.0, 0.0), cfg)
    for i in range(c.n_intervals):
        rho, d = coarse_step_stochastic(model, rho, cp, cfg.n_traj, dec, cfg.seed, i * c.Dt, i)
        diag_rows.append([i, d["t0"], d["tf"], d["correction_norm"], float(d["correction_se"].max()),
                          d["clip_excess"], d["trace_deficit"], d["jumps_per_replica"]])
        se = d["correction_se"]
        yield _row(d["tf"], rho.rho1, se, se, 1.0 + 0j, (0.0, 0.0), cfg)


DIAG_COLUMNS = ["interval", "t0", "tf", "correction_norm", "correction_se_max", "clip_excess",
                "trace_deficit", "jumps_per_replica"]


def run_validate(cfg, model, fh) -> None:
    checks = run_all(model, cfg.seed, cfg.eps)
    w = csv.writer(fh, lineterminator="\n")
    fh.write(f"# versions: {versions()}\n# config: {echo(cfg)}\n")
    w.writerow(["check", "value", "tol", "ok"])
    for c in checks:
        w.writerow([c.name, _fmt(c.value), _fmt(c.tol), "pass" if c.ok else "FAIL"])
    failed = [c.name for c in checks if not c.ok]
    if failed:
        raise ValidationFailed(f"failed checks: {', '.join(failed)}")


def run_decompose(cfg, model, fh) -> None:
    dec = decompose(model, cfg.eps)
    out = {"config": json.loads(echo(cfg)), "versions": versions(), "M": model.M, "S": dec.S,
           "reconstruction_error": float(np.max(np.abs(model.V - reconstruct(dec)))), **dec.to_dict()}
    json.dump(out, fh, indent=1, sort_keys=True)
    fh.write("\n")


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochmf", description="Stochastic mean-field dynamics of lattice fermions.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output path (overrides the config; default stdout)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


@contextlib.contextmanager
def _open_out(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def run(cfg: RunConfig) -> int:
    """Execute one configured run; returns the process exit code."""
    with _open_out(cfg.out) as fh:
        writer = None
        try:
            model = build_model(cfg)
            if cfg.mode == "validate":
                run_validate(cfg, model, fh)
                return 0
            if cfg.mode == "decompose":
                run_decompose(cfg, model, fh)
                return 0
            writer = ResultWriter(fh, cfg, rho_columns(model.M) + observable_columns(cfg))
            diag_rows: list = []
            runners = {"exact": run_exact, "tdhf": run_tdhf, "sse": run_sse,
                       "etdhf": lambda c, m: run_etdhf(c, m, diag_rows)}
            for r in runners[cfg.mode](cfg, model):
                writer.row(r)
            if cfg.mode == "etdhf" and cfg.out is not None:
                with open(cfg.out + ".diag.csv", "w", newline="") as dh:
                    w = csv.writer(dh, lineterminator="\n")
                    w.writerow(DIAG_COLUMNS)
                    w.writerows([[_fmt(v) for v in r] for r in diag_rows])
            return 0
        except StochMFError as exc:
            log.error("%s: %s", type(exc).__name__, exc)
            if writer is None:
                csv.writer(fh, lineterminator="\n").writerow(["FAILED", exc.exit_code, type(exc).__name__, str(exc)])
            else:
                writer.failed(exc, exc.exit_code)
            return exc.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.mode)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
