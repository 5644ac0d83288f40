"""Run configuration: JSON ingestion, validation and canonical serialization.

Unknown keys are rejected everywhere, and every error names the offending
field as a dotted path (``coarse.N``).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelSpec, hubbard_chain, load_model, random_model

MODES = ("exact", "tdhf", "sse", "etdhf", "validate", "decompose")


@dataclass(frozen=True)
class CoarseConfig:
    Dt: float = 0.5
    N: int = 10
    n_intervals: int = 1
    policy: str = "stratified"
    mean_field: str = "shared"
    mf_substeps: int = 1
    tau_coll: float | None = None
    tau_free: float | None = None


@dataclass(frozen=True)
class Observable:
    name: str
    diag: tuple[float, ...]


@dataclass(frozen=True)
class RunConfig:
    mode: str
    model: dict
    initial: dict = field(default_factory=dict)
    dt: float = 1e-3
    horizon: float = 1.0
    n_traj: int = 1000
    seed: int = 0
    output_every: int = 1
    eps: float = 1e-12
    scheme: str = "differential"
    drift: str = "midpoint"
    stabilize_every: int = 10
    block_size: int = 1000
    checkpoint: str | None = None
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    observables: tuple[Observable, ...] = ()
    out: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["observables"] = [{"name": o.name, "diag": list(o.diag)} for o in self.observables]
        return d


_MODEL_KEYS = {
    "hubbard": {"builtin", "L", "t_hop", "U", "A", "hbar"},
    "random": {"builtin", "M", "A", "seed", "coupling_scale", "hbar"},
}
_INITIAL_KEYS = {"occupied", "occupations"}


def _fail(path: str, msg: str):
    raise ConfigError(f"config.{path}: {msg}")


def _reject_unknown(d: dict, allowed, path: str) -> None:
    if not isinstance(d, dict):
        _fail(path, "expected an object")
    for key in d:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _number(d, key, path, kind=float, positive=False, nonneg=False):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
        _fail(path + key, f"expected {kind.__name__}, got {v!r}")
    if positive and not v > 0:
        _fail(path + key, f"must be positive, got {v!r}")
    if nonneg and v < 0:
        _fail(path + key, f"must be non-negative, got {v!r}")
    return kind(v)


def _choice(d, key, path, options):
    if d[key] not in options:
        _fail(path + key, f"must be one of {list(options)}, got {d[key]!r}")
    return d[key]


def _model_section(m) -> dict:
    _reject_unknown(m, {"builtin", "path", "L", "t_hop", "U", "A", "hbar", "M", "seed", "coupling_scale"}, "model")
    if ("builtin" in m) == ("path" in m):
        _fail("model", "give exactly one of 'builtin' or 'path'")
    if "path" in m:
        _reject_unknown(m, {"path"}, "model")
        if not isinstance(m["path"], str):
            _fail("model.path", "expected a string")
        return dict(m)
    kind = m["builtin"]
    if kind not in _MODEL_KEYS:
        _fail("model.builtin", f"must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
    _reject_unknown(m, _MODEL_KEYS[kind], "model")
    out = {"builtin": kind}

    def opt(key, default, typ=float, **kw):
        out[key] = _number({key: m.get(key, default)}, key, "model.", typ, **kw)

    if kind == "hubbard":
        opt("L", 2, int, positive=True)
        opt("t_hop", 1.0)
        opt("U", 1.0)
        opt("A", out["L"], int, positive=True)
    else:
        for key in ("M", "A"):
            if key not in m:
                _fail(f"model.{key}", "required for builtin 'random'")
            opt(key, None, int, positive=True)
        opt("seed", 0, int, nonneg=True)
        opt("coupling_scale", 1.0)
    opt("hbar", 1.0, positive=True)
    return out


def _initial_section(d) -> dict:
    _reject_unknown(d, _INITIAL_KEYS, "initial")
    if len(d) > 1:
        _fail("initial", "give at most one of 'occupied' or 'occupations'")
    if "occupied" in d:
        occ = d["occupied"]
        if not isinstance(occ, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in occ):
            _fail("initial.occupied", "expected a list of mode indices")
        if len(set(occ)) != len(occ):
            _fail("initial.occupied", "mode indices must be distinct")
        return {"occupied": sorted(occ)}
    if "occupations" in d:
        n = d["occupations"]
        if not isinstance(n, list) or not all(isinstance(x, (int, float)) and 0 <= x <= 1 for x in n):
            _fail("initial.occupations", "expected a list of numbers in [0, 1]")
        return {"occupations": [float(x) for x in n]}
    return {}


def parse_config(data: dict, mode: str | None = None) -> RunConfig:
    """Validate a decoded JSON object. ``mode`` (from the command line) wins over
    a missing ``mode`` key and must agree with a present one."""
    top = {f.name for f in fields(RunConfig)}
    _reject_unknown(data, top, "")
    cfg_mode = data.get("mode", mode)
    if mode is not None and cfg_mode != mode:
        _fail("mode", f"config says {cfg_mode!r} but the command line asks for {mode!r}")
    if cfg_mode not in MODES:
        _fail("mode", f"must be one of {list(MODES)}, got {cfg_mode!r}")
    if "model" not in data:
        _fail("model", "required")
    kw: dict = {"mode": cfg_mode, "model": _model_section(data["model"])}
    kw["initial"] = _initial_section(data.get("initial", {}))
    for key in ("dt", "horizon", "eps"):
        if key in data:
            kw[key] = _number(data, key, "", positive=key != "horizon", nonneg=True)
    for key in ("n_traj", "output_every", "block_size"):
        if key in data:
            kw[key] = _number(data, key, "", int, positive=True)
    for key in ("seed", "stabilize_every"):
        if key in data:
            kw[key] = _number(data, key, "", int, nonneg=True)
    if "n_traj" in kw and kw["n_traj"] < 2:
        _fail("n_traj", "must be >= 2")
    if "scheme" in data:
        kw["scheme"] = _choice(data, "scheme", "", ("differential", "exponential"))
    if "drift" in data:
        kw["drift"] = _choice(data, "drift", "", ("midpoint", "euler"))
    for key in ("checkpoint", "out"):
        if data.get(key) is not None:
            if not isinstance(data[key], str):
                _fail(key, "expected a string")
            kw[key] = data[key]
    if "coarse" in data:
        c = data["coarse"]
        _reject_unknown(c, {f.name for f in fields(CoarseConfig)}, "coarse")
        ck = {}
        if "Dt" in c:
            ck["Dt"] = _number(c, "Dt", "coarse.", positive=True)
        for key in ("N", "mf_substeps"):
            if key in c:
                ck[key] = _number(c, key, "coarse.", int, positive=True)
        if "n_intervals" in c:
            ck["n_intervals"] = _number(c, "n_intervals", "coarse.", int, nonneg=True)
        if "policy" in c:
            ck["policy"] = _choice(c, "policy", "coarse.", ("stratified", "sampled"))
        if "mean_field" in c:
            ck["mean_field"] = _choice(c, "mean_field", "coarse.", ("shared", "per_replica"))
        for key in ("tau_coll", "tau_free"):
            if c.get(key) is not None:
                ck[key] = _number(c, key, "coarse.", positive=True)
        kw["coarse"] = CoarseConfig(**ck)
    if "observables" in data:
        obs = data["observables"]
        if not isinstance(obs, list):
            _fail("observables", "expected a list")
        parsed = []
        for i, o in enumerate(obs):
            _reject_unknown(o, {"name", "diag"}, f"observables[{i}]")
            if not isinstance(o.get("name"), str) or not o["name"].isidentifier():
                _fail(f"observables[{i}].name", "expected an identifier")
            if not isinstance(o.get("diag"), list) or not all(isinstance(x, (int, float)) for x in o["diag"]):
                _fail(f"observables[{i}].diag", "expected a list of numbers")
            parsed.append(Observable(o["name"], tuple(float(x) for x in o["diag"])))
        kw["observables"] = tuple(parsed)
    cfg = RunConfig(**kw)
    _check_mode(cfg)
    return cfg


def _check_mode(cfg: RunConfig) -> None:
    if cfg.mode in ("exact", "sse") and "occupied" not in cfg.initial:
        _fail("initial.occupied", f"required for mode {cfg.mode!r}")
    if cfg.mode in ("tdhf", "etdhf") and not cfg.initial:
        _fail("initial", f"required for mode {cfg.mode!r}")


def load_config(path, mode: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(data, mode)


def serialize(cfg: RunConfig) -> str:
    """Canonical JSON form: sorted keys, no whitespace."""
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))


def build_model(cfg: RunConfig) -> ModelSpec:
    m = cfg.model
    if "path" in m:
        return load_model(m["path"])
    if m["builtin"] == "hubbard":
        return hubbard_chain(m["L"], m["t_hop"], m["U"], m["A"], m["hbar"])
    return random_model(m["M"], m["A"], m["seed"], m["coupling_scale"], m["hbar"])

