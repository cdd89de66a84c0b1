"""Experiment configuration: parsing, validation and game construction.

Configs are JSON objects carrying ``"schema": "hcc/1"``. Every validation
error names the offending field path.
"""
from __future__ import annotations

import copy
import itertools
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any, Optional

import numpy as np

from .dynamics import HiddenGame
from .errors import ConfigError, HCCError
from .operators import OperatorBank, operator_from_spec
from .payoffs import payoff_from_spec

SCHEMA = "hcc/1"
FLOWS = ("gda", "transformed", "hgd_mod", "sgda")
_TOP_KEYS = {"schema", "name", "seed", "game", "flow", "init", "targets", "param_targets",
             "diagnostics", "outputs", "sweep", "description"}

DEFAULT_DIAGNOSTICS = {
    "lyapunov": True,
    "audit_tol": 1e-7,
    "constant_tol": 1e-5,
    "tol": 1e-3,
    "window": 10.0,
    "factor": 2.0,
    "plateau": 0.9,
    "fit_rate": False,
    "fit_interval": None,
}


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    game: dict
    flow: dict
    init: dict
    targets: list = field(default_factory=list)
    param_targets: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    sweep: Optional[dict] = None
    description: str = ""

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA}
        d.update(asdict(self))
        if d["sweep"] is None:
            del d["sweep"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def build_game(self) -> HiddenGame:
        return build_game(self.game)

    def replace(self, **changes) -> "ExperimentConfig":
        d = copy.deepcopy(self.to_dict())
        d.update(changes)
        return parse_config(d)


def _req(d, key, path):
    if key not in d:
        raise ConfigError("missing required field", f"{path}.{key}" if path else key)
    return d[key]


def _pos(value, path, integer=False):
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}", path) from None
    if integer and v != value:
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if not v > 0:
        raise ConfigError(f"must be positive, got {value!r}", path)
    return v


def _bank_spec(spec, path):
    """Normalize a bank spec to a list of operator specs."""
    if isinstance(spec, dict) and "op" in spec:
        count = _pos(_req(spec, "count", path), f"{path}.count", integer=True)
        return [spec["op"]] * count
    if isinstance(spec, list) and spec:
        return list(spec)
    raise ConfigError("expected a non-empty operator list or {op, count}", path)


def build_game(game: dict) -> HiddenGame:
    try:
        payoff_spec = dict(_req(game, "payoff", "game"))
        if "regularize" in game and game["regularize"] is not None:
            payoff_spec["regularize"] = game["regularize"]
        payoff = payoff_from_spec(payoff_spec)
    except ConfigError:
        raise
    except (HCCError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(str(exc), "game.payoff") from None
    banks = []
    for side in ("bank_f", "bank_g"):
        specs = _bank_spec(_req(game, side, "game"), f"game.{side}")
        ops = []
        for k, s in enumerate(specs):
            try:
                ops.append(operator_from_spec(s))
            except (HCCError, ValueError, TypeError) as exc:
                raise ConfigError(str(exc), f"game.{side}[{k}]") from None
        banks.append(OperatorBank(ops))
    try:
        return HiddenGame(payoff, banks[0], banks[1])
    except HCCError as exc:
        raise ConfigError(str(exc), "game") from None


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"expected {SCHEMA!r}, got {raw.get('schema')!r}", "schema")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", "")
    name = str(_req(raw, "name", ""))
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"expected an integer, got {seed!r}", "seed")
    game = copy.deepcopy(_req(raw, "game", ""))
    g = build_game(game)

    flow = dict(_req(raw, "flow", ""))
    kind = flow.get("kind")
    if kind not in FLOWS:
        raise ConfigError(f"expected one of {FLOWS}, got {kind!r}", "flow.kind")
    if kind == "sgda":
        flow["steps"] = _pos(_req(flow, "steps", "flow"), "flow.steps", integer=True)
        lr = float(_req(flow, "lr", "flow"))
        if lr < 0:
            raise ConfigError("must be non-negative", "flow.lr")
        flow["lr"] = lr
        flow["batch"] = _pos(flow.get("batch", 256), "flow.batch", integer=True)
        if g.payoff.name != "wgan_gaussian":
            raise ConfigError("sgda is available for the wgan_gaussian payoff", "flow.kind")
    else:
        flow["dt"] = _pos(flow.get("dt", 1e-3), "flow.dt")
        flow["t_end"] = _pos(_req(flow, "t_end", "flow"), "flow.t_end")
    if kind == "hgd_mod" and g.payoff.name != "bilinear":
        raise ConfigError("hgd_mod needs the 1x1 bilinear payoff", "flow.kind")
    flow["backend"] = flow.get("backend", "auto")
    if flow["backend"] not in ("auto", "jit", "numpy"):
        raise ConfigError(f"unknown backend {flow['backend']!r}", "flow.backend")

    init = dict(_req(raw, "init", ""))
    _validate_init(init, g)

    targets = []
    for k, t in enumerate(raw.get("targets", []) or []):
        p = [float(v) for v in _req(t, "p", f"targets[{k}]")]
        q = [float(v) for v in _req(t, "q", f"targets[{k}]")]
        if len(p) != g.payoff.dim_f or len(q) != g.payoff.dim_g:
            raise ConfigError(f"target dims must be {g.payoff.dim_f} and {g.payoff.dim_g}",
                              f"targets[{k}]")
        targets.append({"p": p, "q": q})
    param_targets = []
    for k, t in enumerate(raw.get("param_targets", []) or []):
        th = [float(v) for v in _req(t, "theta", f"param_targets[{k}]")]
        ph = [float(v) for v in _req(t, "phi", f"param_targets[{k}]")]
        if len(th) != g.N or len(ph) != g.M:
            raise ConfigError(f"parameter target dims must be {g.N} and {g.M}",
                              f"param_targets[{k}]")
        param_targets.append({"theta": th, "phi": ph})

    diagnostics = dict(DEFAULT_DIAGNOSTICS)
    extra = set(raw.get("diagnostics", {}) or {}) - set(DEFAULT_DIAGNOSTICS)
    if extra:
        raise ConfigError(f"unknown fields {sorted(extra)}", "diagnostics")
    diagnostics.update(raw.get("diagnostics", {}) or {})
    for key in ("tol", "window", "factor", "audit_tol", "constant_tol"):
        diagnostics[key] = _pos(diagnostics[key], f"diagnostics.{key}")

    outputs = dict(raw.get("outputs", {}) or {})
    outputs.setdefault("csv", f"{name}.csv")
    outputs.setdefault("summary", f"{name}.summary.json")
    outputs["record_every"] = _pos(outputs.get("record_every", 1), "outputs.record_every",
                                   integer=True)

    sweep = raw.get("sweep")
    if sweep is not None:
        sweep = _validate_sweep(dict(sweep), g)

    return ExperimentConfig(name, seed, game, flow, init, targets, param_targets, diagnostics,
                            outputs, sweep, str(raw.get("description", "")))


def _validate_init(init, g):
    sampler = init.get("sampler", "explicit")
    if sampler == "explicit":
        th = _req(init, "theta", "init")
        ph = _req(init, "phi", "init")
        if len(th) != g.N:
            raise ConfigError(f"expected {g.N} entries, got {len(th)}", "init.theta")
        if len(ph) != g.M:
            raise ConfigError(f"expected {g.M} entries, got {len(ph)}", "init.phi")
    elif sampler in ("uniform_box", "grid"):
        dim = g.N + g.M
        for key in ("lo", "hi"):
            v = _req(init, key, "init")
            if isinstance(v, list) and len(v) != dim:
                raise ConfigError(f"expected {dim} entries", f"init.{key}")
        if sampler == "grid":
            k = _req(init, "k", "init")
            ks = k if isinstance(k, list) else [k] * dim
            if len(ks) != dim:
                raise ConfigError(f"expected {dim} entries", "init.k")
            for i, kk in enumerate(ks):
                _pos(kk, f"init.k[{i}]", integer=True)
        else:
            _pos(init.get("count", 1), "init.count", integer=True)
    else:
        raise ConfigError(f"unknown sampler {sampler!r}", "init.sampler")
    init.setdefault("sampler", sampler)


def _validate_sweep(sweep, g):
    allowed = {"lambda", "init", "seed"}
    extra = set(sweep) - allowed
    if extra:
        raise ConfigError(f"unknown sweep axes {sorted(extra)}", "sweep")
    if not sweep:
        raise ConfigError("at least one sweep axis is required", "sweep")
    if "lambda" in sweep:
        lams = sweep["lambda"]
        if not isinstance(lams, list) or not lams:
            raise ConfigError("lambda axis must be a non-empty list", "sweep.lambda")
        for i, v in enumerate(lams):
            if float(v) < 0:
                raise ConfigError("must be non-negative", f"sweep.lambda[{i}]")
    if "seed" in sweep:
        seeds = sweep["seed"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seed axis must be a non-empty list", "sweep.seed")
    if "init" in sweep:
        init = dict(sweep["init"])
        _validate_init(init, g)
        sweep["init"] = init
    return sweep


def init_points(init: dict, N: int, M: int, seed: int):
    """Expand an init block into a list of (theta, phi) pairs."""
    sampler = init.get("sampler", "explicit")
    if sampler == "explicit":
        return [(np.asarray(init["theta"], dtype=float), np.asarray(init["phi"], dtype=float))]
    dim = N + M
    lo = np.broadcast_to(np.asarray(init["lo"], dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(init["hi"], dtype=float), (dim,))
    if sampler == "grid":
        k = init["k"]
        ks = k if isinstance(k, list) else [k] * dim
        axes = [np.linspace(lo[i], hi[i], int(ks[i])) if int(ks[i]) > 1 else np.array([lo[i]])
                for i in range(dim)]
        pts = [np.array(p) for p in itertools.product(*axes)]
    else:
        rng = np.random.default_rng(seed)
        pts = [rng.uniform(lo, hi) for _ in range(int(init.get("count", 1)))]
    return [(p[:N].copy(), p[N:].copy()) for p in pts]


def load_config(path_or_name: str) -> ExperimentConfig:
    """Parse a config file, or a built-in preset when no such file exists."""
    if os.path.exists(path_or_name):
        with open(path_or_name) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc}") from None
        return parse_config(raw)
    return parse_config(load_preset(path_or_name))


def preset_names() -> list[str]:
    root = resources.files("hcc") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    root = resources.files("hcc") / "presets"
    res = root / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"no config file or preset named {name!r}; presets: {preset_names()}")
    return json.loads(res.read_text())
