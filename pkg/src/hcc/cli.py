"""Command-line experiment runner.

    hcc simulate <config.json | preset> [--outdir DIR]
    hcc sweep <config.json | preset> [--jobs K] [--out table.csv] [--timing]
    hcc gan-solve <instance.json> [--out solution.json]
    hcc audit <trajectory.csv> --target p,q [--config CFG] [--window W] [--tol T]
    hcc presets
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import jsonschema
import numpy as np

from . import lyapunov as ly
from .config import ExperimentConfig, init_points, load_config, parse_config, preset_names
from .dynamics import (
    Trajectory,
    WganSampler,
    gda_flow,
    hgd_mod_flow,
    sgda_discrete,
    transformed_flow,
)
from .errors import ConfigError, HCCError, IntegrationError
from .gan_solutions import DiscreteGanInstance, nonrealizable_solve
from .operators import bank_paths, is_safe

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "name", "seed", "flow", "runs", "monotone_H", "constant_H",
                 "verdict", "fitted_rate", "final_r", "status"],
    "properties": {
        "schema": {"const": "hcc/1"},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "flow": {"type": "string"},
        "status": {"enum": ["ok", "error"]},
        "monotone_H": {"type": ["boolean", "null"]},
        "constant_H": {"type": ["boolean", "null"]},
        "verdict": {"type": ["string", "null"]},
        "fitted_rate": {"type": ["number", "null"]},
        "final_r": {"type": ["number", "null"]},
        "final_param_distance": {"type": ["number", "null"]},
        "runs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "init", "csv", "status", "error", "n_rows",
                             "final_f", "final_g", "final_r", "monotone_H", "constant_H",
                             "audit", "verdict", "rate", "safety"],
                "properties": {
                    "index": {"type": "integer"},
                    "status": {"enum": ["ok", "error"]},
                    "error": {"type": ["string", "null"]},
                    "n_rows": {"type": "integer"},
                    "csv": {"type": ["string", "null"]},
                    "final_r": {"type": ["number", "null"]},
                    "monotone_H": {"type": ["boolean", "null"]},
                    "constant_H": {"type": ["boolean", "null"]},
                    "audit": {"type": ["string", "null"]},
                    "verdict": {"type": ["string", "null"]},
                    "rate": {"type": ["object", "null"]},
                    "safety": {"type": ["string", "null"]},
                },
            },
        },
    },
}


def _clean(obj):
    """Replace non-finite floats with None and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path: str, text: str):
    """Write via a temporary file in the same directory and rename into place."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _seed(cfg: ExperimentConfig) -> int:
    env = os.environ.get("HCC_SEED")
    if env is None or env == "":
        return cfg.seed
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"HCC_SEED must be an integer, got {env!r}") from None


def _integrate(cfg: ExperimentConfig, game, theta0, phi0, seed: int) -> Trajectory:
    flow = cfg.flow
    rec = cfg.outputs["record_every"]
    backend = flow["backend"]
    kind = flow["kind"]
    if kind == "gda":
        return gda_flow(game, theta0, phi0, flow["t_end"], flow["dt"], rec, backend)
    if kind == "transformed":
        pf = bank_paths(game.bank_f, theta0)
        pg = bank_paths(game.bank_g, phi0)
        f0, g0 = game.outputs(theta0, phi0)
        return transformed_flow(game, pf, pg, f0, g0, flow["t_end"], flow["dt"], rec, backend)
    if kind == "hgd_mod":
        return hgd_mod_flow(game.bank_f[0], game.bank_g[0], game.payoff.p, game.payoff.q,
                            theta0, phi0, flow["t_end"], flow["dt"], rec, backend)
    sampler = WganSampler.from_game(game, flow["batch"])
    return sgda_discrete(game, sampler, theta0, phi0, flow["steps"], flow["lr"], seed, rec,
                         backend)


def run_one(cfg: ExperimentConfig, theta0, phi0, seed: int):
    """Integrate one initialization and compute its diagnostics.

    Returns (trajectory or None, summary dict). Integration failures keep the
    partial trajectory and record the error message.
    """
    game = cfg.build_game()
    diag = cfg.diagnostics
    run = {"init": {"theta": theta0, "phi": phi0}, "status": "ok", "error": None,
           "final_r": None, "monotone_H": None, "constant_H": None, "audit": None,
           "verdict": None, "rate": None, "safety": None, "final_param_distance": None}
    try:
        traj = _integrate(cfg, game, theta0, phi0, seed)
    except IntegrationError as exc:
        traj = exc.trajectory
        run["status"] = "error"
        run["error"] = f"{type(exc).__name__}: {exc}"
    except HCCError as exc:
        run["status"] = "error"
        run["error"] = f"{type(exc).__name__}: {exc}"
        traj = None

    if traj is not None and len(traj):
        run["final_f"] = traj.outputs_f[-1]
        run["final_g"] = traj.outputs_g[-1]
    else:
        run["final_f"] = run["final_g"] = None
    run["n_rows"] = 0 if traj is None else len(traj)

    if traj is not None and len(traj) and cfg.param_targets and traj.theta is not None:
        dists = [float(np.sqrt(((traj.theta[-1] - np.asarray(t["theta"])) ** 2).sum()
                               + ((traj.phi[-1] - np.asarray(t["phi"])) ** 2).sum()))
                 for t in cfg.param_targets]
        run["final_param_distance"] = min(dists)

    if traj is None or not len(traj) or not cfg.targets:
        return traj, run

    p, q = cfg.targets[0]["p"], cfg.targets[0]["q"]
    r = ly.distance_r(traj, p, q)
    run["final_r"] = float(r[-1])
    H = None
    if diag["lyapunov"] and cfg.flow["kind"] != "sgda":
        try:
            pf = bank_paths(game.bank_f, theta0)
            pg = bank_paths(game.bank_g, phi0)
            run["safety"] = is_safe(pf, pg, p, q).overall.value
            ctx = ly.LyapunovContext(pf, pg, p, q)
            H = ly.H_series(ctx, traj)
            rep = ly.audit_monotone_H(ctx, traj, diag["audit_tol"], diag["constant_tol"], H=H)
            run["monotone_H"] = rep.monotone
            run["constant_H"] = rep.constant
            run["audit"] = rep.to_text()
        except HCCError as exc:
            run["audit"] = f"unavailable={type(exc).__name__}: {exc}"
    traj = traj.with_diagnostics(r=r, H=H)

    sols = [(t["p"], t["q"]) for t in cfg.targets]
    if run["status"] == "ok":
        v = ly.detect_convergence(traj, sols, diag["tol"], diag["window"], diag["factor"],
                                  diag["plateau"])
        run["verdict"] = v.kind
    if diag["fit_rate"] and run["status"] == "ok":
        try:
            fit = ly.fit_rate(traj, p, q, diag["fit_interval"])
            run["rate"] = fit.to_dict()
        except HCCError as exc:
            run["rate"] = {"c0": None, "rate": None, "r_squared": None, "degenerate": True,
                           "note": str(exc)}
    return traj, run


def _csv_path(base: str, index: int, count: int) -> str:
    if count == 1:
        return base
    stem, ext = os.path.splitext(base)
    return f"{stem}_{index:03d}{ext or '.csv'}"


def _aggregate(values):
    vals = [v for v in values if v is not None]
    return vals


def simulate(cfg: ExperimentConfig, outdir: Optional[str] = None, write: bool = True) -> dict:
    seed = _seed(cfg)
    game = cfg.build_game()
    points = init_points(cfg.init, game.N, game.M, seed)
    runs = []
    csv_base = cfg.outputs["csv"]
    if outdir is not None and not os.path.isabs(csv_base):
        csv_base = os.path.join(outdir, csv_base)
    for k, (th, ph) in enumerate(points):
        traj, run = run_one(cfg, th, ph, seed)
        path = _csv_path(csv_base, k, len(points))
        if write and traj is not None:
            atomic_write(path, traj.to_csv())
        run["csv"] = os.path.basename(path) if traj is not None else None
        run["index"] = k
        runs.append(run)

    mono = _aggregate(r["monotone_H"] for r in runs)
    const = _aggregate(r["constant_H"] for r in runs)
    verdicts = _aggregate(r["verdict"] for r in runs)
    rates = _aggregate((r["rate"] or {}).get("rate") for r in runs)
    finals = _aggregate(r["final_r"] for r in runs)
    pdist = _aggregate(r["final_param_distance"] for r in runs)
    summary = {
        "schema": "hcc/1",
        "name": cfg.name,
        "seed": seed,
        "flow": cfg.flow["kind"],
        "status": "ok" if all(r["status"] == "ok" for r in runs) else "error",
        "monotone_H": all(mono) if mono else None,
        "constant_H": all(const) if const else None,
        "verdict": (verdicts[0] if len(set(verdicts)) == 1 else "Mixed") if verdicts else None,
        "fitted_rate": rates[0] if len(rates) == 1 else (min(rates) if rates else None),
        "final_r": max(finals) if finals else None,
        "final_param_distance": max(pdist) if pdist else None,
        "runs": runs,
    }
    summary = _clean(summary)
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    if write:
        spath = cfg.outputs["summary"]
        if outdir is not None and not os.path.isabs(spath):
            spath = os.path.join(outdir, spath)
        atomic_write(spath, dumps(summary))
    return summary


# ---------------------------------------------------------------------------
# sweeps

SWEEP_FIELDS = ["row", "lambda", "seed", "init", "status", "verdict", "fitted_rate", "final_r",
                "wall_time", "message"]


def sweep_rows(cfg: ExperimentConfig) -> list[dict]:
    if not cfg.sweep:
        raise ConfigError("config has no sweep block", "sweep")
    axes = cfg.sweep
    lams = axes.get("lambda", [None])
    seeds = axes.get("seed", [None])
    game = cfg.build_game()
    inits = (init_points(axes["init"], game.N, game.M, cfg.seed) if "init" in axes
             else [None])
    rows = []
    for lam in lams:
        for sd in seeds:
            for ini in inits:
                rows.append({"lambda": lam, "seed": sd,
                             "init": None if ini is None else
                             {"theta": ini[0].tolist(), "phi": ini[1].tolist()}})
    return rows


def _row_config(cfg: ExperimentConfig, row: dict) -> ExperimentConfig:
    d = copy.deepcopy(cfg.to_dict())
    d.pop("sweep", None)
    if row["lambda"] is not None:
        reg = dict(d["game"].get("regularize") or {})
        reg["lambda"] = float(row["lambda"])
        d["game"]["regularize"] = reg
    if row["seed"] is not None:
        d["seed"] = int(row["seed"])
    if row["init"] is not None:
        d["init"] = {"sampler": "explicit", **row["init"]}
    return parse_config(d)


def _run_row(args):
    cfg_dict, row, index = args
    t0 = time.perf_counter()
    out = {"row": index, "lambda": row["lambda"], "seed": row["seed"],
           "init": None if row["init"] is None else json.dumps(row["init"], sort_keys=True)}
    try:
        cfg = _row_config(parse_config(cfg_dict), row)
        seed = cfg.seed if row["seed"] is not None else _seed(cfg)
        th, ph = init_points(cfg.init, *_dims(cfg), seed)[0]
        _, run = run_one(cfg, th, ph, seed)
        if run["status"] != "ok":
            raise HCCError(run["error"])
        out.update(status="ok", verdict=run["verdict"],
                   fitted_rate=(run["rate"] or {}).get("rate"), final_r=run["final_r"],
                   message="")
    except Exception as exc:  # one failing row must not take down the sweep
        out.update(status="FAILED", verdict=None, fitted_rate=None, final_r=None,
                   message=f"{type(exc).__name__}: {exc}")
    out["wall_time"] = time.perf_counter() - t0
    return out


def _dims(cfg):
    g = cfg.build_game()
    return g.N, g.M


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, timing: bool = False):
    rows = sweep_rows(cfg)
    tasks = [(cfg.to_dict(), row, i) for i, row in enumerate(rows)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_row, tasks))
    else:
        results = [_run_row(t) for t in tasks]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    w.writeheader()
    for res in results:
        res = dict(res)
        if not timing:
            res["wall_time"] = None
        w.writerow({k: _cell(res.get(k)) for k in SWEEP_FIELDS})
    return buf.getvalue(), results


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


# ---------------------------------------------------------------------------
# entry point

def _parse_target(text: str, n: int, m: int):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse target {text!r}", "--target") from None
    if len(vals) != n + m:
        raise ConfigError(f"expected {n + m} comma-separated values (p then q), got {len(vals)}",
                          "--target")
    return vals[:n], vals[n:]


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    summary = simulate(cfg, args.outdir)
    print(f"{cfg.name}: status={summary['status']} verdict={summary['verdict']} "
          f"monotone_H={summary['monotone_H']} constant_H={summary['constant_H']} "
          f"final_r={summary['final_r']}")
    return 0 if summary["status"] == "ok" else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    text, results = run_sweep(cfg, args.jobs, args.timing)
    out = args.out or f"{cfg.name}.sweep.csv"
    if args.outdir and not os.path.isabs(out):
        out = os.path.join(args.outdir, out)
    atomic_write(out, text)
    failed = sum(r["status"] != "ok" for r in results)
    print(f"{cfg.name}: {len(results)} rows, {failed} failed -> {out}")
    return 1 if failed else 0


def cmd_gan_solve(args) -> int:
    with open(args.instance) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    try:
        inst = DiscreteGanInstance.from_dict(raw)
    except KeyError as exc:
        raise ConfigError("missing required field", str(exc.args[0])) from None
    sol = nonrealizable_solve(inst)
    text = dumps(sol.to_dict())
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_audit(args) -> int:
    traj = Trajectory.from_csv(args.trajectory)
    n, m = traj.outputs_f.shape[1], traj.outputs_g.shape[1]
    p, q = _parse_target(args.target, n, m)
    r = ly.distance_r(traj, p, q)
    lines = [f"rows={len(traj)}", f"final_r={float(r[-1])!r}", f"max_r={float(r.max())!r}"]
    if args.config:
        cfg = load_config(args.config)
        game = cfg.build_game()
        if traj.theta is None:
            raise ConfigError("trajectory has no parameter columns", "trajectory")
        ctx = ly.LyapunovContext.from_game(game, traj.theta[0], traj.phi[0], p, q)
        lines.append(ly.audit_monotone_H(ctx, traj).to_text())
    elif traj.H is not None:
        rep = ly.audit_monotone_H(None, traj, H=traj.H)
        lines.append(rep.to_text())
    verdict = ly.detect_convergence(traj.with_diagnostics(r=r), [(p, q)], args.tol, args.window)
    lines.append(f"verdict={verdict.kind}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hcc", description="Hidden convex-concave game experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one experiment config or preset")
    s.add_argument("config")
    s.add_argument("--outdir", default=None, help="directory for relative output paths")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run the cross product of a config's sweep axes")
    s.add_argument("config")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", default=None, help="summary table path")
    s.add_argument("--outdir", default=None)
    s.add_argument("--timing", action="store_true",
                   help="fill the wall_time column (makes the table run-dependent)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gan-solve", help="solve a discrete GAN instance")
    s.add_argument("instance")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_gan_solve)

    s = sub.add_parser("audit", help="diagnose a trajectory CSV against a target")
    s.add_argument("trajectory")
    s.add_argument("--target", required=True, help="comma-separated p then q")
    s.add_argument("--config", default=None, help="config used to rebuild H")
    s.add_argument("--window", type=float, default=10.0)
    s.add_argument("--tol", type=float, default=1e-3)
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("presets", help="list built-in presets")
    s.set_defaults(func=lambda a: print("\n".join(preset_names())) or 0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HCCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
