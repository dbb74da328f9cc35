"""
Batch front-end.

    fracfk <subcommand> --config run.json [--seed N] [--threads N] [--out DIR] [--section.key VALUE ...]

The config is a JSON object with sections model, terminal, solver, mollifier,
field and query plus the leaves seed, output_dir and threads. Every leaf can
be overridden with a dotted flag; values are parsed as JSON when possible.
Each run writes summary.json and its CSV files into the output directory.

Exit codes: 0 success, 1 runtime error, 2 invalid config, 64 usage error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
from typing import Callable, Dict, List

import numpy as np

from . import analysis, field_sim, fk_solver, pde_xval
from .errors import FracFKError, InvalidParams
from .field_sim import MollifierParams
from .fk_solver import SolverConfig
from .model import ModelParams, validate_params
from .paths import BrownianPath, TerminalSpec, TimeGrid, simulate_paths

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID, EXIT_USAGE = 0, 1, 2, 64

DEFAULTS = {
    "model": {"d": 1, "h0": 0.75, "h": [0.75], "beta": [1.0], "T": 1.0, "scale": 1.0},
    "terminal": {"kind": "gaussian_bump", "center": 0.0, "width": 1.0, "amplitude": 1.0},
    "solver": {"n_paths": 10000, "n_steps": 64, "z_mode": "pathwise", "fd_step": None,
               "antithetic": False, "shard_size": 1024},
    "mollifier": {"eps": 0.05, "eta": 0.05},
    "field": {"count": 1, "n_time": 64, "n_space": 281, "half_width": 7.0},
    "query": {"t": 0.0, "s": None, "x": 0.0, "target": "y", "lags": None,
              "lambdas": [0.5, 1.0, 2.0], "partition_sizes": [32, 64, 128],
              "n_inner": 200, "step_counts": [8, 16, 32], "method": "double_mc",
              "integrand": {"kind": "one"}, "n_samples": 2000,
              "pde_n": 200, "n_inner_paths": 10000, "scheme": "crank_nicolson"},
    "seed": 20240601,
    "output_dir": "fracfk_out",
    "threads": None,
}

SUBCOMMANDS = ("validate", "sample-field", "estimate-y", "estimate-z", "structure", "regularity",
               "residual", "isometry", "alpha-identity", "tail-probe", "xval-pde")


class UsageError(Exception):
    pass


class ConfigError(Exception):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- config

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_overrides(tokens: List[str]) -> Dict[str, object]:
    """['--model.h0', '0.8', '--query.x=1'] -> {'model.h0': 0.8, 'query.x': 1}."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"missing value for {tok}")
            i += 1
            val = tokens[i]
        if "." not in key:
            raise UsageError(f"unknown option --{key}")
        out[key] = _parse_value(val)
        i += 1
    return out


def apply_overrides(cfg: dict, overrides: Dict[str, object]) -> dict:
    cfg = copy.deepcopy(cfg)
    for dotted, val in overrides.items():
        parts = dotted.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError([f"override {dotted!r} does not name a config section"])
            node = node[p]
        node[parts[-1]] = val
    return cfg


def load_config(path, overrides=None) -> dict:
    """Defaults, then the file (if any), then dotted overrides."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"])
        if not isinstance(raw, dict):
            raise ConfigError(["config must be a JSON object"])
    cfg = _merge(DEFAULTS, raw)
    return apply_overrides(cfg, overrides or {})


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


class RunConfig:
    """Typed view of a resolved config; validates the model on construction."""

    def __init__(self, cfg: dict):
        self.raw = cfg
        m = cfg["model"]
        try:
            self.params = ModelParams.build(int(m["d"]), float(m["h0"]), m["h"], m["beta"],
                                            float(m["T"]), float(m.get("scale", 1.0)))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError([f"model section: {exc}"])
        report = validate_params(self.params)
        if not report.ok:
            raise ConfigError(report.violations)
        d = self.params.d
        try:
            self.terminal = TerminalSpec.from_dict(cfg["terminal"], d)
            s = cfg["solver"]
            self.grid = TimeGrid.uniform(0.0, self.params.T, int(s["n_steps"]))
            self.threads = cfg.get("threads")
            self.solver = SolverConfig(int(s["n_paths"]), self.grid, s["z_mode"], s.get("fd_step"),
                                       bool(s.get("antithetic", False)), self.threads,
                                       int(s.get("shard_size", 1024)))
            mo = cfg["mollifier"]
            self.moll = MollifierParams(float(mo["eps"]), float(mo["eta"]))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError([f"invalid config: {exc}"])
        self.field = cfg["field"]
        self.query = cfg["query"]
        self.seed = int(cfg["seed"])
        self.out = cfg["output_dir"]

    def x(self):
        return np.broadcast_to(np.asarray(self.query["x"], dtype=float), (self.params.d,)).copy()

    def solver_with(self, grid: TimeGrid) -> SolverConfig:
        s = self.solver
        return SolverConfig(s.n_paths, grid, s.z_mode, s.fd_step, s.antithetic, s.threads, s.shard_size)

    def space_grid(self):
        f = self.field
        return field_sim.uniform_space_grid(self.params.d, float(f["half_width"]), int(f["n_space"]))


# ---------------------------------------------------------------- helpers

def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _default_lags(target: str):
    k = np.arange(6, 2, -1) if target == "y" else np.arange(5, 1, -1)
    return [float(v) for v in 2.0 ** -k]


def _est(e) -> dict:
    return {"mean": fk_solver._jsonable(e.mean), "std_error": fk_solver._jsonable(e.std_error), "n": e.n}


# ---------------------------------------------------------------- subcommands

def cmd_validate(rc: RunConfig, out: str, files: list) -> dict:
    return {"valid": True, "alpha": rc.params.alpha(), "params_digest": rc.params.digest()}


def cmd_sample_field(rc: RunConfig, out: str, files: list) -> dict:
    f = rc.field
    tg = TimeGrid.uniform(0.0, rc.params.T, int(f["n_time"]))
    fields = field_sim.sample_field(rc.params, tg, rc.space_grid(), int(f["count"]), rc.seed)
    stats = []
    for r, fs in enumerate(fields):
        name = f"field_{r}.csv"
        field_sim.write_field_csv(fs, os.path.join(out, name))
        files.append(name)
        stats.append({"realization": r, "max_abs": float(np.max(np.abs(fs.values))),
                      "rms": float(np.sqrt(np.mean(fs.values ** 2)))})
    return {"shape": list(fields[0].values.shape), "realizations": stats}


def _estimate(rc: RunConfig, op: str):
    t = float(rc.query["t"])
    fn = fk_solver.estimate_u if op == "y" else fk_solver.estimate_z
    e = fn(rc.params, rc.terminal, t, rc.x(), rc.solver, rc.seed)
    return e.to_record("estimate_" + op, rc.params.digest(), t=t, x=rc.x())


def cmd_estimate_y(rc, out, files):
    return _estimate(rc, "y")


def cmd_estimate_z(rc, out, files):
    return _estimate(rc, "z")


def _series(rc: RunConfig, target: str, out: str, files: list) -> dict:
    lags = rc.query.get("lags") or _default_lags(target)
    t0 = float(rc.query["t"])
    series = analysis.structure_series(rc.params, rc.terminal, target, lags, rc.solver, rc.seed, t0, rc.x())
    name = f"structure_{target}.csv"
    _write_csv(os.path.join(out, name), ["lag", "moment", "std_error", "n"], series.rows())
    files.append(name)
    res = {"target": target, "lags": list(series.lags),
           "moments": [_est(m) for m in series.moments]}
    try:
        fit = analysis.holder_fit(series)
        res.update(exponent=fit.exponent, ci=list(fit.ci), std_error=fit.std_error)
    except FracFKError as exc:
        res.update(exponent=None, fit_error=str(exc))
    return res


def cmd_structure(rc, out, files, target=None):
    target = target or rc.query.get("target", "y")
    if target not in ("y", "z"):
        raise ConfigError([f"query.target must be 'y' or 'z', got {target!r}"])
    return _series(rc, target, out, files)


def cmd_regularity(rc, out, files):
    p = rc.params
    y = _series(rc, "y", out, files)
    z = _series(rc, "z", out, files)
    return {"y": y, "z": z, "y_bound": 1.0, "z_bound": 2.0 * p.h0 + p.hurst.h_min - 1.0}


def _field_for(rc: RunConfig, tg: TimeGrid, count: int, seed: int):
    return field_sim.sample_field(rc.params, tg, rc.space_grid(), count, seed)


def cmd_residual(rc, out, files):
    f = rc.field
    tg = TimeGrid.uniform(0.0, rc.params.T, int(f["n_time"]))
    fs = _field_for(rc, tg, 1, rc.seed)[0]
    q = rc.query
    reports = analysis.bsde_residual_refinement(
        rc.params, rc.terminal, fs, rc.moll, rc.solver, rc.seed, tuple(q["step_counts"]),
        n_inner=int(q["n_inner"]), method=q["method"], x=rc.x())
    rows = [(r.n_steps, r.rms.mean, r.rms.std_error, r.rms.n) for r in reports]
    _write_csv(os.path.join(out, "residual.csv"), ["n_steps", "rms", "std_error", "n"], rows)
    files.append("residual.csv")
    return {"residuals": [{"n_steps": r.n_steps, "rms": _est(r.rms)} for r in reports]}


def cmd_isometry(rc, out, files):
    q = rc.query
    ig = q.get("integrand") or {"kind": "one"}
    integrand = analysis.Integrand(ig.get("kind", "one"), float(ig.get("a", 0.0)), ig.get("b"))
    rep = analysis.isometry_check(rc.params, integrand, rc.solver, rc.seed, rc.moll,
                                  int(q["n_samples"]), rc.space_grid(), rc.x())
    return {"mc": _est(rep.mc), "analytic": _est(rep.analytic), "allowance": rep.allowance,
            "mollified_prediction": rep.mollified, "gap": rep.gap(), "combined_se": rep.combined_se,
            "passes": bool(rep.passes())}


def cmd_alpha_identity(rc, out, files):
    f = rc.field
    tg = TimeGrid.uniform(0.0, rc.params.T, int(f["n_time"]))
    count = int(f["count"])
    fields = _field_for(rc, tg, count, rc.seed)
    paths = simulate_paths(tg, rc.params.d, rc.x(), count, rc.seed)
    sizes = [int(m) for m in rc.query["partition_sizes"]]
    rows, per = [], []
    for r, (fs, path) in enumerate(zip(fields, paths)):
        errs = analysis.alpha_identity_check(rc.params, fs, rc.moll, path, sizes)
        per.append({"realization": r, "rel_errors": errs,
                    "monotone": bool(all(b < a for a, b in zip(errs, errs[1:])))})
        rows.extend((r, m, e) for m, e in zip(sizes, errs))
    _write_csv(os.path.join(out, "alpha_identity.csv"), ["realization", "partition_size", "rel_error"], rows)
    files.append("alpha_identity.csv")
    return {"partition_sizes": sizes, "realizations": per}


def cmd_tail_probe(rc, out, files):
    lams = [float(v) for v in rc.query["lambdas"]]
    res = analysis.exp_tail_stability(rc.params, lams, float(rc.query["t"]), rc.solver, rc.seed, rc.x())
    rows = [(r.lam, r.first.mean, r.first.std_error, r.second.mean, r.second.std_error, r.z_score()) for r in res]
    _write_csv(os.path.join(out, "tail_probe.csv"),
               ["lambda", "mean_n", "std_error_n", "mean_2n", "std_error_2n", "z_score"], rows)
    files.append("tail_probe.csv")
    return {"probes": [{"lambda": r.lam, "n": _est(r.first), "2n": _est(r.second), "z_score": r.z_score()}
                       for r in res]}


def cmd_xval_pde(rc, out, files):
    if rc.params.d != 1:
        raise ConfigError(["xval-pde needs model.d = 1"])
    q = rc.query
    grid = pde_xval.PdeGrid.reference(rc.params.T, int(q["pde_n"]), float(np.max(np.abs(rc.x()))))
    tg = TimeGrid(grid.t_nodes)
    count = int(rc.field["count"])
    fields = _field_for(rc, tg, count, rc.seed)
    probes = [(float(q["t"]), float(rc.x()[0]))]
    rows, per = [], []
    for r, fs in enumerate(fields):
        u = pde_xval.solve_mollified_pde(rc.params, rc.terminal, fs, rc.moll, grid, q["scheme"])
        if r == 0:
            pde_xval.write_solution_csv(grid, u, os.path.join(out, "solution_0.csv"))
            files.append("solution_0.csv")
        res = pde_xval.compare_fk(rc.params, rc.terminal, fs, rc.moll, grid, int(q["n_inner_paths"]),
                                  analysis.derived_seed(rc.seed, r), probes, q["scheme"], u, rc.threads)
        mild = pde_xval.mild_form_residual(rc.params, rc.terminal, fs, rc.moll, grid, u, probes)
        for pr in res:
            rows.append((r, pr.t, pr.x, pr.fd, pr.mc.mean, pr.mc.std_error, int(pr.passes())))
            per.append({"realization": r, "t": pr.t, "x": pr.x, "fd": pr.fd, "mc": _est(pr.mc),
                        "passes": bool(pr.passes()), "mild_residual": mild})
    _write_csv(os.path.join(out, "xval.csv"), ["realization", "t", "x", "fd", "mc", "std_error", "passes"], rows)
    files.append("xval.csv")
    return {"probes": per, "all_pass": bool(all(p["passes"] for p in per))}


COMMANDS: Dict[str, Callable] = {
    "validate": cmd_validate, "sample-field": cmd_sample_field, "estimate-y": cmd_estimate_y,
    "estimate-z": cmd_estimate_z, "structure": cmd_structure, "regularity": cmd_regularity,
    "residual": cmd_residual, "isometry": cmd_isometry, "alpha-identity": cmd_alpha_identity,
    "tail-probe": cmd_tail_probe, "xval-pde": cmd_xval_pde,
}


# ---------------------------------------------------------------- entry point

def _parser() -> _Parser:
    p = _Parser(prog="fracfk", description="Feynman-Kac Monte Carlo for a weighted fractional noise.")
    p.add_argument("subcommand", help=" | ".join(SUBCOMMANDS))
    p.add_argument("--config", "-c", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--target", choices=("y", "z"), default=None, help="structure target")
    return p


def _write_summary(out: str, summary: dict) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=fk_solver._jsonable)
        fh.write("\n")


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args, rest = parser.parse_known_args(argv)
        if args.subcommand not in COMMANDS:
            raise UsageError(f"unknown subcommand {args.subcommand!r}; expected one of {', '.join(SUBCOMMANDS)}")
        overrides = parse_overrides(rest)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fracfk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    for key, val in (("seed", args.seed), ("threads", args.threads), ("output_dir", args.out)):
        if val is not None:
            overrides[key] = val
    if args.target is not None:
        overrides["query.target"] = args.target
    start = time.perf_counter()
    try:
        cfg = load_config(args.config, overrides)
        if cfg.get("threads") is None and os.environ.get("FRACFK_THREADS"):
            cfg["threads"] = int(os.environ["FRACFK_THREADS"])
        rc = RunConfig(cfg)
    except (ConfigError, InvalidParams) as exc:
        violations = getattr(exc, "violations", [str(exc)])
        print("fracfk: invalid config:", file=sys.stderr)
        for v in violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_INVALID

    out = rc.out
    os.makedirs(out, exist_ok=True)
    files: list = []
    # the thread count never changes results, so it stays out of the digest
    digest_cfg = {k: v for k, v in cfg.items() if k not in ("threads", "output_dir")}
    summary = {"subcommand": args.subcommand, "config_digest": config_digest(digest_cfg), "config": cfg}
    try:
        outputs = COMMANDS[args.subcommand](rc, out, files)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"fracfk: invalid config: {v}", file=sys.stderr)
        return EXIT_INVALID
    except (FracFKError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fracfk: {type(exc).__name__}: {exc}", file=sys.stderr)
        summary.update(status="error", error=f"{type(exc).__name__}: {exc}",
                       wall_time=time.perf_counter() - start)
        _write_summary(out, summary)
        return EXIT_RUNTIME
    summary.update(status="ok", outputs=outputs, files=files, wall_time=time.perf_counter() - start)
    _write_summary(out, summary)
    print(json.dumps({"subcommand": args.subcommand, "status": "ok", "out": out}))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
