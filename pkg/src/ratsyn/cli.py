"""``ratsyn`` command line: lift, gen, synth, sim and the three benchmark experiments.

Exit codes: 0 success or feasible, 1 usage or configuration error,
2 infeasible synthesis, 3 solver inaccurate or out of iterations.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import Dataset, GenConfig, NoiseBound, assemble_consistency, generate_data, pointwise_bound
from .lift import LiftedSystem, lifted_from_dict
from .model import RationalSystem, clear_denominators, eval_dynamics, read_structured
from .sdp import FEASIBLE, INFEASIBLE
from .sim import export_csv, export_vector_field, simulate, vector_field
from .synth import Controller, PerformanceIndex, SynthesisOptions, synthesize_performance, synthesize_stabilizing
from .systems import example2
from .experiments import example2_run, example3_run, seed_int, table1_trial, trial_seed

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_INACCURATE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# allowed keys per section; True marks a required key
SCHEMA = {
    "": {"seed": False, "out": False, "name": False},
    "system": {"name": False, "n": True, "m": True, "drift_num": True, "drift_den": False, "input_num": True, "input_den": False},
    "lift": {"name": False, "f": True, "g": True, "names": False, "rules": True},
    "basis": {"Z": False, "Z_p": False, "H": False, "Z_K": False},
    "data": {"d": True, "N_d": True, "Ts": True, "x0_box": True, "u_box": True, "wbar": True, "B_w": False, "substeps": False},
    "noise": {"mode": False, "Q_w": False, "S_w": False, "R_w": False},
    "synthesis": {
        "eps": False, "mu": False, "deg_L": False, "L_structure": False, "half_degree": False,
        "tol_feas": False, "tol_cone": False, "max_iter": False, "time_limit": False, "retry": False,
        "performance": False,
    },
    "performance": {"gamma": False, "Q_p": False, "S_p": False, "R_p": False, "B_p": False, "C": False, "D": False, "D_p": False},
    "sim": {"x0": False, "T": False, "dt": False, "setpoint": False, "vector_field": False},
    "table1": {"trials": False, "cells": True},
}


def _check_keys(section: str, d: dict):
    allowed = SCHEMA[section]
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) at {where}: {', '.join(unknown)}")
    missing = [k for k, req in allowed.items() if req and k not in d]
    if missing:
        raise ConfigError(f"missing key(s) in [{section}]: {', '.join(missing)}")


def validate_config(cfg: dict, seed_override: Optional[int] = None) -> dict:
    """Reject unknown keys, check required ones, and make sure a seed is set."""
    top = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    _check_keys("", top)
    for sec, val in cfg.items():
        if isinstance(val, dict):
            if sec not in SCHEMA or sec == "":
                raise ConfigError(f"unknown section [{sec}]")
            _check_keys(sec, val)
            if sec == "synthesis" and isinstance(val.get("performance"), dict):
                _check_keys("performance", val["performance"])
    if "system" in cfg and "lift" in cfg:
        raise ConfigError("give either [system] or [lift], not both")
    cfg = dict(cfg)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if "seed" not in cfg:
        raise ConfigError("a seed is mandatory (config key 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    mode = cfg.get("noise", {}).get("mode", "pointwise")
    if mode not in ("pointwise", "explicit"):
        raise ConfigError("noise.mode is 'pointwise' or 'explicit'")
    return cfg


def load_config(path, seed_override=None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = read_structured(path)
    except Exception as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return validate_config(cfg, seed_override)


# ---------------------------------------------------------------- builders


def build_plant(cfg: dict):
    """``(plant, form)``: a RationalSystem or LiftedSystem and its polynomial form."""
    if "lift" in cfg:
        lf = cfg["lift"]
        d = {"f": lf["f"], "g": lf["g"], "names": lf.get("names"), "name": lf.get("name", "system"), "lift": lf["rules"]}
        plant = lifted_from_dict(d)
        if "basis" in cfg:
            raise ConfigError("[basis] is derived automatically for lifted systems")
        return plant, plant.form
    if "system" not in cfg:
        raise ConfigError("config needs a [system] or [lift] section")
    plant = RationalSystem.from_dict(cfg["system"])
    b = cfg.get("basis", {})
    tup = lambda L: [tuple(a) for a in L] if L is not None else None
    form = clear_denominators(
        plant,
        Z=tup(b.get("Z")),
        Z_p=tup(b.get("Z_p")),
        H_blocks=[tup(h) for h in b["H"]] if "H" in b else None,
        Z_K=tup(b.get("Z_K")),
    )
    return plant, form


def build_gen_config(cfg: dict) -> GenConfig:
    if "data" not in cfg:
        raise ConfigError("config needs a [data] section")
    d = cfg["data"]
    B_w = None if d.get("B_w") is None else np.array(d["B_w"], dtype=float)
    return GenConfig(int(d["d"]), int(d["N_d"]), float(d["Ts"]), d["x0_box"], d["u_box"], float(d["wbar"]), B_w, int(d.get("substeps", 1)))


def build_noise(cfg: dict, gen: GenConfig, N: int, n: int) -> NoiseBound:
    nz = cfg.get("noise", {})
    B_w = np.eye(n) if gen.B_w is None else gen.B_w
    if nz.get("mode", "pointwise") == "pointwise":
        return pointwise_bound(gen.wbar, N, B_w.shape[1], B_w)
    try:
        return NoiseBound(np.array(nz["Q_w"], float), np.array(nz["S_w"], float), np.array(nz["R_w"], float), B_w)
    except KeyError as exc:
        raise ConfigError(f"explicit noise mode needs {exc}") from exc


def build_options(cfg: dict) -> SynthesisOptions:
    s = {k: v for k, v in cfg.get("synthesis", {}).items() if k != "performance"}
    return SynthesisOptions(**s)


def build_performance(cfg: dict, form) -> Optional[PerformanceIndex]:
    p = cfg.get("synthesis", {}).get("performance")
    if p is None:
        return None
    n, Nz, m = form.n, form.basis.N_z, form.m
    if "gamma" in p:
        B_p = np.array(p.get("B_p", np.eye(n)), float)
        if "C" in p:
            C = np.array(p["C"], float)
        else:  # z_p = x
            C = np.zeros((n, Nz))
            for i in range(n):
                C[i, form.basis.Z.index(tuple(int(k == i) for k in range(n)))] = 1.0
        D = np.array(p.get("D", np.zeros((C.shape[0], m))), float)
        return PerformanceIndex.l2_gain(float(p["gamma"]), B_p, C, D, p.get("D_p"))
    try:
        return PerformanceIndex(*(np.array(p[k], float) for k in ("Q_p", "S_p", "R_p", "B_p", "C", "D", "D_p")))
    except KeyError as exc:
        raise ConfigError(f"performance index needs gamma or {exc}") from exc


def status_exit(status: str) -> int:
    if status == FEASIBLE:
        return EXIT_OK
    if status == INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_INACCURATE


# ---------------------------------------------------------------- outputs


class Run:
    """Output directory with a manifest of everything written."""

    def __init__(self, out, command: str, args: dict, cfg: Optional[dict] = None):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "args": args,
            "config": cfg,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "outputs": [],
        }
        self._t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.manifest["outputs"].append(name)
        return self.out / name

    def finish(self, status: str, code: int, **extra) -> int:
        self.manifest.update(status=status, exit_code=code, wall_time=time.perf_counter() - self._t0, **extra)
        (self.out / "manifest.json").write_text(json.dumps(self.manifest, indent=1, default=_jsonable))
        return code


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# ---------------------------------------------------------------- commands


def cmd_lift(a) -> int:
    cfg = load_config(a.config, a.seed)
    if "lift" not in cfg:
        raise ConfigError("lift needs a [lift] section")
    plant, _ = build_plant(cfg)
    run = Run(a.out or cfg.get("out", "out"), "lift", vars(a), cfg)
    run.path("lifted.json").write_text(json.dumps(plant.to_dict(), indent=1))
    print(f"lifted to {plant.extended_dim} states; wrote {run.out / 'lifted.json'}")
    return run.finish("ok", EXIT_OK, extended_dim=plant.extended_dim)


def _generate(cfg):
    plant, form = build_plant(cfg)
    gen = build_gen_config(cfg)
    ds = generate_data(plant, gen, int(cfg["seed"]), form=None if isinstance(plant, LiftedSystem) else form)
    return plant, form, gen, ds


def cmd_gen(a) -> int:
    cfg = load_config(a.config, a.seed)
    _, _, _, ds = _generate(cfg)
    run = Run(a.out or cfg.get("out", "out"), "gen", vars(a), cfg)
    ds.save(run.path("data.csv"))
    run.manifest["outputs"].append("data.csv.meta.json")
    print(f"wrote {ds.N} samples to {run.out / 'data.csv'}")
    return run.finish("ok", EXIT_OK, N=ds.N)


def cmd_synth(a) -> int:
    cfg = load_config(a.config, a.seed)
    plant, form = build_plant(cfg)
    gen = build_gen_config(cfg)
    if a.data:
        if not Path(a.data).exists():
            raise ConfigError(f"dataset not found: {a.data}")
        ds = Dataset.load(a.data)
    else:
        _, _, _, ds = _generate(cfg)
    cq = assemble_consistency(ds, form.basis, build_noise(cfg, gen, ds.N, form.n))
    opts = build_options(cfg)
    perf = build_performance(cfg, form)
    res = synthesize_stabilizing(cq, form.basis, opts) if perf is None else synthesize_performance(cq, form.basis, perf, opts)
    run = Run(a.out or cfg.get("out", "out"), "synth", vars(a), cfg)
    reports = [r.to_json() for r in res.reports]
    run.path("solver_report.json").write_text(json.dumps({"status": res.status, "attempts": reports}, indent=1, default=_jsonable))
    code = status_exit(res.status)
    if res.controller is not None:
        d = res.controller.to_dict()
        d["plant"] = {k: cfg[k] for k in ("system", "lift") if k in cfg}
        d["setpoint"] = cfg.get("sim", {}).get("setpoint")
        run.path("controller.json").write_text(json.dumps(d, indent=1, default=_jsonable))
        print(f"{res.status}: wrote {run.out / 'controller.json'} ({res.wall_time:.1f} s)")
    else:
        last = res.reports[-1] if res.reports else None
        reason = {"status": res.status, "residual": getattr(last, "residual", None), "certificate_gap": getattr(last, "certificate_gap", None)}
        run.path("reason.json").write_text(json.dumps(reason, indent=1, default=_jsonable))
        print(f"{res.status}: no controller ({res.wall_time:.1f} s)", file=sys.stderr)
    return run.finish(res.status, code, synthesis_time=res.wall_time)


def _parse_x0(text: str) -> list:
    try:
        return [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse --x0 {text!r}") from exc


def cmd_sim(a) -> int:
    path = Path(a.controller)
    if not path.exists():
        raise ConfigError(f"controller file not found: {path}")
    d = json.loads(path.read_text())
    ctrl = Controller.from_dict(d)
    cfg = load_config(a.config, a.seed) if a.config else {"seed": 0, **d.get("plant", {})}
    scfg = cfg.get("sim", {})
    T = float(a.T if a.T is not None else scfg.get("T", 20.0))
    dt = float(scfg.get("dt", 1e-3))
    x0s = _parse_x0(a.x0) if a.x0 else scfg.get("x0")
    if not x0s:
        raise ConfigError("no initial state: pass --x0 or set sim.x0")
    if "lift" in cfg:
        plant, _ = build_plant(cfg)
        sp = scfg.get("setpoint", d.get("setpoint"))
        xs = plant.embed(np.zeros(plant.original_dim) if sp is None else np.array(sp, float))
        rhs, control = plant.original_rhs, (lambda xi: ctrl.u(plant.embed(xi) - xs))
        guard = None
    elif "system" in cfg:
        plant = RationalSystem.from_dict(cfg["system"])
        rhs, control = (lambda x, u: eval_dynamics(plant, x, u)), ctrl.u
        guard = plant.denominator_product().eval
    else:
        raise ConfigError("the controller file has no plant; pass --config")
    run = Run(a.out or cfg.get("out", "out"), "sim", vars(a), cfg)
    finals = []
    for k, x0 in enumerate(x0s):
        tr = simulate(rhs, x0, T, dt, control=control, guard=guard, meta={"x0": x0})
        export_csv(tr, run.path(f"trajectory_{k}.csv"))
        finals.append({"x0": x0, "status": tr.status, "final": tr.final.tolist()})
        print(f"x0={x0}: {tr.status}, x(T)={np.array2string(tr.final, precision=4)}")
    vf = scfg.get("vector_field")
    if vf and "system" in cfg:
        grid = vector_field(lambda x: rhs(x, control(x)), vf["box"], tuple(vf.get("shape", (30, 30))))
        export_vector_field(grid, run.path("vector_field.csv"))
    ok = all(f["status"] == "ok" for f in finals)
    return run.finish("ok" if ok else "diverged", EXIT_OK, trajectories=finals)


def _table1_job(job):
    cell, trial, N, wbar, seed, opts = job
    t = table1_trial(N, wbar, seed, opts)
    return cell, trial, N, wbar, seed, t.status, t.wall_time


def cmd_table1(a) -> int:
    cfg = load_config(a.config, a.seed)
    tcfg = cfg.get("table1")
    if tcfg is None:
        raise ConfigError("table1 needs a [table1] section")
    trials = int(a.trials or tcfg.get("trials", 10))
    cells = [(int(N), float(w)) for N, w in tcfg["cells"]]
    opts = build_options(cfg)
    jobs = [
        (c, t, N, w, seed_int(trial_seed(cfg["seed"], c, t)), opts)
        for c, (N, w) in enumerate(cells)
        for t in range(trials)
    ]
    run = Run(a.out or cfg.get("out", "out"), "table1", vars(a), cfg)
    if a.jobs > 1:
        with ProcessPoolExecutor(a.jobs) as ex:
            rows = list(ex.map(_table1_job, jobs))
    else:
        rows = [_table1_job(j) for j in jobs]
    rows.sort()
    with open(run.path("table1_trials.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "trial", "N", "wbar", "seed", "status", "wall_time"])
        w.writerows(rows)
    summary = []
    print(f"{'N':>7} {'wbar':>8} {'feasible':>9} {'mean time':>10}")
    for c, (N, wb) in enumerate(cells):
        rs = [r for r in rows if r[0] == c]
        nf = sum(r[5] == FEASIBLE for r in rs)
        mt = float(np.mean([r[6] for r in rs]))
        summary.append([N, wb, nf, len(rs), mt])
        print(f"{N:>7} {wb:>8.0e} {nf:>5}/{len(rs):<3} {mt:>9.1f}s")
    with open(run.path("table1.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "wbar", "feasible", "trials", "mean_time"])
        w.writerows(summary)
    return run.finish("ok", EXIT_OK, summary=summary)


def cmd_example2(a) -> int:
    seed = 0 if a.seed is None else a.seed
    run = Run(a.out or "out/example2", "example2", vars(a))
    r = example2_run(seed)
    print(f"performance synthesis: {r.perf.status} ({r.perf.wall_time:.1f} s)")
    print(f"stability synthesis:   {r.stab.status} ({r.stab.wall_time:.1f} s)")
    if r.perf.controller is not None:
        r.perf.controller.save(run.path("controller_performance.json"))
        sys2 = example2()
        rhs = lambda x: eval_dynamics(sys2, x, r.perf.controller.u(x))
        export_vector_field(vector_field(rhs, [(-5, 5), (-5, 15)]), run.path("vector_field.csv"))
        print(f"grid runs converged: {sum(f < 1e-2 for f in r.final_norms)}/{len(r.final_norms)}")
    if r.stab.controller is not None:
        r.stab.controller.save(run.path("controller_stability.json"))
    if np.isfinite(r.ratio):
        print(f"L2 norm ratio performance/stability: {r.ratio:.3f}")
    return run.finish(r.perf.status, status_exit(r.perf.status), stability_status=r.stab.status, l2_ratio=r.ratio, final_norms=r.final_norms)


def cmd_example3(a) -> int:
    seed = 0 if a.seed is None else a.seed
    run = Run(a.out or "out/example3", "example3", vars(a))
    r = example3_run(seed)
    print(f"synthesis: {r.result.status} ({r.result.wall_time:.1f} s)")
    if r.result.controller is not None:
        r.result.controller.save(run.path("controller.json"))
        for k, tr in enumerate(r.trajectories):
            export_csv(tr, run.path(f"trajectory_{k}.csv"))
        print("final errors |xi(10) - (pi, 0)|: " + ", ".join(f"{e:.2e}" for e in r.errors))
    return run.finish(r.result.status, status_exit(r.result.status), errors=r.errors)


# ---------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ratsyn", description="Data-driven controller synthesis for rational and liftable systems.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML or JSON experiment file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("lift", help="polynomialize a non-polynomial system")).set_defaults(fn=cmd_lift)
    common(sub.add_parser("gen", help="generate a noisy dataset")).set_defaults(fn=cmd_gen)
    s = common(sub.add_parser("synth", help="synthesize a robust controller"))
    s.add_argument("--data", help="dataset CSV (generated from the config when omitted)")
    s.set_defaults(fn=cmd_synth)
    s = common(sub.add_parser("sim", help="simulate a closed loop"), config_required=False)
    s.add_argument("--controller", required=True, help="controller JSON")
    s.add_argument("--x0", help="initial state(s), e.g. '3,10' or '1,0;0,1'")
    s.add_argument("--T", type=float, help="horizon")
    s.set_defaults(fn=cmd_sim)
    s = common(sub.add_parser("table1", help="feasibility counts over (N, wbar) cells"))
    s.add_argument("--trials", type=int, help="trials per cell")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.set_defaults(fn=cmd_table1)
    for name, fn, text in (("example2", cmd_example2, "drug-distribution model with performance"), ("example3", cmd_example3, "lifted pendulum")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; runs serially")
        s.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    fn = args.fn
    del args.fn
    try:
        return fn(args)
    except ConfigError as exc:
        print(f"ratsyn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, TypeError) as exc:
        print(f"ratsyn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
