"""End-to-end experiment runners shared by the CLI, the acceptance suite and the demos."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import assemble_consistency, generate_data, pointwise_bound
from .model import eval_dynamics
from .sim import l2_norm, simulate
from .synth import (
    ClosedLoopReport,
    SynthesisOptions,
    SynthesisResult,
    certify_closed_loop,
    synthesize_performance,
    synthesize_stabilizing,
)
from .systems import (
    example1,
    example1_config,
    example1_form,
    example2,
    example2_config,
    example2_form,
    example2_performance,
    pendulum,
    pendulum_config,
)


def trial_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Counter-based child seed: depends only on ``master`` and ``key``, never on run order."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


def seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------- Example 1


@dataclass
class Table1Trial:
    N: int
    wbar: float
    seed: int
    status: str
    wall_time: float
    result: Optional[SynthesisResult] = None


def table1_trial(N: int, wbar: float, seed: int, opts: Optional[SynthesisOptions] = None, N_d: int = 5) -> Table1Trial:
    """Generate Example-1 data with ``N`` samples and noise level ``wbar``, then synthesize."""
    if N % N_d:
        raise ValueError(f"N = {N} is not a multiple of N_d = {N_d}")
    form = example1_form()
    ds = generate_data(example1(), example1_config(d=N // N_d, N_d=N_d, wbar=wbar), seed, form=form)
    cq = assemble_consistency(ds, form.basis, pointwise_bound(wbar, ds.N, form.n))
    res = synthesize_stabilizing(cq, form.basis, opts or SynthesisOptions())
    return Table1Trial(N, wbar, seed, res.status, res.wall_time, res)


def example1_closed_loop(ctrl, n_x0: int = 20, seed: int = 0, T: float = 10.0) -> ClosedLoopReport:
    sys = example1()
    rng = np.random.default_rng(seed)
    x0s = rng.uniform(-1.0, 1.0, size=(n_x0, 2))
    return certify_closed_loop(ctrl, lambda x, u: eval_dynamics(sys, x, u), x0s, T=T)


# ---------------------------------------------------------------- Example 2


EX2_GRID = [(a, b) for a in np.linspace(-4, 4, 5) for b in np.linspace(-4, 14, 5)]


def ex2_disturbance(seed: int = 12345, duration: float = 5.0, hold: float = 0.1, amplitude: float = 1.0):
    """Piecewise-constant ``w_p(t)`` in ``[-a, a]^2`` on ``[0, duration)``, zero afterwards."""
    rng = np.random.default_rng(seed)
    levels = rng.uniform(-amplitude, amplitude, size=(int(round(duration / hold)), 2))

    def w(t):
        k = int(t // hold)
        return levels[k] if 0 <= k < len(levels) else np.zeros(2)

    return w


@dataclass
class Example2Run:
    seed: int
    perf: SynthesisResult
    stab: SynthesisResult
    final_norms: List[float] = field(default_factory=list)
    statuses: List[str] = field(default_factory=list)
    l2_perf: float = float("nan")
    l2_stab: float = float("nan")

    @property
    def ratio(self) -> float:
        return self.l2_perf / self.l2_stab if self.l2_stab > 0 else float("nan")


def example2_run(
    seed: int,
    gamma: float = 400.0,
    opts: Optional[SynthesisOptions] = None,
    T: float = 20.0,
    grid: Sequence[Tuple[float, float]] = EX2_GRID,
) -> Example2Run:
    """Performance and stability-only synthesis on the same data, then closed-loop checks."""
    opts = opts or SynthesisOptions(time_limit=10.0)
    sys, form = example2(), example2_form()
    cfg = example2_config()
    ds = generate_data(sys, cfg, seed, form=form)
    cq = assemble_consistency(ds, form.basis, pointwise_bound(cfg.wbar, ds.N, form.n))
    perf = example2_performance(form, gamma)
    rp = synthesize_performance(cq, form.basis, perf, opts)
    rs = synthesize_stabilizing(cq, form.basis, opts)
    run = Example2Run(seed, rp, rs)
    rhs = lambda x, u: eval_dynamics(sys, x, u)
    if rp.controller is not None:
        for x0 in grid:
            tr = simulate(rhs, x0, T, control=rp.controller.u)
            run.statuses.append(tr.status)
            run.final_norms.append(float(np.linalg.norm(tr.final)) if tr.ok else float("inf"))
    if rp.controller is not None and rs.controller is not None:
        w = ex2_disturbance()
        for name, ctrl in (("l2_perf", rp.controller), ("l2_stab", rs.controller)):
            tr = simulate(rhs, np.zeros(2), T, control=ctrl.u, exogenous=w)
            setattr(run, name, l2_norm(tr.X, 1e-3) if tr.ok else float("inf"))
    return run


# ---------------------------------------------------------------- Example 3

PEND_X0 = [(np.pi + 0.5, 0.0), (np.pi - 0.5, 0.0), (np.pi, 1.0), (np.pi, -1.0)]
PEND_SETPOINT = np.array([np.pi, 0.0])


@dataclass
class Example3Run:
    seed: int
    result: SynthesisResult
    errors: List[float] = field(default_factory=list)
    statuses: List[str] = field(default_factory=list)
    trajectories: list = field(default_factory=list)


def example3_run(seed: int, opts: Optional[SynthesisOptions] = None, T: float = 10.0, x0s=PEND_X0) -> Example3Run:
    """Lift, generate, synthesize, then steer the pendulum to its upright point with ``u(x - Psi(xi_s))``."""
    opts = opts or SynthesisOptions(time_limit=10.0)
    lifted = pendulum()
    cfg = pendulum_config()
    ds = generate_data(lifted, cfg, seed)
    cq = assemble_consistency(ds, lifted.form.basis, pointwise_bound(cfg.wbar, ds.N, 4, cfg.B_w))
    res = synthesize_stabilizing(cq, lifted.form.basis, opts)
    run = Example3Run(seed, res)
    if res.controller is not None:
        ctrl = res.controller
        x_s = lifted.embed(PEND_SETPOINT)
        for x0 in x0s:
            tr = simulate(lifted.original_rhs, x0, T, control=lambda xi: ctrl.u(lifted.embed(xi) - x_s))
            run.statuses.append(tr.status)
            run.errors.append(float(np.linalg.norm(tr.final - PEND_SETPOINT)) if tr.ok else float("inf"))
            run.trajectories.append(tr)
    return run
