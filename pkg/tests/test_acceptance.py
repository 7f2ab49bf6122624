"""Acceptance suite: one PASS/FAIL line per criterion, at the contract tolerances.

Criteria 2, 4 and 5 run full syntheses and take roughly half an hour in total.
Results are printed straight to the terminal (not captured) so that
``pytest -v`` shows the measured numbers next to each verdict.
"""

import time

import numpy as np
import pytest

from ratsyn.data import (
    assemble_consistency,
    generate_data,
    membership_test,
    pointwise_bound,
    reconstruct_disturbance,
    sample_members,
)
from ratsyn.experiments import (
    example1_closed_loop,
    example2_run,
    example3_run,
    seed_int,
    table1_trial,
    trial_seed,
)
from ratsyn.poly import PolyMatrix, parse_poly
from ratsyn.sdp import FEASIBLE, INFEASIBLE, Block, ConicProblem, smat, solve, svec
from ratsyn.sim import simulate
from ratsyn.sosc import AffinePolyFamily, compile_sos, gram_parametrize, verify_certificate
from ratsyn.synth import SynthesisOptions
from ratsyn.systems import example1, example1_config, example1_form, pendulum_energy

MASTER_SEED = 2024
TRIALS = 10
CELLS = [(20, 1e-6, "ge", 8), (20, 1e-3, "eq", 0), (1000, 1e-3, "ge", 4)]
# the budget covers compilation, both solve attempts and certificate checks
T1_BUDGET, T1_LIMIT = 58.0, 60.0
EX_BUDGET, EX_LIMIT = 9.5, 10.0

# feasible solver reports gathered by the synthesis criteria, re-checked in criterion 7
FEASIBLE_REPORTS = []


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        return ok

    return emit


def _collect(res):
    if res is not None and res.status == FEASIBLE and res.compiled is not None:
        FEASIBLE_REPORTS.append((res.compiled.problem, res.reports[-1]))


@pytest.fixture(scope="module")
def table1_results():
    opts = SynthesisOptions(time_limit=T1_BUDGET)
    out = {}
    for c, (N, wbar, _, _) in enumerate(CELLS):
        out[c] = [table1_trial(N, wbar, seed_int(trial_seed(MASTER_SEED, c, t)), opts) for t in range(TRIALS)]
        for tr in out[c]:
            _collect(tr.result)
    return out


# ---------------------------------------------------------------- 1


def test_criterion_1_consistency_set_equivalence(report):
    t0 = time.perf_counter()
    form, plant = example1_form(), example1()
    wbar = 1e-4
    true_member, min_eigs = 0, []
    for trial in range(100):
        seed = seed_int(trial_seed(MASTER_SEED, 100, trial))
        ds = generate_data(plant, example1_config(d=20, N_d=5, wbar=wbar), seed, form=form)
        nb = pointwise_bound(wbar, ds.N, form.n)
        cq = assemble_consistency(ds, form.basis, nb)
        true_member += bool(membership_test(form.A, form.B, form.P, cq)["member"])
        rng = np.random.default_rng(seed)
        (A, B, P), = sample_members(form.A, form.B, form.P, cq, rng, k=1)
        W = reconstruct_disturbance(A, B, P, ds, form.basis, nb.B_w)
        min_eigs.append(np.linalg.eigvalsh(nb.evaluate(W))[0])
    elapsed = time.perf_counter() - t0
    worst = min(min_eigs)
    ok = true_member == 100 and worst >= -1e-6 and elapsed < 30
    report(1, ok, f"true system member {true_member}/100; member-reconstructed W min eig {worst:.2e} (>= -1e-6); {elapsed:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_feasibility_trend(report, table1_results):
    lines, ok = [], True
    for c, (N, wbar, op, target) in enumerate(CELLS):
        trials = table1_results[c]
        nf = sum(t.status == FEASIBLE for t in trials)
        statuses = {s: sum(t.status == s for t in trials) for s in sorted({t.status for t in trials})}
        cell_ok = nf >= target if op == "ge" else nf == target
        ok &= cell_ok
        lines.append(f"(N={N}, wbar={wbar:g}) {nf}/{TRIALS} feasible ({'>=' if op == 'ge' else '=='} {target}) {statuses}")
    slowest = max(t.wall_time for ts in table1_results.values() for t in ts)
    ok &= slowest <= T1_LIMIT
    report(2, ok, "; ".join(lines) + f"; slowest synthesis {slowest:.1f} s (<= {T1_LIMIT:g} s)")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_example1_closed_loop(report, table1_results):
    ctrls = [t.result.controller for ts in table1_results.values() for t in ts if t.status == FEASIBLE]
    n_mono = n_conv = 0
    worst_final = 0.0
    for k, ctrl in enumerate(ctrls):
        rep = example1_closed_loop(ctrl, n_x0=20, seed=k, T=10.0)
        n_mono += rep.all_monotone
        n_conv += all(rep.converged(1e-3))
        worst_final = max(worst_final, max(rep.final_norm))
    ok = len(ctrls) > 0 and n_mono == len(ctrls) and n_conv == len(ctrls)
    report(
        3,
        ok,
        f"{len(ctrls)} feasible controllers; V non-increasing for {n_mono}; |x(10)| < 1e-3 for {n_conv}; worst |x(10)| {worst_final:.3g}",
    )
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_example2_performance(report):
    opts = SynthesisOptions(time_limit=EX_BUDGET)
    runs = []
    for seed in range(TRIALS):
        r = example2_run(seed, gamma=400.0, opts=opts)
        _collect(r.perf)
        _collect(r.stab)
        runs.append(r)
    feas = [r for r in runs if r.perf.status == FEASIBLE]
    conv = [r for r in feas if r.final_norms and max(r.final_norms) < 1e-2]
    ratios = [r.ratio for r in feas if np.isfinite(r.ratio)]
    good_ratio = [x for x in ratios if x <= 0.95]
    slowest = max(max(r.perf.wall_time, r.stab.wall_time) for r in runs)
    statuses = {s: sum(r.perf.status == s for r in runs) for s in sorted({r.perf.status for r in runs})}
    ok = len(feas) >= 7 and len(conv) == len(feas) and len(good_ratio) == len(feas) and slowest <= EX_LIMIT
    report(
        4,
        ok,
        f"gamma=400 feasible {len(feas)}/{TRIALS} (>= 7) {statuses}; grid converged for {len(conv)}/{len(feas)}; "
        f"L2 ratio <= 0.95 for {len(good_ratio)}/{len(feas)} {['%.3f' % x for x in ratios]}; "
        f"stability-only feasible {sum(r.stab.status == FEASIBLE for r in runs)}/{TRIALS}; slowest {slowest:.1f} s (<= {EX_LIMIT:g} s)",
    )
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_pendulum(report):
    opts = SynthesisOptions(time_limit=EX_BUDGET)
    good, statuses, worst, slowest = 0, {}, [], 0.0
    for seed in range(TRIALS):
        r = example3_run(seed, opts=opts)
        _collect(r.result)
        statuses[r.result.status] = statuses.get(r.result.status, 0) + 1
        slowest = max(slowest, r.result.wall_time)
        if r.errors:
            worst.append(max(r.errors))
        good += r.result.status == FEASIBLE and bool(r.errors) and max(r.errors) < 1e-2 and r.result.wall_time <= EX_LIMIT
    ok = good >= 8
    report(
        5,
        ok,
        f"seeds reaching (pi, 0) within 1e-2: {good}/{TRIALS} (>= 8); synthesis {statuses}; "
        f"worst errors {['%.2e' % e for e in worst]}; slowest {slowest:.1f} s (<= {EX_LIMIT:g} s)",
    )
    assert ok


# ---------------------------------------------------------------- 6


def _pointwise_psd(S, rng, npts=1000, box=3.0):
    X = rng.uniform(-box, box, size=(S.nvars, npts))
    vals = S.eval(X)
    scale = max(1.0, float(np.max(np.abs(vals))))
    return min(np.linalg.eigvalsh(0.5 * (M + M.T))[0] for M in vals) >= -1e-8 * scale


def test_criterion_6_sos_kernel(report):
    rng = np.random.default_rng(6)
    S = PolyMatrix.from_entries([[parse_poly("(x1^2 + 1)^2", 1)]], 1)
    comp = compile_sos(AffinePolyFamily(S, [], []))
    rep = solve(comp.problem)
    _, Lam = comp.decode(rep.x)
    res_sq, lam_sq = verify_certificate(S, Lam, comp.template)
    sq_ok = rep.status == FEASIBLE and res_sq < 1e-8 and lam_sq >= -1e-8 and _pointwise_psd(comp.template.gram_poly(Lam), rng)
    if rep.status == FEASIBLE:
        FEASIBLE_REPORTS.append((comp.problem, rep))

    M = PolyMatrix.from_entries([[parse_poly("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", 2)]], 2)
    comp_m = compile_sos(AffinePolyFamily(M, [], []))
    rep_m = solve(comp_m.problem)
    y = rep_m.certificate
    motz_ok = (
        rep_m.status == INFEASIBLE
        and y is not None
        and np.isclose(comp_m.problem.b @ y, -1.0)
        and comp_m.problem.dual_cone_distance(comp_m.problem.A.T @ y) <= 1e-6
    )

    worst_rt, psd_ok = 0.0, True
    for trial in range(100):
        n, p, deg = [(1, 1, 4), (2, 1, 4), (2, 2, 2), (2, 2, 4)][trial % 4]
        t = gram_parametrize(n, p, deg)
        G = rng.standard_normal((t.size, t.size))
        Lam = G @ G.T
        Sg = t.gram_poly(Lam)
        comp_g = compile_sos(AffinePolyFamily(Sg, [], []), template=t)
        r = np.max(np.abs(comp_g.problem.A @ svec(Lam) - comp_g.problem.b)) / max(1.0, np.abs(Lam).max())
        worst_rt = max(worst_rt, r)
        psd_ok &= _pointwise_psd(Sg, rng)
    rt_ok = worst_rt <= 1e-12
    ok = sq_ok and motz_ok and rt_ok and psd_ok
    report(
        6,
        ok,
        f"(x^2+1)^2 {rep.status}, residual {res_sq:.1e} (< 1e-8); Motzkin {rep_m.status} with dual certificate {motz_ok}; "
        f"Gram round trip worst relative residual {worst_rt:.1e} (floating-point zero); pointwise PSD on 1000 points {psd_ok}",
    )
    assert ok


# ---------------------------------------------------------------- 7


def _two_by_two():
    import scipy.sparse as sp

    A = sp.csr_matrix(np.array([[-1, 1, 0, 0], [-1, 0, 0, 1], [0, 0, 1, 0]], float))
    return ConicProblem([Block("free", 1), Block("psd", 2)], A, np.array([0, 0, np.sqrt(2)]), np.array([1.0, 0, 0, 0]))


def test_criterion_7_solver_self_verification(report):
    prob = _two_by_two()
    rep = solve(prob)
    analytic_ok = rep.status == FEASIBLE and abs(rep.x[0] - 1.0) <= 1e-6
    if rep.status == FEASIBLE:
        FEASIBLE_REPORTS.append((prob, rep))
    X = smat(rep.x[1:])
    worst_res, worst_cone = 0.0, 0.0
    for p, r in FEASIBLE_REPORTS:
        worst_res = max(worst_res, p.residual(r.x))
        worst_cone = min(worst_cone, p.cone_violation(r.x))
    ok = analytic_ok and worst_res <= 1e-7 and worst_cone >= -1e-8
    report(
        7,
        ok,
        f"2x2 SDP x* = {rep.x[0]:.9f} (|x*-1| <= 1e-6), X min eig {np.linalg.eigvalsh(X)[0]:.1e}; "
        f"{len(FEASIBLE_REPORTS)} feasible reports re-checked: worst residual {worst_res:.2e} (<= 1e-7), worst cone {worst_cone:.1e} (>= -1e-8)",
    )
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_numerics(report):
    err = []
    for dt in (0.1, 0.05):
        tr = simulate(lambda x: -x, [1.0], 2.0, dt)
        err.append(abs(tr.final[0] - np.exp(-2.0)))
    factor = err[0] / err[1]
    tr = simulate(lambda xi: np.array([xi[1], -9.81 * np.sin(xi[0])]), [1.0, 0.0], 10.0, 1e-3)
    E = pendulum_energy(tr.X)
    drift = float(np.max(np.abs(E - E[0])))
    ok = 12 <= factor <= 20 and drift < 1e-6
    report(8, ok, f"RK4 halving factor {factor:.2f} (in [12, 20]); pendulum energy drift {drift:.2e} (< 1e-6)")
    assert ok
