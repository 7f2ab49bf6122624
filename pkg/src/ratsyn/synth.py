"""Robust state-feedback synthesis from data via SOS programming.

The controller is ``u(x) = L(x) Ycal^{-1} x`` with Lyapunov function
``V(x) = x' Ycal^{-1} x``. Decision variables are ``Ycal >= mu I``, the
coefficients of the polynomial matrix ``L(x)`` and the S-procedure
multiplier ``tau >= 0``; the robust decrease condition over the
data-consistent parameter set is an SOS constraint affine in all three.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .data import ConsistencyQuadratic
from .model import BasisSpec
from .poly import PolyMatrix, format_poly, monomials_upto, parse_poly
from .sdp import FEASIBLE, INACCURATE, ITERATION_LIMIT, SolveReport, solve
from .sim import simulate
from .sosc import AffinePolyFamily, CompiledSOS, DecisionVar, compile_sos, verify_certificate

CERT_TOL = 1e-6


@dataclass
class SynthesisOptions:
    """``L_structure``: ``"full"`` (all monomials up to ``deg_L``) or ``"basis"`` (``L = G Y_K(x)``)."""

    eps: float = 1e-7
    mu: float = 1e-6
    deg_L: Optional[int] = None
    L_structure: str = "full"
    half_degree: Optional[int] = None
    tol_feas: float = 1e-7
    tol_cone: float = 1e-8
    max_iter: int = 50000
    time_limit: Optional[float] = None  # total over both attempts
    retry: bool = True

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.L_structure not in ("full", "basis"):
            raise ValueError("L_structure is 'full' or 'basis'")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PerformanceIndex:
    """Quadratic performance of ``w_p -> z_p = C Z(x) + D u + D_p w_p`` for ``x' = ... + B_p w_p``."""

    Q_p: np.ndarray
    S_p: np.ndarray
    R_p: np.ndarray
    B_p: np.ndarray
    C: np.ndarray
    D: np.ndarray
    D_p: np.ndarray

    def __post_init__(self):
        for k in ("Q_p", "S_p", "R_p", "B_p", "C", "D", "D_p"):
            setattr(self, k, np.atleast_2d(np.asarray(getattr(self, k), dtype=float)))
        pz, mw = self.R_p.shape[0], self.Q_p.shape[0]
        if self.S_p.shape != (mw, pz) or self.D_p.shape != (pz, mw) or self.B_p.shape[1] != mw:
            raise ValueError("inconsistent performance index shapes")
        try:
            np.linalg.cholesky(0.5 * (self.R_p + self.R_p.T))
        except np.linalg.LinAlgError as exc:
            raise ValueError("R_p must be positive definite") from exc

    @property
    def Qcal(self) -> np.ndarray:
        return self.Q_p + self.S_p @ self.D_p + self.D_p.T @ self.S_p.T

    @classmethod
    def l2_gain(cls, gamma: float, B_p, C, D, D_p=None) -> "PerformanceIndex":
        B_p = np.atleast_2d(B_p)
        C = np.atleast_2d(C)
        mw, pz = B_p.shape[1], C.shape[0]
        D_p = np.zeros((pz, mw)) if D_p is None else D_p
        return cls(-gamma**2 * np.eye(mw), np.zeros((mw, pz)), np.eye(pz), B_p, C, D, D_p)

    def z(self, Zx: np.ndarray, u: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
        out = self.C @ Zx + self.D @ np.atleast_1d(u)
        if w is not None:
            out = out + self.D_p @ w
        return out


def default_deg_L(basis: BasisSpec) -> int:
    return max(basis.Z_K.degree - 1, 0)


def L_monomials(basis: BasisSpec, opts: SynthesisOptions) -> List[tuple]:
    deg = default_deg_L(basis) if opts.deg_L is None else opts.deg_L
    return monomials_upto(basis.n, deg)


def _L_variable(basis: BasisSpec, opts: SynthesisOptions):
    """Decision variable for ``L`` and a decoder to a PolyMatrix."""
    n, m = basis.n, basis.m
    if opts.L_structure == "basis":
        YK = basis.Y_K()
        NK = basis.N_K

        def decode(v):
            return np.asarray(v, dtype=float).reshape(m, NK) @ YK

        return DecisionVar("L", "free", m * NK), decode
    monos = L_monomials(basis, opts)

    def decode(v):
        C = np.asarray(v, dtype=float).reshape(len(monos), m, n)
        return PolyMatrix({a: C[k] for k, a in enumerate(monos)}, (m, n), n)

    return DecisionVar("L", "free", len(monos) * m * n), decode


def variable_count(basis: BasisSpec, opts: Optional[SynthesisOptions] = None) -> int:
    """Structural decision variables (``tau``, ``Ycal``, ``L``), excluding the Gram matrix."""
    opts = opts or SynthesisOptions()
    n = basis.n
    Lvar, _ = _L_variable(basis, opts)
    return 1 + n * (n + 1) // 2 + Lvar.ncoords


def _q_blocks(basis: BasisSpec):
    n = basis.n
    Y = basis.Y()
    H = basis.H
    Zt = basis.Zp_tilde()
    nz_nu = basis.N_z + basis.N_u
    q2 = PolyMatrix.bmat([[PolyMatrix.zeros(nz_nu, n, n)], [Zt]]) if basis.N_p else PolyMatrix.zeros(nz_nu, n, n)
    return Y, H, q2


def _stability_matrix(Yc, L: PolyMatrix, tau: float, eps: float, cq: ConsistencyQuadratic, basis: BasisSpec, Y, H, q2):
    n = basis.n
    parts = [Y @ Yc, H @ L]
    if basis.N_p:
        parts.append(PolyMatrix.zeros(n * basis.N_p, n, n))
    q1Y = PolyMatrix.bmat([[p] for p in parts])  # q1 Ycal
    top_left = PolyMatrix.const(-eps * np.eye(n) - tau * cq.Rbar, n)
    off = (q2 * (-eps)) - q1Y + PolyMatrix.const(-tau * cq.Sbar, n)  # N_v x n
    q2T = q2.T
    lower = (q2 @ q2T) * (-eps) - q2 @ q1Y.T - q1Y @ q2T + PolyMatrix.const(-tau * cq.Qbar, n)
    return PolyMatrix.bmat([[top_left, off.T], [off, lower]]), q1Y


def _variables(basis: BasisSpec, opts: SynthesisOptions):
    Lvar, decode = _L_variable(basis, opts)
    return [DecisionVar("tau", "nonneg", 1), DecisionVar("Y", "psd", basis.n, opts.mu), Lvar], decode


def build_stability_family(cq: ConsistencyQuadratic, basis: BasisSpec, opts: Optional[SynthesisOptions] = None) -> AffinePolyFamily:
    """``Q(x)``, a symmetric ``(n + N_v)``-square polynomial matrix affine in ``(tau, Ycal, L)``."""
    opts = opts or SynthesisOptions()
    if cq.N_v != basis.N_v or cq.n != basis.n:
        raise ValueError("consistency quadratic does not match the basis")
    variables, decode = _variables(basis, opts)
    Y, H, q2 = _q_blocks(basis)

    def fn(v):
        Q, _ = _stability_matrix(v["Y"], decode(v["L"]), float(v["tau"][0]), opts.eps, cq, basis, Y, H, q2)
        return Q

    return AffinePolyFamily.from_function(fn, variables)


def build_performance_family(
    cq: ConsistencyQuadratic, basis: BasisSpec, perf: PerformanceIndex, opts: Optional[SynthesisOptions] = None
) -> AffinePolyFamily:
    """``Q(x)`` bordered by the performance rows; affine in ``(tau, Ycal, L)``.

    The ``w_p`` rows and columns are scaled by ``1/sqrt(||Qcal||)``, an
    exact congruence that leaves the SOS condition unchanged.
    """
    opts = opts or SynthesisOptions()
    n = basis.n
    if perf.B_p.shape[0] != n or perf.C.shape[1] != basis.N_z or perf.D.shape[1] != basis.m:
        raise ValueError("performance index does not match the basis")
    variables, decode = _variables(basis, opts)
    Y, H, q2 = _q_blocks(basis)
    Rinv = np.linalg.inv(perf.R_p)
    Rinv = 0.5 * (Rinv + Rinv.T)
    Qcal = perf.Qcal
    Qcal = 0.5 * (Qcal + Qcal.T)
    # congruence with diag(I, I, sw I, I) keeps SOS-ness and brings -Qcal to unit scale
    qn = np.linalg.norm(Qcal, 2)
    sw = 1.0 / np.sqrt(qn) if qn > 0 else 1.0

    def fn(v):
        Yc = v["Y"]
        L = decode(v["L"])
        Q, _ = _stability_matrix(Yc, L, float(v["tau"][0]), opts.eps, cq, basis, Y, H, q2)
        q3 = perf.C @ (Y @ Yc) + perf.D @ L
        r31 = PolyMatrix.const(-perf.B_p.T, n) - perf.S_p @ q3
        r32 = -(perf.B_p.T @ q2.T)
        r41 = q3
        r42 = q3 @ q2.T
        r31, r32 = r31 * sw, r32 * sw
        c = lambda M: PolyMatrix.const(M, n)
        return PolyMatrix.bmat(
            [
                [Q[: n, : n], Q[: n, n:], r31.T, r41.T],
                [Q[n:, : n], Q[n:, n:], r32.T, r42.T],
                [r31, r32, c(-Qcal * sw**2), c(perf.D_p.T * sw)],
                [r41, r42, c(perf.D_p * sw), c(Rinv)],
            ]
        )

    return AffinePolyFamily.from_function(fn, variables)


@dataclass
class Controller:
    """``u(x) = L(x) Ycal^{-1} x``, certified by ``V(x) = x' Ycal^{-1} x``."""

    Ycal: np.ndarray
    L: PolyMatrix
    tau: float
    eps: float = 0.0
    certificate: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Ycal = 0.5 * (np.asarray(self.Ycal, dtype=float) + np.asarray(self.Ycal, dtype=float).T)
        self._X = np.linalg.inv(self.Ycal)
        self._X = 0.5 * (self._X + self._X.T)

    @property
    def n(self) -> int:
        return self.Ycal.shape[0]

    @property
    def m(self) -> int:
        return self.L.rows

    @property
    def Xcal(self) -> np.ndarray:
        return self._X

    def u(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.L.eval(x) @ (self._X @ x)
        Lx = self.L.eval(x)  # (N, m, n)
        return np.einsum("kij,jk->ik", Lx, self._X @ x)

    __call__ = u

    def V(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(x @ self._X @ x)
        return np.einsum("ik,ij,jk->k", x, self._X, x)

    def to_dict(self) -> dict:
        return {
            "Ycal": self.Ycal.tolist(),
            "L": [[format_poly(self.L.entry(i, j)) for j in range(self.L.cols)] for i in range(self.L.rows)],
            "tau": self.tau,
            "eps": self.eps,
            "n": self.n,
            "certificate": self.certificate,
            "solver": self.solver,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Controller":
        n = int(d["n"])
        L = PolyMatrix.from_entries([[parse_poly(s, n) for s in row] for row in d["L"]], n)
        return cls(np.array(d["Ycal"]), L, float(d["tau"]), float(d.get("eps", 0.0)), d.get("certificate", {}), d.get("solver", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Controller":
        return cls.from_dict(json.loads(Path(path).read_text()))


def recover_gain(ctrl: Controller) -> Callable:
    """The control law ``x -> L(x) Ycal^{-1} x``."""
    return ctrl.u


@dataclass
class SynthesisResult:
    status: str
    controller: Optional[Controller]
    reports: List[SolveReport]
    compiled: Optional[CompiledSOS] = None
    wall_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def _scaled(cq: ConsistencyQuadratic):
    s = np.linalg.norm(cq.block())
    s = 1.0 / s if s > 0 else 1.0
    return replace(cq, Qbar=cq.Qbar * s, Sbar=cq.Sbar * s, Rbar=cq.Rbar * s), s


def _run(build: Callable, decode: Callable, cq: ConsistencyQuadratic, opts: SynthesisOptions) -> SynthesisResult:
    t0 = time.perf_counter()
    reports = []
    attempts = [(cq, 1.0)]
    if opts.retry:
        attempts.append(_scaled(cq))
    result = None
    for k, (cq_k, scale) in enumerate(attempts):
        if k > 0 and reports[-1].status not in (INACCURATE, ITERATION_LIMIT):
            break
        fam = build(cq_k)
        comp = compile_sos(fam, half_degree=opts.half_degree)
        budget = None
        if opts.time_limit is not None:
            budget = opts.time_limit - (time.perf_counter() - t0)
            if budget <= 0:
                break
        # relative residual small enough to imply absolute coefficient error < CERT_TOL
        tol = min(opts.tol_feas, 0.5 * CERT_TOL / (1.0 + np.linalg.norm(comp.problem.b)))
        rep = solve(comp.problem, tol_feas=tol, tol_cone=opts.tol_cone, max_iter=opts.max_iter, time_limit=budget)
        reports.append(rep)
        status = rep.status
        ctrl = None
        if status == FEASIBLE:
            vals, Lam = comp.decode(rep.x)
            S = fam.evaluate(vals)
            res, lam_min = verify_certificate(S, Lam, comp.template)
            if res >= CERT_TOL or lam_min < -opts.tol_cone:
                status = INACCURATE
            else:
                ctrl = Controller(
                    vals["Y"],
                    decode(vals["L"]),
                    float(vals["tau"][0]) * scale,
                    opts.eps,
                    {"coef_residual": res, "gram_min_eig": lam_min, "gram_size": comp.template.size, "data_scale": scale},
                    {"iterations": rep.iterations, "wall_time": rep.wall_time, "residual": rep.residual, "cone_violation": rep.cone_violation},
                )
        result = SynthesisResult(status, ctrl, list(reports), comp)
    result.reports = reports
    result.wall_time = time.perf_counter() - t0
    return result


def synthesize_stabilizing(cq: ConsistencyQuadratic, basis: BasisSpec, opts: Optional[SynthesisOptions] = None) -> SynthesisResult:
    """Solve the robust stabilization SOS program; infeasibility is an outcome, not an error."""
    opts = opts or SynthesisOptions()
    decode = _L_variable(basis, opts)[1]
    return _run(lambda c: build_stability_family(c, basis, opts), decode, cq, opts)


def synthesize_performance(
    cq: ConsistencyQuadratic, basis: BasisSpec, perf: PerformanceIndex, opts: Optional[SynthesisOptions] = None
) -> SynthesisResult:
    """Solve the robust quadratic-performance SOS program."""
    opts = opts or SynthesisOptions()
    decode = _L_variable(basis, opts)[1]
    return _run(lambda c: build_performance_family(c, basis, perf, opts), decode, cq, opts)


@dataclass
class ClosedLoopReport:
    monotone: List[bool]
    final_norm: List[float]
    status: List[str]
    max_rel_increase: List[float]

    @property
    def all_monotone(self) -> bool:
        return all(self.monotone)

    def converged(self, tol: float) -> List[bool]:
        return [s == "ok" and f < tol for s, f in zip(self.status, self.final_norm)]


def certify_closed_loop(
    ctrl: Controller,
    rhs: Callable,
    x0s: Sequence,
    T: float = 10.0,
    dt: float = 1e-3,
    rel_tol: float = 1e-6,
    guard: Optional[Callable] = None,
) -> ClosedLoopReport:
    """Simulate ``x' = rhs(x, u(x))`` and check that ``V`` never increases.

    A step counts as an increase when ``V_{k+1} > V_k (1 + rel_tol)``.
    """
    mono, fin, st, inc = [], [], [], []
    for x0 in x0s:
        tr = simulate(rhs, x0, T, dt, control=ctrl.u, guard=guard)
        V = ctrl.V(tr.X.T)
        rel = np.diff(V) / np.maximum(V[:-1], 1e-300)
        worst = float(np.max(rel, initial=-np.inf))
        mono.append(bool(np.all(V[1:] <= V[:-1] * (1 + rel_tol))) and tr.ok)
        fin.append(float(np.linalg.norm(tr.final)))
        st.append(tr.status)
        inc.append(worst)
    return ClosedLoopReport(mono, fin, st, inc)
