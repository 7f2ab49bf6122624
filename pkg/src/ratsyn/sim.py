"""Fixed-step RK4 simulation, signal norms and CSV export."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .model import DENOMINATOR_GUARD, DenominatorError

DIVERGENCE = 1e6

OK = "ok"
DIVERGED = "diverged"
DENOMINATOR = "denominator"


@dataclass
class Trajectory:
    t: np.ndarray  # (K+1,)
    X: np.ndarray  # (K+1, n)
    U: Optional[np.ndarray] = None  # (K+1, m)
    status: str = OK
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.X[-1]

    @property
    def ok(self) -> bool:
        return self.status == OK


def simulate(
    rhs: Callable,
    x0,
    T: float,
    dt: float = 1e-3,
    control: Optional[Callable] = None,
    guard: Optional[Callable] = None,
    meta: Optional[dict] = None,
    exogenous: Optional[Callable] = None,
) -> Trajectory:
    """Integrate ``x' = rhs(x)`` or ``x' = rhs(x, control(x))`` with classical RK4.

    ``exogenous(t)``, if given, is added to the right-hand side.

    The input is re-evaluated at every RK4 stage. The run stops early with
    status ``diverged`` when ``||x|| > 1e6`` and ``denominator`` when
    ``guard(x)`` falls to ``1e-9`` in magnitude or changes sign, or the dynamics raise
    :class:`DenominatorError`.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    K = int(round(T / dt))
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    if control is None:
        f0 = lambda y: np.asarray(rhs(y), dtype=float)
    else:
        f0 = lambda y: np.asarray(rhs(y, control(y)), dtype=float)
    if exogenous is None:
        f = lambda t, y: f0(y)
    else:
        f = lambda t, y: f0(y) + np.asarray(exogenous(t), dtype=float)
    X = np.empty((K + 1, x.size))
    X[0] = x
    U = None
    if control is not None:
        u0 = np.atleast_1d(control(x))
        U = np.empty((K + 1, u0.size))
        U[0] = u0
    status = OK
    g_sign = np.sign(guard(x)) if guard is not None else 0.0
    k = 0
    for k in range(1, K + 1):
        try:
            with np.errstate(over="raise", invalid="raise"):
                tk = (k - 1) * dt
                k1 = f(tk, x)
                k2 = f(tk + 0.5 * dt, x + 0.5 * dt * k1)
                k3 = f(tk + 0.5 * dt, x + 0.5 * dt * k2)
                k4 = f(tk + dt, x + dt * k3)
                x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        except DenominatorError:
            status = DENOMINATOR
        except FloatingPointError:
            status = DIVERGED
        if status == OK:
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE:
                status = DIVERGED
            elif guard is not None:
                gx = guard(x)
                # a sign change means the step jumped across the singular set
                if abs(gx) <= DENOMINATOR_GUARD or np.sign(gx) != g_sign:
                    status = DENOMINATOR
        if status != OK:
            k -= 1
            break
        X[k] = x
        if U is not None:
            U[k] = np.atleast_1d(control(x))
    n_kept = k + 1
    t = dt * np.arange(n_kept)
    return Trajectory(t, X[:n_kept], None if U is None else U[:n_kept], status, dict(meta or {}))


def l2_norm(signal: np.ndarray, dt: float) -> float:
    """Trapezoidal ``(int ||z(t)||^2 dt)^(1/2)`` for samples ``signal`` (K+1, p) on a uniform grid."""
    z = np.asarray(signal, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    sq = np.sum(z**2, axis=1)
    if sq.size < 2:
        return 0.0
    return float(np.sqrt(dt * (np.sum(sq) - 0.5 * (sq[0] + sq[-1]))))


def _write(path, header, M):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, M, delimiter=",", header=",".join(header), comments="", fmt="%.12g")


def export_csv(traj: Trajectory, path) -> None:
    """Header ``t,x1..xn[,u1..um]``, 12 significant digits."""
    n = traj.X.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)]
    cols = [traj.t[:, None], traj.X]
    if traj.U is not None:
        header += [f"u{j + 1}" for j in range(traj.U.shape[1])]
        cols.append(traj.U)
    _write(path, header, np.hstack(cols))


def read_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: M[:, k] for k, h in enumerate(header)}


def vector_field(rhs: Callable, box, shape=(30, 30)) -> np.ndarray:
    """Rows ``x1, x2, dx1, dx2`` of a planar vector field on a grid (NaN where undefined)."""
    (a0, a1), (b0, b1) = box
    g1 = np.linspace(a0, a1, shape[0])
    g2 = np.linspace(b0, b1, shape[1])
    rows = []
    for x1 in g1:
        for x2 in g2:
            try:
                v = np.asarray(rhs(np.array([x1, x2])), dtype=float)
            except DenominatorError:
                v = np.array([np.nan, np.nan])
            rows.append([x1, x2, v[0], v[1]])
    return np.array(rows)


def export_vector_field(grid: np.ndarray, path) -> None:
    _write(path, ["x1", "x2", "dx1", "dx2"], grid)
