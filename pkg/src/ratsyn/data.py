"""Experiment data, noise bounds and the data-consistency quadratic.

Every dataset satisfies ``p(x_k) xdot_k = A Z(x_k) + B H(x_k) u_k + B_w w_k``
for unknown ``(A, B, P)`` and disturbances ``W = [w_1 ... w_N]`` obeying the
quadratic bound ``W Q_w W' + W S_w + S_w' W' + R_w >= 0``. The set of
coefficient matrices compatible with the data is a matrix ellipsoid
described by ``(Qbar, Sbar, Rbar)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .lift import LiftedSystem
from .model import BasisSpec, DENOMINATOR_GUARD, PolyForm, RationalSystem, clear_denominators, eval_dynamics, stacked_parameter

MEMBERSHIP_TOL = -1e-8
BLOWUP = 1e6


@dataclass
class NoiseBound:
    """``W Q_w W' + W S_w + S_w' W' + R_w >= 0``; ``Q_w`` and ``S_w`` may be sparse."""

    Q_w: Union[np.ndarray, sp.spmatrix]
    S_w: Union[np.ndarray, sp.spmatrix]
    R_w: np.ndarray
    B_w: np.ndarray

    def __post_init__(self):
        self.R_w = np.atleast_2d(np.asarray(self.R_w, dtype=float))
        self.B_w = np.atleast_2d(np.asarray(self.B_w, dtype=float))
        N = self.Q_w.shape[0]
        mw = self.R_w.shape[0]
        if self.Q_w.shape != (N, N) or self.S_w.shape != (N, mw) or self.R_w.shape != (mw, mw):
            raise ValueError("inconsistent noise bound shapes")
        if self.B_w.shape[1] != mw:
            raise ValueError("B_w must have m_w columns")
        sv = np.linalg.svd(self.B_w, compute_uv=False)
        if sv.size < mw or sv[-1] <= 1e-10:
            raise ValueError("B_w must have full column rank")
        if not _negative_definite(self.Q_w):
            raise ValueError("Q_w must be negative definite")

    @property
    def N(self) -> int:
        return self.Q_w.shape[0]

    @property
    def m_w(self) -> int:
        return self.R_w.shape[0]

    def contains(self, W: np.ndarray, tol: float = 0.0) -> bool:
        """Does the disturbance sequence ``W`` (m_w x N) satisfy the bound?"""
        return float(np.linalg.eigvalsh(self.evaluate(W))[0]) >= -tol

    def evaluate(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W)
        WS = np.asarray(W @ self.S_w)
        M = np.asarray(W @ (self.Q_w @ W.T)) + WS + WS.T + self.R_w
        return 0.5 * (M + M.T)


def _negative_definite(Q) -> bool:
    if sp.issparse(Q):
        Qc = Q.tocoo()
        if np.all(Qc.row == Qc.col):
            d = np.asarray(Q.diagonal())
            return bool(np.all(d < 0))
        Q = Q.toarray()
    try:
        np.linalg.cholesky(-0.5 * (Q + Q.T))
        return True
    except np.linalg.LinAlgError:
        return False


def pointwise_bound(wbar: float, N: int, m_w: int, B_w: Optional[np.ndarray] = None) -> NoiseBound:
    """Lumped bound implied by ``||w_k|| <= wbar``: ``Q_w = -I``, ``S_w = 0``, ``R_w = wbar^2 N I``."""
    if wbar < 0 or N < 1:
        raise ValueError("need wbar >= 0 and N >= 1")
    B_w = np.eye(m_w) if B_w is None else B_w
    return NoiseBound(-sp.identity(N, format="csr"), sp.csr_matrix((N, m_w)), wbar**2 * N * np.eye(m_w), B_w)


@dataclass
class Dataset:
    X: np.ndarray
    Xdot: np.ndarray
    U: np.ndarray
    t: np.ndarray
    W_true: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Xdot = np.atleast_2d(np.asarray(self.Xdot, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.t = np.asarray(self.t, dtype=float).ravel()
        N = self.X.shape[1]
        if N < 1 or self.Xdot.shape != self.X.shape or self.U.shape[1] != N or self.t.size != N:
            raise ValueError("dataset column counts disagree")
        if self.W_true is not None:
            self.W_true = np.atleast_2d(np.asarray(self.W_true, dtype=float))

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    def save(self, path) -> None:
        """CSV ``t, x.., xdot.., u..`` plus ``<path>.meta.json``."""
        path = Path(path)
        header = ["t"] + [f"x{i+1}" for i in range(self.n)] + [f"xdot{i+1}" for i in range(self.n)] + [f"u{j+1}" for j in range(self.m)]
        M = np.column_stack([self.t, self.X.T, self.Xdot.T, self.U.T])
        np.savetxt(path, M, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
        meta = dict(self.meta)
        if self.W_true is not None:
            meta["W_true"] = self.W_true.tolist()
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = sum(1 for h in header if h.startswith("x") and not h.startswith("xdot"))
        m = sum(1 for h in header if h.startswith("u"))
        meta = {}
        mp = Path(str(path) + ".meta.json")
        if mp.exists():
            meta = json.loads(mp.read_text())
        W = meta.pop("W_true", None)
        return cls(M[:, 1 : 1 + n].T, M[:, 1 + n : 1 + 2 * n].T, M[:, 1 + 2 * n : 1 + 2 * n + m].T, M[:, 0], None if W is None else np.array(W), meta)


@dataclass
class GenConfig:
    d: int
    N_d: int
    Ts: float
    x0_box: Sequence[Tuple[float, float]]
    u_box: Sequence[Tuple[float, float]]
    wbar: float
    B_w: Optional[np.ndarray] = None
    substeps: int = 1
    max_retries: int = 50

    @property
    def N(self) -> int:
        return self.d * self.N_d

    def to_dict(self) -> dict:
        return {
            "d": self.d, "N_d": self.N_d, "Ts": self.Ts,
            "x0_box": [list(map(float, b)) for b in self.x0_box],
            "u_box": [list(map(float, b)) for b in self.u_box],
            "wbar": self.wbar, "substeps": self.substeps,
            "B_w": None if self.B_w is None else np.asarray(self.B_w).tolist(),
        }


class _Truth:
    """Uniform view of the data-generating plant.

    ``s`` is the simulation state (``x`` for rational plants, ``xi`` for
    lifted ones), ``observe(s)`` the recorded state.
    """

    def __init__(self, plant: Union[RationalSystem, LiftedSystem], form: Optional[PolyForm] = None):
        if isinstance(plant, LiftedSystem):
            self.form = plant.form
            self.n, self.m = plant.extended_dim, plant.m
            self.f = plant.original_rhs
            self.observe = plant.embed
            self.xdot = lambda s, u: plant.lifted_rhs(plant.embed(s), u)
            self.p = lambda x: 1.0
            self.state_dim = plant.original_dim
        else:
            self.form = form if form is not None else clear_denominators(plant)
            self.n, self.m = plant.n, plant.m
            self.f = lambda s, u: eval_dynamics(plant, s, u)
            self.observe = lambda s: np.asarray(s, dtype=float)
            self.xdot = self.f
            self.p = lambda x: float(self.form.p(x))
            self.state_dim = plant.n


def rk4_step(f, x, u, h):
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _ball(rng, dim, radius):
    """Uniform sample in the Euclidean ball."""
    if radius == 0:
        return np.zeros(dim)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return radius * rng.uniform() ** (1.0 / dim) * v


def generate_data(plant, cfg: GenConfig, seed, form: Optional[PolyForm] = None) -> Dataset:
    """Concatenate ``cfg.d`` trajectories of ``cfg.N_d`` samples.

    Inputs are held over each sampling interval; the recorded derivative
    carries the disturbance ``B_w w_k / p(x_k)`` so the polynomial data
    equation holds exactly with ``W_true``.
    """
    truth = _Truth(plant, form)
    rng = np.random.default_rng(seed)
    n, m = truth.n, truth.m
    B_w = np.eye(n) if cfg.B_w is None else np.atleast_2d(np.asarray(cfg.B_w, dtype=float))
    mw = B_w.shape[1]
    lo = np.array([b[0] for b in cfg.x0_box], dtype=float)
    hi = np.array([b[1] for b in cfg.x0_box], dtype=float)
    ulo = np.array([b[0] for b in cfg.u_box], dtype=float)
    uhi = np.array([b[1] for b in cfg.u_box], dtype=float)
    if lo.size != truth.state_dim or ulo.size != m:
        raise ValueError("box dimensions do not match the plant")
    h = cfg.Ts / cfg.substeps
    X, Xd, U, T, W = [], [], [], [], []
    for traj in range(cfg.d):
        for attempt in range(cfg.max_retries + 1):
            ok = True
            s = rng.uniform(lo, hi)
            cols = []
            for k in range(cfg.N_d):
                x = truth.observe(s)
                px = truth.p(x)
                if abs(px) <= DENOMINATOR_GUARD or not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP:
                    ok = False
                    break
                u = rng.uniform(ulo, uhi)
                w = _ball(rng, mw, cfg.wbar)
                xd = truth.xdot(s, u) + B_w @ w / px
                cols.append((x, xd, u, k * cfg.Ts, w))
                try:
                    with np.errstate(all="raise"):
                        for _ in range(cfg.substeps):
                            s = rk4_step(truth.f, s, u, h)
                except (FloatingPointError, ArithmeticError):
                    ok = False
                    break
                if k < cfg.N_d - 1 and (not np.all(np.isfinite(s)) or np.linalg.norm(s) > BLOWUP):
                    ok = False
                    break
            if ok:
                break
        else:
            raise RuntimeError(f"trajectory {traj}: no admissible trajectory after {cfg.max_retries} retries")
        for x, xd, u, t, w in cols:
            X.append(x); Xd.append(xd); U.append(u); T.append(t); W.append(w)
    meta = {"seed": seed if isinstance(seed, (int, type(None))) else str(seed), **cfg.to_dict()}
    return Dataset(np.array(X).T, np.array(Xd).T, np.array(U).T, np.array(T), np.array(W).T, meta)


def data_residual(form: PolyForm, ds: Dataset, B_w: Optional[np.ndarray] = None) -> np.ndarray:
    """Column-wise ``p x' - A Z - B H u - B_w w`` using ``W_true``."""
    B_w = np.eye(ds.n) if B_w is None else B_w
    p = np.atleast_1d(form.p.eval(ds.X))
    lhs = ds.Xdot * p
    rhs = np.column_stack([form.rhs(ds.X[:, k], ds.U[:, k]) for k in range(ds.N)])
    return lhs - rhs - B_w @ ds.W_true


@dataclass
class ConsistencyQuadratic:
    Qbar: np.ndarray
    Sbar: np.ndarray
    Rbar: np.ndarray
    ZX: np.ndarray
    HXU: np.ndarray
    ZpX: np.ndarray

    @property
    def N_v(self) -> int:
        return self.Qbar.shape[0]

    @property
    def n(self) -> int:
        return self.Rbar.shape[0]

    def block(self) -> np.ndarray:
        return np.block([[self.Qbar, self.Sbar], [self.Sbar.T, self.Rbar]])

    def G(self, V: np.ndarray) -> np.ndarray:
        VS = V.T @ self.Sbar
        G = V.T @ self.Qbar @ V + VS + VS.T + self.Rbar
        return 0.5 * (G + G.T)


def data_matrices(ds: Dataset, basis: BasisSpec):
    """``Z(X)``, ``H(X,U)`` and ``Zhat_p(X, Xdot)`` column by column."""
    if ds.n != basis.n or ds.m != basis.m:
        raise ValueError("dataset and basis dimensions differ")
    ZX = np.asarray(basis.Z.eval(ds.X)).reshape(basis.N_z, ds.N)
    Hx = basis.H.eval(ds.X)  # (N, N_u, m)
    HXU = np.einsum("kij,jk->ik", Hx, ds.U)
    if basis.N_p:
        Zp = np.asarray(basis.Z_p.eval(ds.X)).reshape(basis.N_p, ds.N)
        ZpX = np.einsum("ik,pk->ipk", ds.Xdot, Zp).reshape(ds.n * basis.N_p, ds.N)
    else:
        ZpX = np.zeros((0, ds.N))
    return ZX, HXU, ZpX


def assemble_consistency(ds: Dataset, basis: BasisSpec, nb: NoiseBound) -> ConsistencyQuadratic:
    """Congruence of the noise bound by ``[[-[Z;H]; Zhat_p], 0; Xdot, B_w]``."""
    if nb.N != ds.N:
        raise ValueError(f"noise bound is for N={nb.N}, dataset has {ds.N} columns")
    if nb.B_w.shape[0] != ds.n:
        raise ValueError("B_w row count must equal n")
    ZX, HXU, ZpX = data_matrices(ds, basis)
    D = np.vstack([-ZX, -HXU, ZpX])
    Xd = ds.Xdot
    Bw = nb.B_w
    QD = np.asarray(nb.Q_w @ D.T)  # N x N_v
    QX = np.asarray(nb.Q_w @ Xd.T)  # N x n
    SB = np.asarray(nb.S_w @ Bw.T)  # N x n
    Qbar = D @ QD
    Sbar = D @ QX + D @ SB
    XSB = Xd @ SB
    Rbar = Xd @ QX + XSB + XSB.T + Bw @ nb.R_w @ Bw.T
    sym = lambda M: 0.5 * (M + M.T)
    return ConsistencyQuadratic(sym(Qbar), Sbar, sym(Rbar), ZX, HXU, ZpX)


def membership_test(A, B, P, cq: ConsistencyQuadratic) -> dict:
    """Is ``(A, B, P)`` consistent with the data and the noise bound?"""
    V = stacked_parameter(A, B, P)
    if V.shape != (cq.N_v, cq.n):
        raise ValueError(f"stacked parameter is {V.shape}, expected {(cq.N_v, cq.n)}")
    lam = float(np.linalg.eigvalsh(cq.G(V))[0])
    return {"member": lam >= MEMBERSHIP_TOL, "min_eig": lam}


def reconstruct_disturbance(A, B, P, ds: Dataset, basis: BasisSpec, B_w: np.ndarray) -> np.ndarray:
    """``W = B_w^+ (Zhat_p-term - A Z(X) - B H(X,U))`` for a candidate parameter."""
    ZX, HXU, ZpX = data_matrices(ds, basis)
    P = np.atleast_2d(np.asarray(P, dtype=float)).reshape(1, -1) if np.size(P) else np.zeros((1, 0))
    n = ds.n
    IP = np.kron(np.eye(n), P)  # n x n N_p
    lhs = (IP @ ZpX if P.size else 0.0) + ds.Xdot
    resid = lhs - A @ ZX - B @ HXU
    return np.linalg.pinv(B_w) @ resid


def sample_members(A, B, P, cq: ConsistencyQuadratic, rng, k: int = 1, max_step: float = 1e3) -> list:
    """Random members of the consistency set around a member ``(A, B, P)``.

    Along a random direction in parameter space ``G`` is concave, so the
    admissible steps form an interval; a uniform fraction of its positive
    end is taken (bisection to relative accuracy 1e-6).
    """
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    P = np.atleast_2d(np.asarray(P, dtype=float)).reshape(1, -1) if np.size(P) else np.zeros((1, 0))
    if not membership_test(A, B, P, cq)["member"]:
        raise ValueError("starting point is not a member")
    ok = lambda t, D: membership_test(A + t * D[0], B + t * D[1], P + t * D[2], cq)["member"]
    out = []
    for _ in range(k):
        D = [rng.standard_normal(M.shape) for M in (A, B, P)]
        scale = np.sqrt(sum(np.sum(d**2) for d in D))
        D = [d / scale for d in D]
        lo, hi = 0.0, 1e-12
        while ok(hi, D) and hi < max_step:
            lo, hi = hi, hi * 2
        while hi - lo > 1e-6 * hi:
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if ok(mid, D) else (lo, mid)
        t = lo * rng.uniform()
        out.append((A + t * D[0], B + t * D[1], P + t * D[2]))
    return out
