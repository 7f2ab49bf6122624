"""Conic feasibility / optimization over free, nonnegative and PSD blocks.

Problems have the form ``min c'x  s.t.  A x = b,  x in K`` where ``K`` is
a product of free vectors, nonnegative orthants and PSD cones. PSD blocks
are stored as scaled upper triangles (column-major, off-diagonals times
``sqrt(2)``) so Euclidean inner products equal trace inner products.

The solver is Douglas-Rachford / ADMM splitting between the affine set and
the cone, with row/block equilibration, over-relaxation and residual
balancing. Every ``feasible`` verdict is re-checked against the original,
unscaled data; infeasibility is reported only with a verified Farkas
certificate ``y`` (``A'y in K*``, ``b'y < 0``).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SQRT2 = np.sqrt(2.0)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INACCURATE = "inaccurate"
ITERATION_LIMIT = "iteration-limit"


def svec_len(k: int) -> int:
    return k * (k + 1) // 2


def _triu_colmajor(k: int) -> Tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for j in range(k):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


_TRIU_CACHE: dict = {}


def _triu(k: int):
    if k not in _TRIU_CACHE:
        r, c = _triu_colmajor(k)
        scale = np.where(r == c, 1.0, SQRT2)
        _TRIU_CACHE[k] = (r, c, scale)
    return _TRIU_CACHE[k]


def svec(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    r, c, s = _triu(M.shape[0])
    return M[r, c] * s


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    k = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if svec_len(k) != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    r, c, s = _triu(k)
    M = np.zeros((k, k))
    M[r, c] = v / s
    M[c, r] = v / s
    return M


def svec_index(i: int, j: int) -> int:
    """Position of entry ``(i, j)`` (any order) in :func:`svec`."""
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


def psd_project(M: np.ndarray, check: bool = True) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped)."""
    M = np.asarray(M, dtype=float)
    if check:
        scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
        if M.shape[0] != M.shape[1] or np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("psd_project needs a symmetric matrix")
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    if w[0] >= 0:
        return M
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


@dataclass
class Block:
    kind: str  # "free" | "nonneg" | "psd"
    size: int  # vector length for free/nonneg, matrix dimension for psd
    name: str = ""

    @property
    def length(self) -> int:
        return svec_len(self.size) if self.kind == "psd" else self.size


@dataclass
class ConicProblem:
    blocks: List[Block]
    A: sp.csr_matrix
    b: np.ndarray
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        for blk in self.blocks:
            if blk.kind not in ("free", "nonneg", "psd"):
                raise ValueError(f"unknown block kind {blk.kind!r}")
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[1] != self.nvar:
            raise ValueError(f"A has {self.A.shape[1]} columns, blocks need {self.nvar}")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b row counts differ")
        if self.c is not None:
            self.c = np.asarray(self.c, dtype=float).ravel()
            if self.c.size != self.nvar:
                raise ValueError("objective length mismatch")

    @property
    def nvar(self) -> int:
        return sum(b.length for b in self.blocks)

    @property
    def offsets(self) -> List[int]:
        out, o = [], 0
        for blk in self.blocks:
            out.append(o)
            o += blk.length
        return out

    def block_slices(self):
        return [(blk, slice(o, o + blk.length)) for blk, o in zip(self.blocks, self.offsets)]

    def split(self, x: np.ndarray) -> list:
        """Per-block values; PSD blocks come back as matrices."""
        out = []
        for blk, sl in self.block_slices():
            v = x[sl]
            out.append(smat(v) if blk.kind == "psd" else v.copy())
        return out

    def project_cone(self, x: np.ndarray) -> np.ndarray:
        z = x.copy()
        for blk, sl in self.block_slices():
            if blk.kind == "nonneg":
                z[sl] = np.maximum(x[sl], 0.0)
            elif blk.kind == "psd":
                z[sl] = svec(psd_project(smat(x[sl]), check=False))
        return z

    def cone_violation(self, x: np.ndarray) -> float:
        """Most negative eigenvalue / entry over constrained blocks (0 if none)."""
        worst = 0.0
        for blk, sl in self.block_slices():
            if blk.kind == "nonneg" and blk.length:
                worst = min(worst, float(np.min(x[sl])))
            elif blk.kind == "psd" and blk.size:
                worst = min(worst, float(np.linalg.eigvalsh(smat(x[sl]))[0]))
        return worst

    def dual_cone_distance(self, s: np.ndarray) -> float:
        """Euclidean distance of ``s`` to the dual cone ``K*``."""
        d2 = 0.0
        for blk, sl in self.block_slices():
            v = s[sl]
            if blk.kind == "free":
                d2 += float(v @ v)
            elif blk.kind == "nonneg":
                d2 += float(np.sum(np.minimum(v, 0.0) ** 2))
            elif blk.size:
                w = np.linalg.eigvalsh(smat(v))
                d2 += float(np.sum(np.minimum(w, 0.0) ** 2))
        return float(np.sqrt(d2))

    def residual(self, x: np.ndarray) -> float:
        """``||Ax - b|| / (1 + ||b||)``."""
        return float(np.linalg.norm(self.A @ x - self.b) / (1.0 + np.linalg.norm(self.b)))

    # text format
    def to_text(self) -> str:
        """Sparse text format: header, cones, ``b``, ``c``, then ``row col value`` triplets."""
        A = self.A.tocoo()
        lines = [f"conic {self.A.shape[0]} {self.nvar} {A.nnz}"]
        lines.append("blocks " + " ".join(f"{b.kind}:{b.size}" for b in self.blocks))
        lines.append("b " + " ".join(repr(float(v)) for v in self.b))
        if self.c is not None:
            lines.append("c " + " ".join(repr(float(v)) for v in self.c))
        for i, j, v in zip(A.row, A.col, A.data):
            lines.append(f"{i} {j} {float(v)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConicProblem":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "conic":
            raise ValueError("not a conic problem file")
        m, nvar, nnz = map(int, head[1:4])
        blocks = []
        for tok in lines[1].split()[1:]:
            kind, size = tok.split(":")
            blocks.append(Block(kind, int(size)))
        b = np.array([float(v) for v in lines[2].split()[1:]]) if m else np.zeros(0)
        k = 3
        c = None
        if k < len(lines) and lines[k].startswith("c"):
            c = np.array([float(v) for v in lines[k].split()[1:]])
            k += 1
        trip = np.array([ln.split() for ln in lines[k:k + nnz]], dtype=float).reshape(-1, 3)
        A = sp.csr_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))), shape=(m, nvar))
        return cls(blocks, A, b, c)


@dataclass
class SolveReport:
    status: str
    x: np.ndarray
    residual: float
    cone_violation: float
    iterations: int
    wall_time: float
    objective: Optional[float] = None
    certificate: Optional[np.ndarray] = None
    certificate_gap: Optional[float] = None
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    def to_json(self) -> str:
        d = {
            "status": self.status,
            "residual": self.residual,
            "cone_violation": self.cone_violation,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "objective": self.objective,
            "x": self.x.tolist(),
            "certificate": None if self.certificate is None else self.certificate.tolist(),
            "certificate_gap": self.certificate_gap,
            "info": self.info,
        }
        return json.dumps(d)


class _AffineProjector:
    """Projection onto ``{x : A x = b}``.

    ``A A'`` is factored once. Columns with a single nonzero (every Gram
    entry of a compiled SOS program) contribute a diagonal; the remaining
    columns enter through a Woodbury update when there are few of them.
    """

    def __init__(self, A: sp.csr_matrix, b: np.ndarray):
        self.A = sp.csr_matrix(A)
        self.At = self.A.T.tocsr()
        self.b = b
        m = A.shape[0]
        Ac = self.A.tocsc()
        nnz_col = np.diff(Ac.indptr)
        single = nnz_col == 1
        d = np.zeros(m)
        if np.any(single):
            S = Ac[:, np.where(single)[0]].tocoo()
            np.add.at(d, S.row, S.data ** 2)
        other = np.where(nnz_col > 1)[0]
        self.mode = None
        if np.all(d > 0) and len(other) <= 3000:
            U = Ac[:, other].toarray() if len(other) else np.zeros((m, 0))
            self.dinv = 1.0 / d
            DU = U * self.dinv[:, None]
            cap = np.eye(U.shape[1]) + U.T @ DU
            self.U, self.DU = U, DU
            self.cap = sla.cho_factor(cap)
            self.mode = "woodbury"
        elif m <= 6000:
            M = (self.A @ self.At).toarray()
            try:
                self.chol = sla.cho_factor(M)
                self.mode = "dense"
            except np.linalg.LinAlgError:
                w, V = np.linalg.eigh(M)
                keep = w > 1e-12 * max(w[-1], 1e-300)
                self.pinv = (V[:, keep] / w[keep]) @ V[:, keep].T
                self.mode = "pinv"
        else:
            M = (self.A @ self.At).tocsc() + sp.identity(m, format="csc") * 1e-14
            self.lu = spla.splu(M)
            self.mode = "sparse"

    def solve_normal(self, r: np.ndarray) -> np.ndarray:
        """``(A A')^{-1} r``."""
        if self.mode == "woodbury":
            y = self.dinv * r
            if self.U.shape[1]:
                y = y - self.DU @ sla.cho_solve(self.cap, self.U.T @ y)
            return y
        if self.mode == "dense":
            return sla.cho_solve(self.chol, r)
        if self.mode == "pinv":
            return self.pinv @ r
        return self.lu.solve(r)

    def project(self, v: np.ndarray) -> np.ndarray:
        r = self.A @ v - self.b
        return v - self.At @ self.solve_normal(r)


def _equilibrate(prob: ConicProblem, rounds: int = 5):
    """Row scaling ``R`` and per-block column scaling ``E``: ``A_s = R A E``."""
    A = prob.A.copy().tocsr()
    m, nv = A.shape
    R = np.ones(m)
    E = np.ones(nv)
    slices = [sl for _, sl in prob.block_slices()]
    for _ in range(rounds):
        As = sp.diags(R) @ A @ sp.diags(E)
        rn = np.sqrt(np.asarray(As.multiply(As).sum(axis=1)).ravel())
        rn[rn == 0] = 1.0
        R = R / np.sqrt(rn)
        As = sp.diags(R) @ A @ sp.diags(E)
        cn = np.sqrt(np.asarray(As.multiply(As).sum(axis=0)).ravel())
        for sl in slices:
            seg = cn[sl]
            seg = seg[seg > 0]
            if seg.size:
                E[sl] = E[sl] / np.sqrt(np.exp(np.mean(np.log(seg))))
    As = sp.diags(R) @ A @ sp.diags(E)
    rn = np.sqrt(np.asarray(As.multiply(As).sum(axis=1)).ravel())
    rn[rn == 0] = 1.0
    R = R / rn
    return R, E


def _verify_certificate(prob: ConicProblem, y: np.ndarray, tol: float):
    """Normalize ``b'y = -1`` and measure how far ``A'y`` is from ``K*``."""
    by = float(prob.b @ y)
    if not np.isfinite(by) or by >= 0:
        return None, np.inf
    y = y / (-by)
    s = prob.A.T @ y
    dist = prob.dual_cone_distance(s)
    rel = dist / max(np.linalg.norm(s), 1e-300)
    return y, rel


class _Anderson:
    """Type-II Anderson acceleration with a short memory."""

    def __init__(self, mem: int):
        self.mem = mem
        self.dW: List[np.ndarray] = []
        self.dG: List[np.ndarray] = []
        self.w_prev = None
        self.g_prev = None

    def reset(self):
        self.dW, self.dG = [], []
        self.w_prev = self.g_prev = None

    def step(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.w_prev is not None:
            self.dW.append(w - self.w_prev)
            self.dG.append(g - self.g_prev)
            if len(self.dW) > self.mem:
                self.dW.pop(0)
                self.dG.pop(0)
        self.w_prev, self.g_prev = w, g
        if not self.dG:
            return w + g
        G = np.array(self.dG).T
        M = G.T @ G
        reg = 1e-10 * max(np.trace(M), 1e-300)
        try:
            gamma = np.linalg.solve(M + reg * np.eye(M.shape[0]), G.T @ g)
        except np.linalg.LinAlgError:
            self.reset()
            return w + g
        W = np.array(self.dW).T
        return w + g - (W + G) @ gamma


def solve(
    prob: ConicProblem,
    tol_feas: float = 1e-7,
    tol_cone: float = 1e-8,
    max_iter: int = 50000,
    tol_infeas: float = 1e-6,
    relax: float = 1.0,
    rho: float = 1.0,
    anderson: int = 10,
    time_limit: Optional[float] = None,
    check_every: int = 10,
    verbose: bool = False,
    x0: Optional[np.ndarray] = None,
) -> SolveReport:
    """Solve a :class:`ConicProblem` by Douglas-Rachford splitting.

    Iterates ``x = P_aff(w - c/rho)``, ``z = P_K(2x - w)``,
    ``w += relax (z - x)`` on equilibrated data, with safeguarded Anderson
    acceleration of ``w``. Deterministic for identical inputs.
    ``feasible`` implies the returned ``x`` satisfies
    ``||Ax - b||/(1+||b||) <= tol_feas`` and ``cone_violation(x) >= -tol_cone``
    on the original data; ``infeasible`` comes with a Farkas vector ``y``
    (``b'y = -1``) whose ``A'y`` is within relative distance ``tol_infeas``
    of the dual cone.
    """
    t0 = time.perf_counter()
    nv = prob.nvar
    m = prob.A.shape[0]
    objective = prob.c is not None and bool(np.any(prob.c != 0))
    if m == 0:
        x = np.zeros(nv)
        status = FEASIBLE if not objective else INACCURATE
        return SolveReport(status, x, 0.0, 0.0, 0, time.perf_counter() - t0)

    R, E = _equilibrate(prob)
    As = sp.diags(R) @ prob.A @ sp.diags(E)
    bs = R * prob.b
    cs = np.zeros(nv)
    if objective:
        cs = E * prob.c
        cs = cs / max(np.linalg.norm(cs), 1e-12)
    scaled = ConicProblem(prob.blocks, As, bs)
    proj = _AffineProjector(scaled.A, bs)
    accel = _Anderson(anderson) if anderson else None

    def T(w):
        x = proj.project(w - cs / rho)
        z = scaled.project_cone(2 * x - w)
        return x, z, relax * (z - x)

    w = np.zeros(nv) if x0 is None else np.asarray(x0, dtype=float) / E
    x, z, g = T(w)
    gnorm_ref = np.linalg.norm(g)
    plain_next = w + g
    best = None
    status = ITERATION_LIMIT
    cert = cert_gap = None
    obj_prev = None
    g_hist: List[np.ndarray] = []
    k = 0
    n_rejected = 0

    def accept(cand_s):
        xo = E * cand_s
        res = prob.residual(xo)
        if res > tol_feas:
            return None
        return xo if prob.cone_violation(xo) >= -tol_cone else None

    for k in range(1, max_iter + 1):
        w_new = accel.step(w, g) if accel is not None else w + g
        x_n, z_n, g_n = T(w_new)
        gn = np.linalg.norm(g_n)
        if accel is not None and gn > gnorm_ref * 1.0 + 1e-300 and not np.array_equal(w_new, plain_next):
            # safeguard: fall back to the plain step and restart the memory
            n_rejected += 1
            accel.reset()
            w_new = plain_next
            x_n, z_n, g_n = T(w_new)
            gn = np.linalg.norm(g_n)
        w, x, z, g = w_new, x_n, z_n, g_n
        gnorm_ref = gn
        plain_next = w + g

        if k % check_every:
            continue
        done = False
        for cand in (x, z):
            xo = accept(cand)
            if xo is None:
                continue
            if objective:
                obj = float(prob.c @ xo)
                done = obj_prev is not None and abs(obj - obj_prev) <= tol_feas * (1 + abs(obj)) and gn <= tol_feas
                obj_prev = obj
            else:
                done = True
            if done:
                best = xo
                break
        if done:
            status = FEASIBLE
            break
        if verbose and k % (check_every * 100) == 0:
            print(f"iter {k:6d}  |g| {gn:.3e}  res(z) {prob.residual(E * z):.3e}  rejected {n_rejected}")

        if not objective and k % 50 == 0:
            # infeasibility: the gap x - z settles at a nonzero vector
            gap = x - z
            g_hist.append(gap)
            if len(g_hist) >= 3:
                g0, g1 = g_hist[-3], g_hist[-1]
                ng = np.linalg.norm(g1)
                if ng > 0 and np.linalg.norm(g1 - g0) <= 1e-2 * ng:
                    y_s = -proj.solve_normal(scaled.A @ g1)
                    y_o, rel = _verify_certificate(prob, R * y_s, tol_infeas)
                    if y_o is not None and rel <= tol_infeas:
                        status = INFEASIBLE
                        cert, cert_gap = y_o, rel
                        break
                g_hist = g_hist[-3:]
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            break

    xo = best if status == FEASIBLE else E * z
    res = prob.residual(xo)
    viol = prob.cone_violation(xo)
    if status == ITERATION_LIMIT and res <= 10 * tol_feas and viol >= -10 * tol_cone:
        status = INACCURATE
    # independent re-check; never report a feasible point that fails it
    if status == FEASIBLE and (res > tol_feas or viol < -tol_cone):
        status = INACCURATE
    objval = float(prob.c @ xo) if prob.c is not None else None
    info = {"mode": proj.mode, "anderson_rejected": n_rejected}
    return SolveReport(status, xo, res, viol, k, time.perf_counter() - t0, objval, cert, cert_gap, info)
