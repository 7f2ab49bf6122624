"""Rational plants and their linearly parametrized polynomial rewriting.

A rational system ``xdot = f_r(x) + g_r(x) u`` with entries
``a_i/d_i`` and ``b_ij/e_ij`` is multiplied through by the product of all
denominators ``p(x)``. After normalizing ``p(0) = 1`` this gives

    [P 1] [Z_p(x); 1] xdot = A Z(x) + B H(x) u

which is linear in the coefficient matrices ``A``, ``B``, ``P``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .poly import (
    MonomialVector,
    PolyMatrix,
    Polynomial,
    decompose_linear_factor,
    format_poly,
    grlex_key,
    kron_expand,
    parse_poly,
)

DENOMINATOR_GUARD = 1e-9


class DenominatorError(ArithmeticError):
    """A denominator (or ``p(x)``) is numerically zero at an evaluation point."""


@dataclass(frozen=True)
class RationalSystem:
    """``xdot_i = a_i/d_i + sum_j (b_ij/e_ij) u_j``."""

    n: int
    m: int
    drift_num: List[Polynomial]
    drift_den: List[Polynomial]
    input_num: List[List[Polynomial]]
    input_den: List[List[Polynomial]]
    name: str = "system"

    def __post_init__(self):
        n, m = self.n, self.m
        if len(self.drift_num) != n or len(self.drift_den) != n:
            raise ValueError("drift entries must have length n")
        if len(self.input_num) != n or any(len(r) != m for r in self.input_num):
            raise ValueError("input numerators must be n x m")
        if len(self.input_den) != n or any(len(r) != m for r in self.input_den):
            raise ValueError("input denominators must be n x m")
        polys = list(self.drift_num) + list(self.drift_den)
        polys += [q for row in self.input_num for q in row] + [q for row in self.input_den for q in row]
        if any(q.nvars != n for q in polys):
            raise ValueError("every polynomial must have nvars == n")
        for q in list(self.drift_den) + [q for row in self.input_den for q in row]:
            if q.is_zero():
                raise ValueError("zero denominator polynomial")
        for a in self.drift_num:
            if not a.is_zero() and any(sum(al) == 0 for al in a.terms):
                raise ValueError("drift numerators need degree >= 1 terms only (origin must be a steady state)")

    @classmethod
    def polynomial(cls, drift: Sequence[Polynomial], input_matrix: Sequence[Sequence[Polynomial]], name="system"):
        n = len(drift)
        m = len(input_matrix[0])
        one = Polynomial.constant(1.0, n)
        return cls(n, m, list(drift), [one] * n, [list(r) for r in input_matrix],
                   [[one] * m for _ in range(n)], name=name)

    def denominator_product(self) -> Polynomial:
        """``p(x) = prod_i d_i(x) prod_ij e_ij(x)`` before normalization."""
        p = Polynomial.constant(1.0, self.n)
        for d in self.drift_den:
            p = p * d
        for row in self.input_den:
            for e in row:
                p = p * e
        return p

    def drift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        num = np.array([a.eval(x) for a in self.drift_num], dtype=float)
        den = np.array([d.eval(x) for d in self.drift_den], dtype=float)
        if np.any(np.abs(den) <= DENOMINATOR_GUARD):
            raise DenominatorError(f"drift denominator vanishes at {x}")
        return num / den

    def input_matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        num = np.array([[b.eval(x) for b in row] for row in self.input_num], dtype=float)
        den = np.array([[e.eval(x) for e in row] for row in self.input_den], dtype=float)
        if np.any(np.abs(den) <= DENOMINATOR_GUARD):
            raise DenominatorError(f"input denominator vanishes at {x}")
        return num / den

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "drift_num": [format_poly(q) for q in self.drift_num],
            "drift_den": [format_poly(q) for q in self.drift_den],
            "input_num": [[format_poly(q) for q in row] for row in self.input_num],
            "input_den": [[format_poly(q) for q in row] for row in self.input_den],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RationalSystem":
        n, m = int(d["n"]), int(d["m"])
        P = lambda s: parse_poly(str(s), n)
        drift_num = [P(s) for s in d["drift_num"]]
        drift_den = [P(s) for s in d.get("drift_den", ["1"] * n)]
        input_num = [[P(s) for s in row] for row in d["input_num"]]
        input_den = [[P(s) for s in row] for row in d.get("input_den", [["1"] * m] * n)]
        return cls(n, m, drift_num, drift_den, input_num, input_den, name=d.get("name", "system"))


def eval_dynamics(sys: RationalSystem, x, u) -> np.ndarray:
    """``xdot = f_r(x) + g_r(x) u`` at a single point."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float).reshape(sys.m)
    p = sys.denominator_product().eval(x)
    if abs(p) <= DENOMINATOR_GUARD:
        raise DenominatorError(f"p(x) = {p:.3g} at x = {x}")
    return sys.drift(x) + sys.input_matrix(x) @ u


@dataclass(frozen=True)
class BasisSpec:
    """Monomial bases of the polynomial rewriting plus the controller basis ``Z_K``."""

    Z: MonomialVector
    Z_p: MonomialVector
    H: PolyMatrix
    Z_K: MonomialVector

    def __post_init__(self):
        n = self.Z.nvars
        if self.Z.role != "Z" or self.Z_p.role != "Z_p" or self.Z_K.role != "Z_K":
            raise ValueError("basis vectors must carry roles Z, Z_p, Z_K")
        if self.H.nvars != n or self.Z_p.nvars != n or self.Z_K.nvars != n:
            raise ValueError("nvars mismatch in basis")

    @property
    def n(self) -> int:
        return self.Z.nvars

    @property
    def m(self) -> int:
        return self.H.cols

    @property
    def N_z(self) -> int:
        return len(self.Z)

    @property
    def N_p(self) -> int:
        return len(self.Z_p)

    @property
    def N_u(self) -> int:
        return self.H.rows

    @property
    def N_K(self) -> int:
        return len(self.Z_K)

    @property
    def N_v(self) -> int:
        return self.N_z + self.N_u + self.n * self.N_p

    def Y(self) -> PolyMatrix:
        return decompose_linear_factor(self.Z)

    def Y_K(self) -> PolyMatrix:
        return decompose_linear_factor(self.Z_K)

    def Zp_tilde(self) -> PolyMatrix:
        """``I_n (x) Z_p(x)`` of shape ``(n*N_p, n)``."""
        if self.N_p == 0:
            return PolyMatrix.zeros(0, self.n, self.n)
        return kron_expand(self.n, self.Z_p)

    def to_dict(self) -> dict:
        mon = lambda v: [list(m) for m in v]
        return {
            "Z": mon(self.Z),
            "Z_p": mon(self.Z_p),
            "Z_K": mon(self.Z_K),
            "H": [[format_poly(q) for q in row] for row in self.H.entries()],
        }

    @classmethod
    def from_dict(cls, d: dict, n: int) -> "BasisSpec":
        H = PolyMatrix.from_entries([[parse_poly(s, n) for s in row] for row in d["H"]], n)
        if not d["H"]:
            raise ValueError("H must have at least one row")
        return cls(
            MonomialVector(d["Z"], n, "Z"),
            MonomialVector(d["Z_p"], n, "Z_p"),
            H,
            MonomialVector(d.get("Z_K", d["Z"]), n, "Z_K"),
        )


@dataclass(frozen=True)
class PolyForm:
    """``[P 1][Z_p; 1] xdot = A Z(x) + B H(x) u`` with ``p(0) = 1``."""

    p: Polynomial
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    basis: BasisSpec
    p_scale: float = 1.0  # raw denominator product = p_scale * p

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def m(self) -> int:
        return self.basis.m

    def V(self) -> np.ndarray:
        """Stacked parameter ``[[A B]^T; (I_n (x) P)^T]`` of shape ``(N_v, n)``."""
        return stacked_parameter(self.A, self.B, self.P)

    def rhs(self, x, u) -> np.ndarray:
        """``A Z(x) + B H(x) u`` at one point."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float).reshape(self.m)
        return self.A @ self.basis.Z.eval(x) + self.B @ (self.basis.H.eval(x) @ u)

    def xdot(self, x, u) -> np.ndarray:
        p = self.p.eval(np.asarray(x, dtype=float))
        if abs(p) <= DENOMINATOR_GUARD:
            raise DenominatorError(f"p(x) = {p:.3g} at x = {x}")
        return self.rhs(x, u) / p

    def with_parameters(self, A, B, P) -> "PolyForm":
        """Same bases with other coefficients (``p`` follows ``P``)."""
        A, B, P = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, P))
        n = self.n
        terms = {(0,) * n: 1.0}
        for k, alpha in enumerate(self.basis.Z_p):
            terms[alpha] = float(P[0, k]) if P.size else 0.0
        return PolyForm(Polynomial(terms, n), A, B, P.reshape(1, -1), self.basis)


def stacked_parameter(A, B, P) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    P = np.asarray(P, dtype=float).reshape(1, -1)
    top = np.hstack([A, B]).T
    if P.size == 0:
        return top
    return np.vstack([top, np.kron(np.eye(n), P).T])


def _collect(polys: Sequence[Polynomial]) -> List[tuple]:
    mons = set()
    for q in polys:
        mons.update(q.terms)
    return sorted(mons, key=grlex_key)


def clear_denominators(
    sys: RationalSystem,
    Z: Optional[Sequence] = None,
    Z_p: Optional[Sequence] = None,
    H_blocks: Optional[Sequence[Sequence]] = None,
    Z_K: Optional[Sequence] = None,
) -> PolyForm:
    """Multiply through by ``p(x)`` and extract ``A``, ``B``, ``P``.

    Bases default to the distinct monomials of the cleared numerators in
    grlex order, with ``x_1..x_n`` always included in ``Z``. Explicit ``Z``, ``Z_p`` or per-input ``H_blocks`` may be
    given to fix an ordering or to over-approximate; they must cover the
    monomials actually present. ``Z_K`` defaults to ``Z``.
    """
    n, m = sys.n, sys.m
    p_raw = sys.denominator_product()
    p0 = p_raw.coef((0,) * n)
    if p0 == 0:
        raise ValueError("p(0) = 0: the origin is not a regular point of the system")
    p = p_raw * (1.0 / p0)

    drift_cleared = []
    for a, d in zip(sys.drift_num, sys.drift_den):
        p_i = p.divide_exact(d)
        drift_cleared.append(a * p_i)
    input_cleared = []
    for row_b, row_e in zip(sys.input_num, sys.input_den):
        input_cleared.append([b * p.divide_exact(e) for b, e in zip(row_b, row_e)])

    if Z is not None:
        z_mons = [tuple(a) for a in Z]
    else:
        # the linear monomials keep Z(x) = 0 only at the origin
        linear = [Polynomial.variable(i, n) for i in range(n)]
        z_mons = _collect(drift_cleared + linear)
    if any(sum(a) == 0 for a in z_mons):
        raise ValueError("cleared drift has a constant term; origin is not a steady state")
    Zv = MonomialVector(z_mons, n, "Z")

    A = np.zeros((n, len(z_mons)))
    for i, q in enumerate(drift_cleared):
        for alpha, c in q.terms.items():
            if alpha not in z_mons:
                raise ValueError(f"monomial {alpha} of row {i} missing from Z")
            A[i, z_mons.index(alpha)] = c

    blocks = []
    for j in range(m):
        col = [input_cleared[i][j] for i in range(n)]
        blocks.append([tuple(a) for a in H_blocks[j]] if H_blocks is not None else _collect(col))
    N_u = sum(len(b) for b in blocks)
    Hc: Dict[tuple, np.ndarray] = {}
    B = np.zeros((n, N_u))
    off = 0
    for j, mons in enumerate(blocks):
        for k, alpha in enumerate(mons):
            Hc.setdefault(alpha, np.zeros((N_u, m)))[off + k, j] = 1.0
        for i in range(n):
            for alpha, c in input_cleared[i][j].terms.items():
                if alpha not in mons:
                    raise ValueError(f"monomial {alpha} of input entry ({i},{j}) missing from H")
                B[i, off + mons.index(alpha)] = c
        off += len(mons)
    H = PolyMatrix(Hc, (N_u, m), n)

    zp_mons = [tuple(a) for a in Z_p] if Z_p is not None else [a for a in p.monomials() if sum(a) > 0]
    P = np.zeros((1, len(zp_mons)))
    for alpha, c in p.terms.items():
        if sum(alpha) == 0:
            continue
        if alpha not in zp_mons:
            raise ValueError(f"monomial {alpha} of p(x) missing from Z_p")
        P[0, zp_mons.index(alpha)] = c
    Zpv = MonomialVector(zp_mons, n, "Z_p")
    ZKv = MonomialVector([tuple(a) for a in Z_K] if Z_K is not None else z_mons, n, "Z_K")
    return PolyForm(p, A, B, P, BasisSpec(Zv, Zpv, H, ZKv), p_scale=float(p0))


@dataclass
class DenominatorReport:
    global_claim: Optional[bool]
    box_min: float
    sign_change: bool
    argmin: np.ndarray = field(default_factory=lambda: np.zeros(0))


def validate_denominators(sys: RationalSystem, box, points_per_axis: int = 50) -> DenominatorReport:
    """Grid check of ``|p(x)|`` on a box; empirical, not a proof.

    ``global_claim`` is ``True`` only for a constant nonzero ``p``, ``False``
    when a sign change (or a zero) is found, ``None`` otherwise.
    """
    box = np.asarray(box, dtype=float).reshape(sys.n, 2)
    p = sys.denominator_product()
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in box]
    grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(sys.n, -1)
    vals = np.atleast_1d(p.eval(grid))
    k = int(np.argmin(np.abs(vals)))
    sign_change = bool(np.any(vals > 0) and np.any(vals < 0)) or bool(np.any(vals == 0))
    if p.is_constant():
        claim = not p.is_zero()
    elif sign_change:
        claim = False
    else:
        claim = None
    return DenominatorReport(claim, float(np.abs(vals[k])), sign_change, grid[:, k])


def load_system(path) -> RationalSystem:
    """Read a system definition (JSON, or TOML when the suffix is ``.toml``)."""
    d = read_structured(path)
    return RationalSystem.from_dict(d.get("system", d))


def read_structured(path) -> dict:
    """Parse a JSON file, or TOML when the suffix is ``.toml``."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(path.read_text())
