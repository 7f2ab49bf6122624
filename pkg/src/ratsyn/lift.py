"""Polynomialization of systems that are linear in elementary functions.

The state ``xi`` is extended with coordinates ``psi_k(xi)`` whose time
derivatives close over the extended state, e.g. ``d/dt sin(xi) =
cos(xi) * dxi/dt``. The result is a polynomial system in ``x = Psi(xi)``
that is affine in the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import sympy

from .model import PolyForm, RationalSystem, clear_denominators, read_structured
from .poly import Polynomial


@dataclass(frozen=True)
class RuleKind:
    """Registry entry: how to build ``psi`` and its chain-rule factor."""

    name: str
    companions: tuple
    build: Callable  # (arg symbol, param) -> sympy expression psi(arg)
    factor: Callable  # (coords: dict name->symbol, param) -> sympy expression


def _reg():
    return {
        "exp": RuleKind("exp", (), lambda s, a: sympy.exp(s), lambda c, a: c["exp"]),
        "recip": RuleKind("recip", (), lambda s, a: 1 / (s + a), lambda c, a: -c["recip"] ** 2),
        "sin": RuleKind("sin", ("cos",), lambda s, a: sympy.sin(s), lambda c, a: c["cos"]),
        "cos": RuleKind("cos", ("sin",), lambda s, a: sympy.cos(s), lambda c, a: -c["sin"]),
        "ln": RuleKind("ln", ("inv",), lambda s, a: sympy.log(s), lambda c, a: c["inv"]),
        "inv": RuleKind("inv", (), lambda s, a: 1 / s, lambda c, a: -c["inv"] ** 2),
        "sqrt": RuleKind("sqrt", ("invsqrt",), lambda s, a: sympy.sqrt(s), lambda c, a: c["invsqrt"] / 2),
        "invsqrt": RuleKind("invsqrt", (), lambda s, a: 1 / sympy.sqrt(s), lambda c, a: -c["invsqrt"] ** 3 / 2),
        "tanh": RuleKind("tanh", (), lambda s, a: sympy.tanh(s), lambda c, a: 1 - c["tanh"] ** 2),
    }


REGISTRY: Dict[str, RuleKind] = _reg()


class ClosureError(ValueError):
    """A lifted derivative is not polynomial in the extended coordinates."""


@dataclass(frozen=True)
class LiftingRule:
    """Basis function ``fn`` applied to original state ``arg`` (1-based)."""

    fn: str
    arg: int
    param: float = 0.0

    def __post_init__(self):
        if self.fn not in REGISTRY:
            raise ValueError(f"unknown basis function {self.fn!r}; known: {sorted(REGISTRY)}")
        if self.arg < 1:
            raise ValueError("arg is a 1-based state index")

    @property
    def key(self):
        return (self.fn, self.arg, self.param)

    def expression(self, xi: Sequence[sympy.Symbol]) -> sympy.Expr:
        return REGISTRY[self.fn].build(xi[self.arg - 1], self.param)

    @classmethod
    def from_dict(cls, d: dict) -> "LiftingRule":
        return cls(d["fn"], int(d["arg"]), float(d.get("a", d.get("param", 0.0))))

    def to_dict(self) -> dict:
        d = {"fn": self.fn, "arg": self.arg}
        if self.fn == "recip":
            d["a"] = self.param
        return d


def check_closure(rules: Sequence[LiftingRule]) -> List[str]:
    """Names of companion functions required by ``rules`` but not declared."""
    have = {(r.fn, r.arg) for r in rules}
    missing = []
    for r in rules:
        for comp in REGISTRY[r.fn].companions:
            if (comp, r.arg) not in have and comp not in missing:
                missing.append(comp)
    return missing


@dataclass
class SymbolicSystem:
    """``xi' = f(xi) + g(xi) u`` with sympy expressions in ``xi1..xil``."""

    f: List[sympy.Expr]
    g: List[List[sympy.Expr]]
    symbols: List[sympy.Symbol]
    name: str = "system"

    @property
    def dim(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return len(self.g[0]) if self.g else 0

    @classmethod
    def from_strings(cls, f: Sequence[str], g: Sequence[Sequence[str]], names: Optional[Sequence[str]] = None, name="system"):
        ell = len(f)
        names = list(names) if names else [f"xi{i + 1}" for i in range(ell)]
        syms = sympy.symbols(names, real=True)
        syms = list(syms) if isinstance(syms, (list, tuple)) else [syms]
        loc = {nm: s for nm, s in zip(names, syms)}
        fe = [sympy.sympify(e, locals=loc) for e in f]
        ge = [[sympy.sympify(e, locals=loc) for e in row] for row in g]
        if len(ge) != ell:
            raise ValueError("g needs one row per state")
        return cls(fe, ge, syms, name)

    def numeric(self) -> Callable:
        """Vectorized-free callable ``(xi, u) -> xi'``."""
        ff = sympy.lambdify([self.symbols], self.f, "numpy")
        gg = sympy.lambdify([self.symbols], self.g, "numpy")

        def rhs(xi, u):
            xi = np.asarray(xi, dtype=float)
            fv = np.array(ff(xi), dtype=float).reshape(-1)
            gv = np.array(gg(xi), dtype=float).reshape(self.dim, self.m)
            return fv + gv @ np.atleast_1d(np.asarray(u, dtype=float))

        return rhs


@dataclass
class LiftedSystem:
    """Polynomial system in ``x = Psi(xi)`` with ``p(x) = 1``."""

    original: SymbolicSystem
    rules: List[LiftingRule]
    psi: List[sympy.Expr]
    poly_system: RationalSystem
    form: PolyForm
    _embed: Callable = field(repr=False, default=None)
    _orig_rhs: Callable = field(repr=False, default=None)

    @property
    def original_dim(self) -> int:
        return self.original.dim

    @property
    def extended_dim(self) -> int:
        return self.original.dim + len(self.rules)

    @property
    def m(self) -> int:
        return self.original.m

    def embed(self, xi) -> np.ndarray:
        """``x = Psi(xi)``; raises on a basis-function domain violation."""
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if not np.all(np.isfinite(xi)):
            raise ValueError("xi must be finite")
        with np.errstate(all="raise"):
            try:
                vals = np.array(self._embed(xi), dtype=float).reshape(-1)
            except (FloatingPointError, ZeroDivisionError) as exc:
                raise ValueError(f"basis function undefined at xi={xi}") from exc
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"basis function undefined at xi={xi}")
        return vals

    def original_rhs(self, xi, u) -> np.ndarray:
        return self._orig_rhs(xi, u)

    def lifted_rhs(self, x, u) -> np.ndarray:
        return self.form.xdot(x, u)

    def to_dict(self) -> dict:
        return {
            "original": {
                "f": [str(e) for e in self.original.f],
                "g": [[str(e) for e in row] for row in self.original.g],
                "names": [str(s) for s in self.original.symbols],
            },
            "lift": [r.to_dict() for r in self.rules],
            "psi": [str(e) for e in self.psi],
            "system": self.poly_system.to_dict(),
            "basis": self.form.basis.to_dict(),
            "A": self.form.A.tolist(),
            "B": self.form.B.tolist(),
        }


def _to_polynomial(expr: sympy.Expr, xs: Sequence[sympy.Symbol]) -> Polynomial:
    expr = sympy.expand(expr)
    try:
        P = sympy.Poly(expr, *xs)
    except sympy.PolynomialError as exc:
        raise ClosureError(f"not polynomial in the extended state: {expr}") from exc
    terms = {}
    for mono, c in P.terms():
        if not c.is_number:
            raise ClosureError(f"leftover non-polynomial factor {c} in {expr}")
        terms[tuple(int(e) for e in mono)] = float(c)
    return Polynomial(terms, len(xs))


def polynomialize(sys: SymbolicSystem, rules: Sequence[LiftingRule]) -> LiftedSystem:
    """Lift ``sys`` to a polynomial system using the declared ``rules``.

    The extended state is ``(xi, psi_1(xi), ...)`` in declaration order.
    """
    rules = list(rules)
    if len({r.key for r in rules}) != len(rules):
        raise ValueError("duplicate lifting rule")
    missing = check_closure(rules)
    if missing:
        raise ClosureError(f"rule set not closed; missing {missing}")
    for r in rules:
        if r.arg > sys.dim:
            raise ValueError(f"rule {r.fn} refers to state {r.arg} of {sys.dim}")
    ell, L = sys.dim, sys.dim + len(rules)
    xs = list(sympy.symbols(f"x1:{L + 1}", real=True))
    psi = [r.expression(sys.symbols) for r in rules]
    # replace each basis function by its coordinate, then the original states
    sub = {e: xs[ell + k] for k, e in enumerate(psi)}
    sub_states = {s: xs[i] for i, s in enumerate(sys.symbols)}

    def lift_expr(e):
        # structural replacement: subs() would also rewrite xi as 1/(1/xi)
        return sympy.expand(e).xreplace(sub).xreplace(sub_states)

    f_l = [lift_expr(e) for e in sys.f]
    g_l = [[lift_expr(e) for e in row] for row in sys.g]
    for row in g_l:
        for e in row:
            if any(s in e.free_symbols for s in sys.symbols):
                raise ClosureError(f"input gain {e} not expressible in lifted coordinates")
    for e in f_l:
        if any(s in e.free_symbols for s in sys.symbols):
            raise ClosureError(f"drift {e} not expressible in lifted coordinates")

    # chain rule: psi_k' = factor(coords) * xi_arg'
    f_ext, g_ext = list(f_l), [list(r) for r in g_l]
    for k, r in enumerate(rules):
        coords = {q.fn: xs[ell + j] for j, q in enumerate(rules) if q.arg == r.arg}
        fac = REGISTRY[r.fn].factor(coords, r.param)
        a = r.arg - 1
        f_ext.append(sympy.expand(fac * f_l[a]))
        g_ext.append([sympy.expand(fac * e) for e in g_l[a]])

    drift = [_to_polynomial(e, xs) for e in f_ext]
    inmat = [[_to_polynomial(e, xs) for e in row] for row in g_ext]
    psys = RationalSystem.polynomial(drift, inmat, name=f"{sys.name}-lifted")
    form = clear_denominators(psys)
    emb = sympy.lambdify([sys.symbols], list(sys.symbols) + psi, "numpy")
    return LiftedSystem(sys, rules, psi, psys, form, emb, sys.numeric())


def load_lifted(path) -> LiftedSystem:
    """Read ``{"f": [...], "g": [[...]], "names": [...], "lift": [...]}`` (JSON or TOML)."""
    d = read_structured(path)
    return lifted_from_dict(d.get("system", d))


def lifted_from_dict(d: dict) -> LiftedSystem:
    sysd = SymbolicSystem.from_strings(d["f"], d["g"], d.get("names"), d.get("name", "system"))
    rules = [LiftingRule.from_dict(r) for r in d.get("lift", [])]
    return polynomialize(sysd, rules)
