"""Sparse multivariate polynomials and polynomial matrices.

Monomials are exponent tuples, ordered graded-lexicographically
(total degree first, then larger exponents of earlier variables first), so
``z_2`` in two variables reads ``[1, x1, x2, x1^2, x1*x2, x2^2]``.

:class:`Polynomial` stores ``{monomial: coefficient}`` without zero entries.
:class:`PolyMatrix` stores ``{monomial: ndarray}``, i.e. it *is* its own
coefficient map, which is what the SOS compiler consumes.
"""

from __future__ import annotations

import math
import re
from itertools import combinations_with_replacement
from numbers import Number
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

import numpy as np

Monomial = Tuple[int, ...]

__all__ = [
    "Monomial",
    "Polynomial",
    "PolyMatrix",
    "MonomialVector",
    "grlex_key",
    "monomials_upto",
    "monomial_str",
    "decompose_linear_factor",
    "kron_expand",
    "coeff_map",
    "parse_poly",
]


def grlex_key(alpha: Monomial):
    return (sum(alpha), tuple(-a for a in alpha))


def monomials_upto(n: int, d: int, mindeg: int = 0) -> List[Monomial]:
    """All monomials in ``n`` variables with ``mindeg <= |alpha| <= d``, grlex order."""
    out = []
    for deg in range(mindeg, d + 1):
        for combo in combinations_with_replacement(range(n), deg):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            out.append(tuple(alpha))
    # combinations_with_replacement already yields x1^2, x1x2, ... within a degree
    return out


def monomial_str(alpha: Monomial, names: Sequence[str] | None = None) -> str:
    parts = []
    for i, e in enumerate(alpha):
        if e == 0:
            continue
        name = names[i] if names else f"x{i + 1}"
        parts.append(name if e == 1 else f"{name}^{e}")
    return "*".join(parts) if parts else "1"


def _add_mono(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


def _fmt_coef(c) -> str:
    if isinstance(c, float) and c.is_integer() and abs(c) < 1e16:
        return str(int(c))
    return repr(float(c)) if isinstance(c, (float, np.floating)) else str(c)


class Polynomial:
    """Real polynomial in ``nvars`` variables, canonical sparse form."""

    __slots__ = ("nvars", "_terms")

    def __init__(self, terms: Dict[Monomial, float] | None = None, nvars: int | None = None):
        terms = dict(terms or {})
        if nvars is None:
            if not terms:
                raise ValueError("nvars required for an empty polynomial")
            nvars = len(next(iter(terms)))
        clean = {}
        for alpha, c in terms.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != nvars:
                raise ValueError(f"monomial {alpha} does not have {nvars} variables")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            if c != 0:
                clean[alpha] = clean.get(alpha, 0) + c
        self.nvars = nvars
        self._terms = {a: c for a, c in clean.items() if c != 0}

    # construction helpers
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def constant(cls, c, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: c}, nvars)

    @classmethod
    def variable(cls, i: int, nvars: int) -> "Polynomial":
        alpha = [0] * nvars
        alpha[i] = 1
        return cls({tuple(alpha): 1.0}, nvars)

    @classmethod
    def monomial(cls, alpha: Monomial, coef=1.0) -> "Polynomial":
        return cls({tuple(alpha): coef}, len(alpha))

    @property
    def terms(self) -> Dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]))

    def monomials(self) -> List[Monomial]:
        return sorted(self._terms, key=grlex_key)

    def coef(self, alpha: Monomial):
        return self._terms.get(tuple(alpha), 0.0)

    @property
    def degree(self) -> int:
        """Total degree; ``-1`` for the zero polynomial."""
        return max((sum(a) for a in self._terms), default=-1)

    @property
    def mindegree(self) -> int:
        return min((sum(a) for a in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(a) == 0 for a in self._terms)

    def leading(self) -> Tuple[Monomial, float]:
        alpha = max(self._terms, key=grlex_key)
        return alpha, self._terms[alpha]

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(f"nvars mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, Number):
            return Polynomial.constant(other, self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t = dict(self._terms)
        for a, c in other._terms.items():
            t[a] = t.get(a, 0) + c
        return Polynomial(t, self.nvars)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({a: -c for a, c in self._terms.items()}, self.nvars)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Number) and not isinstance(other, bool):
            return Polynomial({a: c * other for a, c in self._terms.items()}, self.nvars)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t: Dict[Monomial, float] = {}
        for a, c in self._terms.items():
            for b, d in other._terms.items():
                ab = _add_mono(a, b)
                t[ab] = t.get(ab, 0) + c * d
        return Polynomial(t, self.nvars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Number):
            return self * (1.0 / other)
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if isinstance(other, Number):
            other = Polynomial.constant(other, self.nvars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= atol for c in diff._terms.values())

    def diff(self, i: int) -> "Polynomial":
        t = {}
        for a, c in self._terms.items():
            if a[i]:
                b = list(a)
                b[i] -= 1
                t[tuple(b)] = c * a[i]
        return Polynomial(t, self.nvars)

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        """Evaluate at ``x`` of shape ``(n,)`` or ``(n, npoints)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {x.shape[0]}")
        out = np.zeros(x.shape[1:])
        for a, c in self._terms.items():
            term = np.full(x.shape[1:], float(c))
            for i, e in enumerate(a):
                if e:
                    term = term * x[i] ** e
            out = out + term
        return out if out.ndim else float(out)

    def divide_exact(self, divisor: "Polynomial", rtol: float = 1e-12) -> "Polynomial":
        """Multivariate division that must leave no remainder."""
        divisor = self._coerce(divisor)
        if divisor.is_zero():
            raise ZeroDivisionError("division by the zero polynomial")
        lead_a, lead_c = divisor.leading()
        scale = max((abs(c) for c in self._terms.values()), default=1.0)
        rem = self
        quot: Dict[Monomial, float] = {}
        for _ in range(100000):
            if rem.is_zero():
                return Polynomial(quot, self.nvars)
            a, c = rem.leading()
            if abs(c) <= rtol * scale:
                rem = Polynomial({k: v for k, v in rem._terms.items() if k != a}, self.nvars)
                continue
            shift = tuple(x - y for x, y in zip(a, lead_a))
            if any(s < 0 for s in shift):
                raise ArithmeticError(f"non-exact division: remainder term {monomial_str(a)}")
            q = c / lead_c
            quot[shift] = quot.get(shift, 0) + q
            rem = rem - Polynomial.monomial(shift, q) * divisor
        raise ArithmeticError("division did not terminate")

    def __repr__(self):
        return f"Polynomial({format_poly(self)!r}, nvars={self.nvars})"

    def __str__(self):
        return format_poly(self)


def format_poly(p: Polynomial, names: Sequence[str] | None = None) -> str:
    """Print in the textual syntax understood by :func:`parse_poly`."""
    if p.is_zero():
        return "0"
    out = []
    for alpha, c in sorted(p.terms.items(), key=lambda t: grlex_key(t[0]), reverse=True):
        neg = c < 0
        mag = -c if neg else c
        mono = monomial_str(alpha, names)
        if mono == "1":
            body = _fmt_coef(mag)
        elif mag == 1:
            body = mono
        else:
            body = f"{_fmt_coef(mag)}*{mono}"
        if not out:
            out.append(("-" if neg else "") + body)
        else:
            out.append((" - " if neg else " + ") + body)
    return "".join(out)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str):
    pos = 0
    toks = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse polynomial near {text[pos:pos + 10]!r}")
        pos = m.end()
        kind = m.lastgroup
        toks.append((kind, m.group(kind)))
    return toks


def parse_poly(text: str, nvars: int, names: Sequence[str] | None = None) -> Polynomial:
    """Parse e.g. ``"3*x1^2*x2 - 0.5*x2"``; whitespace is ignored.

    Variables are ``x1..xn`` unless ``names`` is given. Supports ``+ - * /``
    (division by constants only), ``^``/``**`` with integer exponents and
    parentheses.
    """
    names = list(names) if names else [f"x{i + 1}" for i in range(nvars)]
    index = {nm: i for i, nm in enumerate(names)}
    toks = _tokenize(str(text))
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, None)

    def take():
        nonlocal pos
        tok = peek()
        pos += 1
        return tok

    def expr():
        kind, val = peek()
        sign = 1
        if kind == "op" and val in "+-":
            take()
            sign = -1 if val == "-" else 1
        acc = term() * sign
        while True:
            kind, val = peek()
            if kind == "op" and val in ("+", "-"):
                take()
                rhs = term()
                acc = acc + rhs if val == "+" else acc - rhs
            else:
                return acc

    def term():
        acc = power()
        while True:
            kind, val = peek()
            if kind == "op" and val == "*":
                take()
                acc = acc * power()
            elif kind == "op" and val == "/":
                take()
                den = power()
                if not den.is_constant() or den.is_zero():
                    raise ValueError("only division by nonzero constants is allowed")
                acc = acc * (1.0 / den.coef((0,) * nvars))
            else:
                return acc

    def power():
        base = atom()
        kind, val = peek()
        if kind == "op" and val in ("^", "**"):
            take()
            k_kind, k_val = take()
            if k_kind != "num" or not float(k_val).is_integer():
                raise ValueError("exponent must be a non-negative integer")
            return base ** int(float(k_val))
        return base

    def atom():
        kind, val = take()
        if kind == "num":
            return Polynomial.constant(float(val), nvars)
        if kind == "var":
            if val not in index:
                raise ValueError(f"unknown variable {val!r}")
            return Polynomial.variable(index[val], nvars)
        if kind == "op" and val == "(":
            inner = expr()
            k2, v2 = take()
            if v2 != ")":
                raise ValueError("unbalanced parentheses")
            return inner
        if kind == "op" and val == "-":
            return -atom()
        raise ValueError(f"unexpected token {val!r}")

    if not toks:
        raise ValueError("empty polynomial expression")
    out = expr()
    if pos != len(toks):
        raise ValueError(f"trailing input in {text!r}")
    return out


class MonomialVector:
    """Ordered, duplicate-free list of monomials with a role tag.

    Roles ``Z``, ``Z_p`` and ``Z_K`` require degree >= 1; role ``z_d`` is the
    complete basis of all monomials up to degree ``d``.
    """

    ROLES = ("Z", "Z_p", "Z_K", "z_d", "H", "free")

    def __init__(self, monomials: Iterable[Monomial], nvars: int, role: str = "free"):
        mons = [tuple(int(e) for e in m) for m in monomials]
        if role not in self.ROLES:
            raise ValueError(f"unknown role {role!r}")
        if len(set(mons)) != len(mons):
            raise ValueError("duplicate monomials")
        for m in mons:
            if len(m) != nvars:
                raise ValueError(f"monomial {m} does not have {nvars} variables")
        if role in ("Z", "Z_p", "Z_K") and any(sum(m) == 0 for m in mons):
            raise ValueError(f"role {role} requires monomials of degree >= 1")
        self.monomials = mons
        self.nvars = nvars
        self.role = role

    @classmethod
    def full(cls, nvars: int, d: int) -> "MonomialVector":
        return cls(monomials_upto(nvars, d), nvars, role="z_d")

    def __len__(self):
        return len(self.monomials)

    def __iter__(self) -> Iterator[Monomial]:
        return iter(self.monomials)

    def __getitem__(self, k):
        return self.monomials[k]

    def __eq__(self, other):
        return isinstance(other, MonomialVector) and self.monomials == other.monomials and self.nvars == other.nvars

    def index(self, alpha: Monomial) -> int:
        return self.monomials.index(tuple(alpha))

    @property
    def degree(self) -> int:
        return max((sum(m) for m in self.monomials), default=-1)

    def as_polymatrix(self) -> "PolyMatrix":
        k = len(self.monomials)
        coeffs = {}
        for r, m in enumerate(self.monomials):
            c = coeffs.setdefault(m, np.zeros((k, 1)))
            c[r, 0] = 1.0
        return PolyMatrix(coeffs, (k, 1), self.nvars)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        rows = []
        for m in self.monomials:
            v = np.ones(x.shape[1:])
            for i, e in enumerate(m):
                if e:
                    v = v * x[i] ** e
            rows.append(v)
        if not rows:
            return np.zeros((0,) + x.shape[1:])
        return np.array(rows)

    def __repr__(self):
        return f"MonomialVector([{', '.join(monomial_str(m) for m in self.monomials)}], role={self.role!r})"


class PolyMatrix:
    """Dense-shaped matrix of polynomials, stored as ``{monomial: coefficient matrix}``."""

    __slots__ = ("shape", "nvars", "_c")

    __array_ufunc__ = None  # let ndarray @ PolyMatrix reach __rmatmul__

    def __init__(self, coeffs: Dict[Monomial, np.ndarray], shape: Tuple[int, int], nvars: int):
        shape = (int(shape[0]), int(shape[1]))
        clean = {}
        for alpha, c in coeffs.items():
            c = np.asarray(c, dtype=float)
            if c.shape != shape:
                raise ValueError(f"coefficient shape {c.shape} != {shape}")
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != nvars:
                raise ValueError(f"monomial {alpha} does not have {nvars} variables")
            if np.any(c != 0):
                if alpha in clean:
                    clean[alpha] = clean[alpha] + c
                else:
                    clean[alpha] = c.copy()
        self.shape = shape
        self.nvars = nvars
        self._c = {a: c for a, c in clean.items() if np.any(c != 0)}

    @classmethod
    def zeros(cls, rows: int, cols: int, nvars: int) -> "PolyMatrix":
        return cls({}, (rows, cols), nvars)

    @classmethod
    def const(cls, C, nvars: int) -> "PolyMatrix":
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return cls({(0,) * nvars: C}, C.shape, nvars)

    @classmethod
    def eye(cls, k: int, nvars: int) -> "PolyMatrix":
        return cls.const(np.eye(k), nvars)

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence[Polynomial | float]], nvars: int) -> "PolyMatrix":
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        coeffs: Dict[Monomial, np.ndarray] = {}
        for i, row in enumerate(entries):
            if len(row) != cols:
                raise ValueError("ragged entries")
            for j, e in enumerate(row):
                if isinstance(e, Number):
                    e = Polynomial.constant(e, nvars)
                if e.nvars != nvars:
                    raise ValueError("nvars mismatch")
                for a, c in e.terms.items():
                    coeffs.setdefault(a, np.zeros((rows, cols)))[i, j] += c
        return cls(coeffs, (rows, cols), nvars)

    @classmethod
    def bmat(cls, blocks: Sequence[Sequence["PolyMatrix | None"]]) -> "PolyMatrix":
        """Assemble from blocks; ``None`` means a zero block sized by its row/column."""
        nvars = next(b.nvars for row in blocks for b in row if b is not None)
        row_h = []
        for row in blocks:
            hs = {b.shape[0] for b in row if b is not None}
            if len(hs) != 1:
                raise ValueError("inconsistent block row heights")
            row_h.append(hs.pop())
        ncol = len(blocks[0])
        col_w = []
        for j in range(ncol):
            ws = {row[j].shape[1] for row in blocks if row[j] is not None}
            if len(ws) != 1:
                raise ValueError("inconsistent block column widths")
            col_w.append(ws.pop())
        R, C = sum(row_h), sum(col_w)
        ro = np.concatenate([[0], np.cumsum(row_h)])
        co = np.concatenate([[0], np.cumsum(col_w)])
        coeffs: Dict[Monomial, np.ndarray] = {}
        for i, row in enumerate(blocks):
            for j, b in enumerate(row):
                if b is None:
                    continue
                if b.nvars != nvars:
                    raise ValueError("nvars mismatch")
                for a, c in b._c.items():
                    coeffs.setdefault(a, np.zeros((R, C)))[ro[i]:ro[i + 1], co[j]:co[j + 1]] += c
        return cls(coeffs, (R, C), nvars)

    # access
    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    def coeffs(self) -> Dict[Monomial, np.ndarray]:
        """Coefficient map in grlex order (copies)."""
        return {a: self._c[a].copy() for a in sorted(self._c, key=grlex_key)}

    def monomials(self) -> List[Monomial]:
        return sorted(self._c, key=grlex_key)

    def coef(self, alpha: Monomial) -> np.ndarray:
        c = self._c.get(tuple(alpha))
        return np.zeros(self.shape) if c is None else c.copy()

    def entry(self, i: int, j: int) -> Polynomial:
        return Polynomial({a: c[i, j] for a, c in self._c.items()}, self.nvars)

    def entries(self) -> List[List[Polynomial]]:
        return [[self.entry(i, j) for j in range(self.cols)] for i in range(self.rows)]

    def __getitem__(self, key) -> "PolyMatrix":
        coeffs = {}
        for a, c in self._c.items():
            sub = np.atleast_2d(c[key])
            coeffs[a] = sub
        probe = np.atleast_2d(np.zeros(self.shape)[key])
        return PolyMatrix(coeffs, probe.shape, self.nvars)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._c), default=-1)

    def entry_degrees(self) -> np.ndarray:
        deg = np.full(self.shape, -1)
        for a, c in self._c.items():
            deg = np.where(c != 0, np.maximum(deg, sum(a)), deg)
        return deg

    def is_zero(self) -> bool:
        return not self._c

    @property
    def T(self) -> "PolyMatrix":
        return PolyMatrix({a: c.T for a, c in self._c.items()}, (self.cols, self.rows), self.nvars)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        if self.rows != self.cols:
            return False
        return all(np.max(np.abs(c - c.T)) <= atol for c in self._c.values())

    def symmetrize(self) -> "PolyMatrix":
        return PolyMatrix({a: 0.5 * (c + c.T) for a, c in self._c.items()}, self.shape, self.nvars)

    # arithmetic
    def _check(self, other: "PolyMatrix"):
        if other.nvars != self.nvars:
            raise ValueError(f"nvars mismatch: {self.nvars} vs {other.nvars}")

    def __add__(self, other):
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        self._check(other)
        if other.shape != self.shape:
            raise ValueError(f"dimension mismatch: {self.shape} vs {other.shape}")
        coeffs = {a: c.copy() for a, c in self._c.items()}
        for a, c in other._c.items():
            coeffs[a] = coeffs[a] + c if a in coeffs else c
        return PolyMatrix(coeffs, self.shape, self.nvars)

    def __neg__(self):
        return PolyMatrix({a: -c for a, c in self._c.items()}, self.shape, self.nvars)

    def __sub__(self, other):
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        return self + (-other)

    def __mul__(self, s):
        if isinstance(s, Polynomial):
            if s.nvars != self.nvars:
                raise ValueError("nvars mismatch")
            coeffs: Dict[Monomial, np.ndarray] = {}
            for a, c in self._c.items():
                for b, d in s.terms.items():
                    ab = _add_mono(a, b)
                    coeffs[ab] = coeffs[ab] + d * c if ab in coeffs else d * c
            return PolyMatrix(coeffs, self.shape, self.nvars)
        if isinstance(s, Number):
            return PolyMatrix({a: s * c for a, c in self._c.items()}, self.shape, self.nvars)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, np.ndarray):
            other = PolyMatrix.const(other, self.nvars)
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        self._check(other)
        if self.cols != other.rows:
            raise ValueError(f"dimension mismatch: {self.shape} @ {other.shape}")
        coeffs: Dict[Monomial, np.ndarray] = {}
        shape = (self.rows, other.cols)
        for a, c in self._c.items():
            for b, d in other._c.items():
                ab = _add_mono(a, b)
                prod = c @ d
                coeffs[ab] = coeffs[ab] + prod if ab in coeffs else prod
        return PolyMatrix(coeffs, shape, self.nvars)

    def __rmatmul__(self, other):
        if isinstance(other, np.ndarray):
            return PolyMatrix.const(other, self.nvars) @ self
        return NotImplemented

    def __eq__(self, other):
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        if self.shape != other.shape or self.nvars != other.nvars or set(self._c) != set(other._c):
            return False
        return all(np.array_equal(self._c[a], other._c[a]) for a in self._c)

    __hash__ = None

    def allclose(self, other: "PolyMatrix", atol: float = 1e-12) -> bool:
        if self.shape != other.shape:
            return False
        return all(np.max(np.abs(c)) <= atol for c in (self - other)._c.values())

    def max_abs_coef(self) -> float:
        return max((float(np.max(np.abs(c))) for c in self._c.values()), default=0.0)

    def eval(self, x) -> np.ndarray:
        """Evaluate at one point ``(n,)`` -> ``(rows, cols)`` or at ``(n, N)`` -> ``(N, rows, cols)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {x.shape[0]}")
        if x.ndim == 1:
            out = np.zeros(self.shape)
            for a, c in self._c.items():
                out += c * float(np.prod(x ** np.array(a)))
            return out
        npts = x.shape[1]
        out = np.zeros((npts,) + self.shape)
        for a, c in self._c.items():
            v = np.ones(npts)
            for i, e in enumerate(a):
                if e:
                    v = v * x[i] ** e
            out += v[:, None, None] * c[None]
        return out

    __call__ = eval

    def __repr__(self):
        return f"PolyMatrix(shape={self.shape}, nvars={self.nvars}, degree={self.degree})"

    def __str__(self):
        rows = ["[" + ", ".join(str(e) for e in row) + "]" for row in self.entries()]
        return "[" + ",\n ".join(rows) + "]"


def decompose_linear_factor(Z: MonomialVector | Sequence[Monomial], nvars: int | None = None) -> PolyMatrix:
    """Return ``Y(x)`` with ``Z(x) = Y(x) x``.

    Each monomial is factored through its lowest-index variable with a
    positive exponent, so ``x1*x2 -> [x2, 0]``.
    """
    if isinstance(Z, MonomialVector):
        mons, nvars = Z.monomials, Z.nvars
    else:
        mons = [tuple(m) for m in Z]
        if nvars is None:
            nvars = len(mons[0])
    coeffs: Dict[Monomial, np.ndarray] = {}
    for r, alpha in enumerate(mons):
        nz = [i for i, e in enumerate(alpha) if e > 0]
        if not nz:
            raise ValueError("degree-0 monomial cannot be factored as Y(x) x")
        i = nz[0]
        rest = list(alpha)
        rest[i] -= 1
        coeffs.setdefault(tuple(rest), np.zeros((len(mons), nvars)))[r, i] = 1.0
    return PolyMatrix(coeffs, (len(mons), nvars), nvars)


def kron_expand(k: int, v: PolyMatrix | MonomialVector) -> PolyMatrix:
    """``I_k (x) v`` as a PolyMatrix."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(v, MonomialVector):
        v = v.as_polymatrix()
    I = np.eye(k)
    shape = (k * v.rows, k * v.cols)
    return PolyMatrix({a: np.kron(I, c) for a, c in v._c.items()}, shape, v.nvars)


def coeff_map(M: PolyMatrix | Polynomial) -> Dict[Monomial, np.ndarray]:
    """``{monomial: coefficient matrix}`` in grlex order with ``M = sum_a C_a x^a``."""
    if isinstance(M, Polynomial):
        return {a: np.array([[c]], dtype=float) for a, c in M.items()}
    return M.coeffs()


def from_coeff_map(cm: Dict[Monomial, np.ndarray], shape: Tuple[int, int], nvars: int) -> PolyMatrix:
    return PolyMatrix(cm, shape, nvars)


def poly_binom(n: int, d: int) -> int:
    return math.comb(n + d, d)
