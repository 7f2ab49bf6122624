"""Compile "this affine family of polynomial matrices is SOS" into a conic problem.

A symmetric ``p x p`` polynomial matrix ``S(x)`` of degree ``<= 2d`` is SOS
iff ``S(x) = (z_d(x) kron I_p)' Lam (z_d(x) kron I_p)`` for some
``Lam >= 0``, where ``z_d`` holds all monomials of degree ``<= d``. Matching
coefficients gives linear equations in ``Lam`` and the family parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .poly import MonomialVector, PolyMatrix, _add_mono, grlex_key, monomials_upto
from .sdp import Block, ConicProblem, _triu, smat, svec, svec_len


@dataclass
class GramTemplate:
    """Gram parametrization of ``p x p`` polynomial matrices of degree ``<= 2d``."""

    nvars: int
    p: int
    d: int
    z: MonomialVector
    products: List[tuple]  # all z_a * z_b, grlex
    prod_index: np.ndarray  # (l, l) -> index into products

    @property
    def l(self) -> int:
        return len(self.z)

    @property
    def size(self) -> int:
        return self.p * self.l

    @property
    def npairs(self) -> int:
        return svec_len(self.p)

    def row(self, alpha_idx: int, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return alpha_idx * self.npairs + j * (j + 1) // 2 + i

    def gram_rows_coefs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Constraint row and coefficient for every ``svec(Lam)`` entry."""
        r, c, _ = _triu(self.size)
        a, i = np.divmod(r, self.p)
        b, j = np.divmod(c, self.p)
        alpha = self.prod_index[a, b]
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        rows = alpha * self.npairs + hi * (hi + 1) // 2 + lo
        coef = np.where(r == c, 1.0, np.where(i == j, np.sqrt(2.0), 1.0 / np.sqrt(2.0)))
        return rows, coef

    def gram_poly(self, Lam: np.ndarray) -> PolyMatrix:
        """``(z kron I)' Lam (z kron I)`` as a polynomial matrix."""
        Lam = np.asarray(Lam, dtype=float)
        p, l = self.p, self.l
        blocks = Lam.reshape(l, p, l, p).transpose(0, 2, 1, 3)  # [a, b] -> p x p
        coeffs: Dict[tuple, np.ndarray] = {}
        for a in range(l):
            for b in range(l):
                mono = self.products[self.prod_index[a, b]]
                coeffs[mono] = coeffs.get(mono, 0.0) + blocks[a, b]
        return PolyMatrix(coeffs, (p, p), self.nvars)


def gram_parametrize(n: int, p: int, deg: int) -> GramTemplate:
    """Template for symmetric ``p x p`` matrices in ``n`` variables of degree ``<= deg``."""
    if deg % 2 or deg < 0:
        raise ValueError(f"Gram degree must be even and nonnegative, got {deg}")
    d = deg // 2
    z = MonomialVector(monomials_upto(n, d), n, "z_d")
    prods = sorted({_add_mono(a, b) for a in z for b in z}, key=grlex_key)
    pos = {m: k for k, m in enumerate(prods)}
    idx = np.array([[pos[_add_mono(a, b)] for b in z] for a in z], dtype=int).reshape(len(z), len(z))
    return GramTemplate(n, p, d, z, prods, idx)


def verify_certificate(S: PolyMatrix, Lam: np.ndarray, template: GramTemplate) -> Tuple[float, float]:
    """Max coefficient mismatch between ``S`` and ``Gram(Lam)``, and ``min eig(Lam)``."""
    Lam = np.asarray(Lam, dtype=float)
    if np.max(np.abs(Lam - Lam.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(Lam))):
        raise ValueError("Gram matrix must be symmetric")
    diff = S - template.gram_poly(Lam)
    res = diff.max_abs_coef() if not diff.is_zero() else 0.0
    return float(res), float(np.linalg.eigvalsh(0.5 * (Lam + Lam.T))[0])


@dataclass
class DecisionVar:
    """Scalar block ``free`` / ``nonneg`` of length ``size``, or ``psd`` of dimension ``size``.

    A ``psd`` variable with ``lower = mu`` encodes ``X - mu I >= 0``.
    """

    name: str
    kind: str
    size: int
    lower: float = 0.0

    @property
    def ncoords(self) -> int:
        return svec_len(self.size) if self.kind == "psd" else self.size

    def unit(self, k: int) -> np.ndarray:
        e = np.zeros(self.ncoords)
        e[k] = 1.0
        return smat(e) if self.kind == "psd" else e

    def decode(self, coords: np.ndarray) -> np.ndarray:
        return smat(coords) if self.kind == "psd" else np.asarray(coords, dtype=float).copy()

    def encode(self, value) -> np.ndarray:
        return svec(value) if self.kind == "psd" else np.asarray(value, dtype=float).ravel()


@dataclass
class AffinePolyFamily:
    """``S(theta) = base + sum_k theta_k G_k`` over the coordinates of ``variables``."""

    base: PolyMatrix
    variables: List[DecisionVar]
    generators: List[List[PolyMatrix]]  # per variable, per coordinate

    @property
    def shape(self):
        return self.base.shape

    @property
    def nvars(self) -> int:
        return self.base.nvars

    def degree(self) -> int:
        d = self.base.degree if not self.base.is_zero() else 0
        for gens in self.generators:
            for G in gens:
                if not G.is_zero():
                    d = max(d, G.degree)
        return d

    def evaluate(self, values: Dict[str, np.ndarray]) -> PolyMatrix:
        out = self.base
        for var, gens in zip(self.variables, self.generators):
            coords = var.encode(values[var.name])
            for c, G in zip(coords, gens):
                if c != 0:
                    out = out + G * float(c)
        return out

    @classmethod
    def from_function(
        cls,
        fn: Callable[[Dict[str, np.ndarray]], PolyMatrix],
        variables: Sequence[DecisionVar],
        check_affine: bool = True,
        seed: int = 0,
    ) -> "AffinePolyFamily":
        """Extract base and generators of an affine map by unit probing.

        With ``check_affine`` the map is compared against its affine
        reconstruction at two random parameters; any mismatch is a bug in
        ``fn`` and raises.
        """
        variables = list(variables)
        zero = {v.name: v.decode(np.zeros(v.ncoords)) for v in variables}
        base = fn(zero)
        gens = []
        for v in variables:
            row = []
            for k in range(v.ncoords):
                vals = dict(zero)
                vals[v.name] = v.unit(k)
                row.append(fn(vals) - base)
            gens.append(row)
        fam = cls(base, variables, gens)
        if check_affine:
            rng = np.random.default_rng(seed)
            for _ in range(2):
                vals = {v.name: v.decode(rng.standard_normal(v.ncoords)) for v in variables}
                direct = fn(vals)
                recon = fam.evaluate(vals)
                scale = max(1.0, direct.max_abs_coef() if not direct.is_zero() else 0.0)
                if not direct.allclose(recon, atol=1e-9 * scale):
                    raise ValueError("family is not affine in its decision variables")
        return fam

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        if not self.base.is_symmetric(atol):
            return False
        return all(G.is_symmetric(atol) for gens in self.generators for G in gens)


@dataclass
class CompiledSOS:
    problem: ConicProblem
    family: AffinePolyFamily
    template: GramTemplate
    var_slices: Dict[str, slice] = field(default_factory=dict)
    gram_slice: slice = None

    def decode(self, x: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        """Decision-variable values (shifts restored) and the Gram matrix."""
        vals = {}
        for v in self.family.variables:
            val = v.decode(x[self.var_slices[v.name]])
            if v.kind == "psd" and v.lower:
                val = val + v.lower * np.eye(v.size)
            vals[v.name] = val
        return vals, smat(x[self.gram_slice])


def _gram_degree(deg: int, half_degree: Optional[int]) -> int:
    d = (deg + 1) // 2
    if half_degree is not None:
        if 2 * half_degree < deg:
            raise ValueError(f"half degree {half_degree} cannot cover degree {deg}")
        d = half_degree
    return 2 * d


def compile_sos(
    family: AffinePolyFamily,
    template: Optional[GramTemplate] = None,
    half_degree: Optional[int] = None,
) -> CompiledSOS:
    """Coefficient-matching conic program for ``family(theta)`` being SOS.

    Variables are laid out as the family's decision variables (in order)
    followed by ``svec(Lam)``. ``psd`` variables with a lower bound are
    shifted so the cone constraint reads ``X - mu I >= 0``.
    """
    if not family.is_symmetric():
        raise ValueError("family must be symmetric for every parameter")
    p = family.shape[0]
    if template is None:
        template = gram_parametrize(family.nvars, p, _gram_degree(family.degree(), half_degree))
    if template.p != p:
        raise ValueError("template block size differs from the family")
    if family.degree() > 2 * template.d:
        raise ValueError(f"family degree {family.degree()} exceeds template degree {2 * template.d}")

    pos = {m: k for k, m in enumerate(template.products)}
    nrows = len(template.products) * template.npairs
    iu, ju = np.triu_indices(p)

    def coef_rows(P: PolyMatrix):
        rows, vals = [], []
        for mono, C in P.coeffs().items():
            if mono not in pos:
                raise ValueError(f"monomial {mono} is not covered by the Gram basis")
            cv = C[iu, ju]
            nz = np.nonzero(cv)[0]
            if nz.size:
                rows.append(np.array([template.row(pos[mono], iu[t], ju[t]) for t in nz]))
                vals.append(cv[nz])
        if not rows:
            return np.zeros(0, int), np.zeros(0)
        return np.concatenate(rows), np.concatenate(vals)

    base = family.base
    for v, gens in zip(family.variables, family.generators):
        if v.kind == "psd" and v.lower:
            shift = svec(v.lower * np.eye(v.size))
            for c, G in zip(shift, gens):
                if c:
                    base = base + G * float(c)

    blocks: List[Block] = []
    tri_r, tri_c, tri_v = [], [], []
    col = 0
    var_slices = {}
    for v, gens in zip(family.variables, family.generators):
        blocks.append(Block(v.kind, v.size, v.name))
        var_slices[v.name] = slice(col, col + v.ncoords)
        for G in gens:
            r, val = coef_rows(G)
            tri_r.append(r)
            tri_c.append(np.full(r.size, col))
            tri_v.append(-val)
            col += 1
    grow, gcoef = template.gram_rows_coefs()
    gram_slice = slice(col, col + grow.size)
    blocks.append(Block("psd", template.size, "gram"))
    tri_r.append(grow)
    tri_c.append(np.arange(col, col + grow.size))
    tri_v.append(gcoef)
    col += grow.size

    A = sp.csr_matrix(
        (np.concatenate(tri_v), (np.concatenate(tri_r), np.concatenate(tri_c))), shape=(nrows, col)
    )
    b = np.zeros(nrows)
    r, val = coef_rows(base)
    np.add.at(b, r, val)
    prob = ConicProblem(blocks, A, b)
    return CompiledSOS(prob, family, template, var_slices, gram_slice)
