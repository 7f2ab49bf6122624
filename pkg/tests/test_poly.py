import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratsyn.poly import (
    MonomialVector,
    PolyMatrix,
    Polynomial,
    coeff_map,
    decompose_linear_factor,
    format_poly,
    from_coeff_map,
    grlex_key,
    kron_expand,
    monomials_upto,
    parse_poly,
    poly_binom,
)


def P(s, n=2):
    return parse_poly(s, n)


monos2 = st.tuples(st.integers(0, 3), st.integers(0, 3))
coefs = st.integers(-5, 5).map(float)
polys2 = st.dictionaries(monos2, coefs, max_size=6).map(lambda d: Polynomial(d, 2))


def test_difference_of_squares():
    assert P("(x1 + x2)*(x1 - x2)") == P("x1^2 - x2^2")


def test_add_zero_is_identity():
    p = P("3*x1^2*x2 - 2*x2 + 7")
    assert p + Polynomial.zero(2) == p


def test_cleared_numerator_product():
    assert P("1 + x1^2") * P("x2^2") == P("x2^2 + x1^2*x2^2")


@settings(max_examples=60, deadline=None)
@given(polys2, polys2, polys2)
def test_ring_laws(a, b, c):
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    assert a - a == Polynomial.zero(2)


@settings(max_examples=60, deadline=None)
@given(polys2)
def test_format_parse_round_trip(p):
    assert parse_poly(format_poly(p), 2) == p


@settings(max_examples=30, deadline=None)
@given(polys2, polys2, st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_eval_is_homomorphism(a, b, x):
    x = np.array(x)
    assert np.isclose((a * b).eval(x), a.eval(x) * b.eval(x), atol=1e-9)
    assert np.isclose((a + b).eval(x), a.eval(x) + b.eval(x), atol=1e-9)


def test_grlex_order():
    mons = monomials_upto(2, 2)
    assert mons == sorted(mons, key=grlex_key)
    assert mons[0] == (0, 0)
    assert len(mons) == poly_binom(2, 2) == 6
    assert {m for m in mons if sum(m) == 1} == {(1, 0), (0, 1)}


def test_derivative():
    assert P("x1^3*x2 + x2^2").diff(0) == P("3*x1^2*x2")


def test_linear_factor_identity_basis():
    Y = decompose_linear_factor([(1, 0), (0, 1)], 2)
    assert Y.allclose(PolyMatrix.eye(2, 2))


def test_linear_factor_example_basis():
    Z = MonomialVector([(1, 0), (0, 1), (0, 2), (1, 1), (3, 1)], 2)
    Y = decompose_linear_factor(Z)
    expect = PolyMatrix.from_entries(
        [[1, 0], [0, 1], [0, P("x2")], [P("x2"), 0], [P("x1^2*x2"), 0]], 2
    )
    assert Y.allclose(expect)
    x = PolyMatrix.from_entries([[P("x1")], [P("x2")]], 2)
    assert (Y @ x).allclose(Z.as_polymatrix())


def test_linear_factor_lowest_index_tie_break():
    Y = decompose_linear_factor([(1, 1)], 2)
    assert Y.allclose(PolyMatrix.from_entries([[P("x2"), 0]], 2))


def test_linear_factor_rejects_constant():
    with pytest.raises(ValueError):
        decompose_linear_factor([(0, 0)], 2)


def test_kron_identity_one():
    v = MonomialVector([(1, 0), (0, 2)], 2).as_polymatrix()
    assert kron_expand(1, v).allclose(v)


def test_kron_denominator_identity():
    Zp = MonomialVector([(2, 0)], 2)
    K = kron_expand(2, Zp)
    assert K.allclose(PolyMatrix.from_entries([[P("x1^2"), 0], [0, P("x1^2")]], 2))
    lhs = PolyMatrix.const(np.kron(np.eye(2), np.ones((1, 1))), 2) @ K + PolyMatrix.eye(2, 2)
    assert lhs.allclose(PolyMatrix.eye(2, 2) * P("1 + x1^2"))


def test_coeff_map_cases():
    C = np.array([[1.0, 2.0], [3.0, 4.0]])
    cm = coeff_map(PolyMatrix.const(C, 2))
    assert list(cm) == [(0, 0)] and np.array_equal(cm[(0, 0)], C)
    cm = coeff_map(PolyMatrix.eye(2, 2) * P("x1"))
    assert list(cm) == [(1, 0)] and np.array_equal(cm[(1, 0)], np.eye(2))


def test_coeff_map_round_trip():
    rng = np.random.default_rng(0)
    mons = monomials_upto(2, 3)
    for _ in range(100):
        coeffs = {}
        for a in rng.choice(len(mons), size=3, replace=False):
            C = rng.standard_normal((3, 2)) * (rng.random((3, 2)) < 0.5)
            coeffs[mons[a]] = C
        M = PolyMatrix(coeffs, (3, 2), 2)
        assert from_coeff_map(coeff_map(M), (3, 2), 2) == M


def test_polymatrix_eval_matches_entries():
    M = PolyMatrix.from_entries([[P("x1*x2"), P("1")], [P("x2^2"), P("x1 - 3")]], 2)
    x = np.array([0.7, -1.3])
    expect = np.array([[x[0] * x[1], 1], [x[1] ** 2, x[0] - 3]])
    assert np.allclose(M.eval(x), expect)
    batch = M.eval(np.array([[0.7, 1.0], [-1.3, 2.0]]))
    assert batch.shape == (2, 2, 2)
    assert np.allclose(batch[0], expect)


def test_ndarray_matmul_polymatrix():
    M = PolyMatrix.from_entries([[P("x1")], [P("x2")]], 2)
    out = np.array([[1.0, 2.0]]) @ M
    assert out.allclose(PolyMatrix.from_entries([[P("x1 + 2*x2")]], 2))


def test_parse_errors():
    with pytest.raises(ValueError):
        parse_poly("x3 + 1", 2)
    with pytest.raises(ValueError):
        parse_poly("x1 +", 2)
