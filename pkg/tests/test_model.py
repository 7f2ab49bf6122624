import numpy as np
import pytest

from ratsyn.model import (
    DenominatorError,
    RationalSystem,
    clear_denominators,
    eval_dynamics,
    load_system,
    validate_denominators,
)
from ratsyn.poly import parse_poly
from ratsyn.systems import example1, example1_form, example2, example2_form


def test_example1_matrices():
    f = example1_form()
    assert np.array_equal(f.A, [[0, 0, 1, 0, 0], [0, 0, 0, 1, 1]])
    assert np.array_equal(f.B, [[1, 1, 0, 0], [0, 0, 1, 1]])
    assert np.array_equal(f.P, [[1.0]])
    assert f.p == parse_poly("1 + x1^2", 2)
    assert list(f.basis.Z) == [(1, 0), (0, 1), (0, 2), (1, 1), (3, 1)]
    assert list(f.basis.Z_p) == [(2, 0)]
    assert f.basis.N_v == 11


def test_polynomial_system_degenerate_denominators():
    sys = RationalSystem.polynomial([parse_poly("x2", 2), parse_poly("-x1 + x1*x2", 2)], [[parse_poly("0", 2)], [parse_poly("1", 2)]])
    f = clear_denominators(sys)
    assert f.p == parse_poly("1", 2)
    assert f.basis.N_p == 0 and f.P.size == 0
    assert f.basis.N_v == f.basis.N_z + f.basis.N_u


def test_example2_clearing_identity():
    sys, f = example2(), example2_form()
    assert f.p_scale == 5.0
    assert f.p == parse_poly("1 + 0.2*x1", 2)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.uniform(-3, 3, 2)
        u = rng.uniform(-5, 5, 1)
        assert np.allclose(f.p.eval(x) * eval_dynamics(sys, x, u), f.rhs(x, u), atol=1e-10)
    # first row cleared by 5 + x1
    x, u = np.array([0.4, -1.1]), np.array([2.0])
    raw = -x[0] - (5 + x[0]) * (x[0] - x[1]) + (5 + x[0]) * u[0]
    assert np.isclose(f.p_scale * f.rhs(x, u)[0], raw)


def test_example1_dynamics_points():
    sys = example1()
    assert np.allclose(eval_dynamics(sys, [0, 0], [0, 0]), 0)
    assert np.allclose(eval_dynamics(sys, [1, 1], [0, 0]), [0.5, 1.0])


def test_polyform_consistency_random_points():
    sys, f = example1(), example1_form()
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x = rng.uniform(-2, 2, 2)
        u = rng.uniform(-5, 5, 2)
        assert np.max(np.abs(f.p.eval(x) * eval_dynamics(sys, x, u) - f.rhs(x, u))) < 1e-10


def test_denominator_guard():
    with pytest.raises(DenominatorError):
        eval_dynamics(example2(), [-5.0, 0.0], [0.0])


def test_validate_denominators():
    r1 = validate_denominators(example1(), [(-5, 5), (-5, 5)])
    assert r1.box_min >= 1.0 and not r1.sign_change
    r2 = validate_denominators(example2(), [(-10, 10), (-10, 10)])
    assert r2.sign_change and r2.global_claim is False
    const = RationalSystem.polynomial([parse_poly("-x1", 1)], [[parse_poly("1", 1)]])
    assert validate_denominators(const, [(-1, 1)]).global_claim is True


def test_origin_must_be_steady_state():
    with pytest.raises(ValueError):
        RationalSystem.from_dict({"n": 1, "m": 1, "drift_num": ["x1 + 1"], "input_num": [["1"]]})


def test_explicit_basis_must_cover():
    with pytest.raises(ValueError):
        clear_denominators(example1(), Z=[(1, 0), (0, 1)])


def test_load_system_toml(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text('[system]\nn = 2\nm = 2\ndrift_num = ["x2^2", "x1*x2"]\ndrift_den = ["1 + x1^2", "1"]\ninput_num = [["1", "0"], ["0", "x2"]]\n')
    sys = load_system(path)
    assert np.allclose(eval_dynamics(sys, [1, 1], [0, 0]), [0.5, 1.0])
