import numpy as np
import pytest

from ratsyn.data import assemble_consistency, generate_data, pointwise_bound, sample_members
from ratsyn.model import RationalSystem, clear_denominators, eval_dynamics
from ratsyn.poly import PolyMatrix, parse_poly
from ratsyn.sdp import FEASIBLE
from ratsyn.synth import (
    Controller,
    SynthesisOptions,
    build_performance_family,
    build_stability_family,
    certify_closed_loop,
    synthesize_stabilizing,
    variable_count,
)
from ratsyn.systems import (
    example1,
    example1_config,
    example1_form,
    example2,
    example2_config,
    example2_form,
    example2_performance,
)


@pytest.fixture(scope="module")
def ex1_cq():
    form = example1_form()
    ds = generate_data(example1(), example1_config(d=20, wbar=1e-3), 0, form=form)
    return form, assemble_consistency(ds, form.basis, pointwise_bound(1e-3, ds.N, 2))


@pytest.fixture(scope="module")
def ex2_stab():
    form = example2_form()
    ds = generate_data(example2(), example2_config(), 0, form=form)
    cq = assemble_consistency(ds, form.basis, pointwise_bound(0.1, ds.N, 2))
    res = synthesize_stabilizing(cq, form.basis, SynthesisOptions(time_limit=60))
    assert res.status == FEASIBLE
    return form, cq, res


def _random_values(fam, rng):
    out = {}
    for v in fam.variables:
        if v.kind == "psd":
            G = rng.standard_normal((v.size, v.size))
            out[v.name] = G @ G.T
        else:
            out[v.name] = rng.standard_normal(v.ncoords)
    return out


def test_example1_matrix_shape_and_symmetry(ex1_cq):
    form, cq = ex1_cq
    fam = build_stability_family(cq, form.basis)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(2, 50))
    for _ in range(5):
        Q = fam.evaluate(_random_values(fam, rng))
        assert Q.shape == (13, 13)
        vals = Q.eval(X)
        assert np.allclose(vals, np.transpose(vals, (0, 2, 1)), atol=1e-12)


def test_family_is_affine(ex1_cq):
    form, cq = ex1_cq
    fam = build_stability_family(cq, form.basis)
    rng = np.random.default_rng(1)
    a, b = _random_values(fam, rng), _random_values(fam, rng)
    s = {k: a[k] + b[k] for k in a}
    zero = {k: np.zeros_like(a[k]) for k in a}
    X = rng.uniform(-1, 1, size=(2, 20))
    lhs = fam.evaluate(s).eval(X)
    rhs = fam.evaluate(a).eval(X) + fam.evaluate(b).eval(X) - fam.evaluate(zero).eval(X)
    assert np.allclose(lhs, rhs, atol=1e-9 * max(1.0, np.abs(lhs).max()))


def test_variable_count_basis_structure():
    form = example1_form()
    assert variable_count(form.basis, SynthesisOptions(L_structure="basis")) == 14
    assert variable_count(form.basis) > 14


def test_controller_law_and_scaling():
    L0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    L = PolyMatrix.const(L0, 2)
    c = Controller(2 * np.eye(2), L, 0.1)
    x = np.array([0.4, -1.3])
    assert np.allclose(c.u(x), 0.5 * L0 @ x)
    assert np.allclose(c.u(np.zeros(2)), 0)
    scaled = Controller(2 * 7.0 * np.eye(2), L * 7.0, 0.7)
    assert np.allclose(scaled.u(x), c.u(x))
    X = np.random.default_rng(0).standard_normal((2, 10))
    assert np.allclose(c.u(X), np.array([c.u(X[:, k]) for k in range(10)]).T)
    assert np.allclose(c.V(X), [X[:, k] @ X[:, k] / 2 for k in range(10)])


def test_controller_json_round_trip(tmp_path):
    L = PolyMatrix.from_entries([[parse_poly("1.5*x1 - 0.25*x2^2", 2), parse_poly("-3", 2)]], 2)
    c = Controller(np.array([[2.0, 0.3], [0.3, 1.0]]), L, 1e-3, 1e-7, {"coef_residual": 1e-9})
    c.save(tmp_path / "c.json")
    d = Controller.load(tmp_path / "c.json")
    X = np.random.default_rng(0).standard_normal((2, 20))
    assert np.allclose(d.u(X), c.u(X), rtol=1e-12) and np.allclose(d.Ycal, c.Ycal)
    assert d.tau == c.tau and d.eps == c.eps and d.certificate == c.certificate


def test_zero_controller_on_stable_system():
    c = Controller(np.eye(1), PolyMatrix.zeros(1, 1, 1), 0.0)
    rep = certify_closed_loop(c, lambda x, u: -x + u, [[1.0], [-2.0]], T=10.0)
    assert rep.all_monotone
    assert all(f < 1e-2 for f in rep.final_norm)


def test_performance_family_shape():
    form = example2_form()
    ds = generate_data(example2(), example2_config(d=10), 0, form=form)
    cq = assemble_consistency(ds, form.basis, pointwise_bound(0.1, ds.N, 2))
    perf = example2_performance(form)
    fam = build_performance_family(cq, form.basis, perf)
    rng = np.random.default_rng(2)
    M = fam.evaluate(_random_values(fam, rng))
    size = form.n + form.basis.N_v + 2 + 2
    assert M.shape == (size, size)
    vals = M.eval(rng.uniform(-2, 2, size=(2, 20)))
    assert np.allclose(vals, np.transpose(vals, (0, 2, 1)), atol=1e-9)


def test_stability_certificate_pointwise(ex2_stab):
    """The decoded Q(x) is an SOS matrix, hence positive semidefinite pointwise."""
    form, cq, res = ex2_stab
    ctrl = res.controller
    fam = build_stability_family(cq, form.basis)
    ncoords = {v.name: v.ncoords for v in fam.variables}
    vals, _ = res.compiled.decode(res.reports[-1].x)
    assert set(vals) == set(ncoords)
    Q = fam.evaluate(vals)
    X = np.random.default_rng(3).uniform(-2, 2, size=(2, 500))
    low = [np.linalg.eigvalsh(M)[0] for M in Q.eval(X)]
    scale = max(1.0, np.abs(Q.eval(X)).max())
    assert min(low) >= -1e-6 * scale
    assert ctrl.tau >= 0 and np.linalg.eigvalsh(ctrl.Ycal)[0] >= 1e-6 - 1e-9


def test_lyapunov_decrease_on_consistent_systems(ex2_stab):
    """V' <= -eps |Xcal x|^2 for the true plant and sampled data-consistent plants."""
    form, cq, res = ex2_stab
    ctrl = res.controller
    Xc = ctrl.Xcal
    rng = np.random.default_rng(4)
    members = [(form.A, form.B, form.P)] + sample_members(form.A, form.B, form.P, cq, rng, k=10)
    X = rng.uniform(-2, 2, size=(500, 2))
    for A, B, P in members:
        f = form.with_parameters(A, B, P)
        for x in X:
            p = f.p.eval(x)
            assert p > 0
            r = f.rhs(x, ctrl.u(x))
            gx = Xc @ x
            val = 2 * p * (gx @ r) + ctrl.eps * p**2 * (gx @ gx)
            assert val <= 1e-6 * max(1.0, np.linalg.norm(gx) * np.linalg.norm(r))


def test_stabilizes_true_plant(ex2_stab):
    form, _, res = ex2_stab
    sys = example2()
    x0s = [(1.0, 2.0), (-2.0, 1.0), (3.0, 10.0)]
    rep = certify_closed_loop(res.controller, lambda x, u: eval_dynamics(sys, x, u), x0s, T=20.0)
    assert rep.all_monotone
    assert all(rep.converged(1e-3))


def test_mismatched_basis_rejected(ex1_cq):
    _, cq = ex1_cq
    sys = RationalSystem.polynomial([parse_poly("x2", 2), parse_poly("-x1", 2)], [[parse_poly("0", 2)], [parse_poly("1", 2)]])
    with pytest.raises(ValueError):
        build_stability_family(cq, clear_denominators(sys).basis)


def test_options_validation():
    with pytest.raises(ValueError):
        SynthesisOptions(mu=0)
    with pytest.raises(ValueError):
        SynthesisOptions(eps=-1)
    with pytest.raises(ValueError):
        SynthesisOptions(L_structure="diag")
