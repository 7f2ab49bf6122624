import numpy as np
import pytest

from ratsyn.model import eval_dynamics
from ratsyn.sim import (
    DENOMINATOR,
    DIVERGED,
    OK,
    export_csv,
    export_vector_field,
    l2_norm,
    read_csv,
    simulate,
    vector_field,
)
from ratsyn.systems import example1, example2, pendulum_energy


def pendulum_rhs(xi, g=9.81, l=1.0):
    return np.array([xi[1], -(g / l) * np.sin(xi[0])])


def test_exponential_decay():
    tr = simulate(lambda x: -x, [1.0], 1.0, 1e-3)
    assert tr.status == OK
    assert abs(tr.final[0] - np.exp(-1)) <= 1e-9
    assert np.allclose(np.diff(tr.t), 1e-3)


def test_rk4_order():
    err = []
    for dt in (0.1, 0.05):
        tr = simulate(lambda x: -x, [1.0], 2.0, dt)
        err.append(abs(tr.final[0] - np.exp(-2.0)))
    assert 12 <= err[0] / err[1] <= 20


def test_pendulum_energy_conservation():
    tr = simulate(pendulum_rhs, [1.0, 0.0], 10.0, 1e-3)
    E = pendulum_energy(tr.X)
    assert np.max(np.abs(E - E[0])) < 1e-6


def test_example1_open_loop_diverges():
    sys = example1()
    tr = simulate(lambda x: eval_dynamics(sys, x, np.zeros(2)), [1.0, 1.0], 10.0)
    assert tr.status == DIVERGED


def test_denominator_guard_trips():
    # x' = -1 from x = 1 crosses the guard x = 0 at t = 1 between grid points
    tr = simulate(lambda x: -np.ones(1), [1.0005], 3.0, guard=lambda x: x[0])
    assert tr.status == DENOMINATOR
    assert tr.t[-1] == pytest.approx(1.0)
    assert tr.X[-1, 0] > 0


def test_denominator_error_from_dynamics():
    sys = example2()
    tr = simulate(lambda x: eval_dynamics(sys, x, np.zeros(1)), [-5.0, 0.0], 1.0)
    assert tr.status == DENOMINATOR and len(tr.t) == 1


def test_exogenous_input():
    tr = simulate(lambda x: -x, [0.0], 1.0, exogenous=lambda t: np.array([1.0]))
    assert abs(tr.final[0] - (1 - np.exp(-1))) < 1e-9
    tr = simulate(lambda x: np.zeros(1), [0.0], 1.0, exogenous=lambda t: np.array([2 * t]))
    assert abs(tr.final[0] - 1.0) < 1e-12


def test_l2_norm_cases():
    T, dt = 4.0, 1e-3
    t = np.arange(0, T + dt / 2, dt)
    c = np.tile([3.0, 4.0], (t.size, 1))
    assert np.isclose(l2_norm(c, dt), 5.0 * np.sqrt(T))
    t = np.arange(0, 10 + dt / 2, dt)
    assert abs(l2_norm(np.exp(-t), dt) - np.sqrt((1 - np.exp(-20)) / 2)) < 1e-6


def test_invalid_step():
    with pytest.raises(ValueError):
        simulate(lambda x: -x, [1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        simulate(lambda x: -x, [1.0], 1e-4, 1e-3)


def test_csv_round_trip(tmp_path):
    tr = simulate(lambda x, u: -x + u, [1.0, -2.0], 0.5, 1e-2, control=lambda x: -0.5 * x)
    export_csv(tr, tmp_path / "tr.csv")
    header = (tmp_path / "tr.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,u1,u2"
    d = read_csv(tmp_path / "tr.csv")
    assert np.allclose(d["x1"], tr.X[:, 0], rtol=1e-11, atol=0)
    assert np.allclose(d["u2"], tr.U[:, 1], rtol=1e-11, atol=0)
    assert np.array_equal(np.array([float(f"{v:.12g}") for v in tr.X[:, 1]]), d["x2"])


def test_vector_field_grid(tmp_path):
    grid = vector_field(lambda x: np.array([-x[0], x[1]]), [(-5, 5), (-5, 15)], (30, 30))
    assert grid.shape == (900, 4)
    assert np.isclose(grid[:, 0].min(), -5) and np.isclose(grid[:, 1].max(), 15)
    export_vector_field(grid, tmp_path / "vf.csv")
    assert (tmp_path / "vf.csv").read_text().startswith("x1,x2,dx1,dx2")


def test_vector_field_marks_singular_points():
    sys = example2()
    grid = vector_field(lambda x: eval_dynamics(sys, x, np.zeros(1)), [(-5, 5), (-5, 15)], (11, 3))
    assert np.isnan(grid[grid[:, 0] == -5][:, 2]).all()
