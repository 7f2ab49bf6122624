"""Benchmark plants with their data-generation settings."""

from __future__ import annotations

import numpy as np

from .data import GenConfig
from .lift import LiftingRule, SymbolicSystem, polynomialize
from .model import PolyForm, RationalSystem, clear_denominators
from .synth import PerformanceIndex

# basis ordering used in the original write-up of the first example
EX1_Z = [(1, 0), (0, 1), (0, 2), (1, 1), (3, 1)]
EX1_H = [[(0, 0), (2, 0)], [(0, 1), (2, 1)]]


def example1() -> RationalSystem:
    """``x1' = x2^2/(1+x1^2) + u1``, ``x2' = x1 x2 + x2 u2``; open-loop unstable."""
    return RationalSystem.from_dict(
        {
            "name": "example1",
            "n": 2,
            "m": 2,
            "drift_num": ["x2^2", "x1*x2"],
            "drift_den": ["1 + x1^2", "1"],
            "input_num": [["1", "0"], ["0", "x2"]],
        }
    )


def example1_form() -> PolyForm:
    return clear_denominators(example1(), Z=EX1_Z, H_blocks=EX1_H)


def example1_config(d: int = 4, N_d: int = 5, wbar: float = 1e-4) -> GenConfig:
    return GenConfig(d, N_d, 1e-3, [(-1, 1)] * 2, [(-5, 5)] * 2, wbar)


def example2() -> RationalSystem:
    """Two-compartment drug distribution model; its denominator vanishes at ``x1 = -5``."""
    return RationalSystem.from_dict(
        {
            "name": "example2",
            "n": 2,
            "m": 1,
            "drift_num": ["-x1 - (5 + x1)*(x1 - x2)", "x1 - x2"],
            "drift_den": ["5 + x1", "1"],
            "input_num": [["1"], ["0"]],
        }
    )


def example2_form() -> PolyForm:
    return clear_denominators(example2())


def example2_config(d: int = 40, N_d: int = 5, wbar: float = 0.1) -> GenConfig:
    return GenConfig(d, N_d, 1e-3, [(-2, 2)] * 2, [(-5, 5)], wbar)


def example2_performance(form: PolyForm, gamma: float = 400.0) -> PerformanceIndex:
    """L2-gain ``gamma`` from ``w_p`` (entering every state) to ``z_p = x``."""
    n, Z = form.n, form.basis.Z
    C = np.zeros((n, len(Z)))
    for i in range(n):
        e = tuple(1 if k == i else 0 for k in range(n))
        C[i, Z.index(e)] = 1.0
    return PerformanceIndex.l2_gain(gamma, np.eye(n), C, np.zeros((n, form.m)))


PENDULUM = {"b": 0.0, "m": 1.0, "g": 9.81, "l": 1.0}


def pendulum(b=0.0, m=1.0, g=9.81, l=1.0):
    """Pendulum lifted with ``sin(xi1)`` and ``cos(xi1)``."""
    sys = SymbolicSystem.from_strings(["xi2", f"-{b / m!r}*xi2 - {g / l!r}*sin(xi1)"], [["0"], ["1"]], name="pendulum")
    return polynomialize(sys, [LiftingRule("sin", 1), LiftingRule("cos", 1)])


def pendulum_config(d: int = 1, N_d: int = 2000, wbar: float = 1e-4) -> GenConfig:
    return GenConfig(d, N_d, 1e-3, [(-2, 2)] * 2, [(-10, 10)], wbar, B_w=np.eye(4))


def pendulum_energy(xi, g=9.81, l=1.0) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return 0.5 * xi[..., 1] ** 2 - (g / l) * np.cos(xi[..., 0])
