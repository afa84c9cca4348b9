"""Backward RK4 sweep, interpolation, and Simpson tail quadrature."""

import math

import numpy as np
import pytest

from mfgkit import (BlowUpError, DimensionMismatchError, OutOfRangeError,
                    TimeGrid, integrate_backward, integrate_scalar_quadrature)
from mfgkit.riccati import tail_integrals

TANH_FIELD = lambda t, x: x @ x - np.eye(1)


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    g = TimeGrid(0.0, 2.0, 4)
    assert g.h == 0.5
    assert np.allclose(g.times(), [0.0, 0.5, 1.0, 1.5, 2.0])


def test_tanh_benchmark():
    # dP/dt = P^2 - 1 with P(1) = 0 has the closed form P(t) = tanh(1 - t)
    g = TimeGrid(0.0, 1.0, 10000)
    sol = integrate_backward(TANH_FIELD, np.zeros((1, 1)), g)
    assert abs(sol.values[0, 0, 0] - math.tanh(1.0)) <= 1e-8


def test_zero_field_constant():
    g = TimeGrid(0.0, 1.0, 50)
    m = np.array([[1.0, 2.0], [2.0, -1.0]])
    sol = integrate_backward(lambda t, x: np.zeros_like(x), m, g)
    assert np.array_equal(sol.values, np.broadcast_to(m, sol.values.shape))


def test_pure_inhomogeneous_linear_in_time():
    # dP/dt = -Q_c integrates to P(t) = P_T + (T - t) Q_c
    g = TimeGrid(0.0, 1.0, 200)
    qc = np.array([[0.7, 0.1], [0.1, -0.3]])
    pt = np.array([[1.0, 0.0], [0.0, 2.0]])
    sol = integrate_backward(lambda t, x: -qc, pt, g)
    for k, t in enumerate(g.times()):
        assert np.abs(sol.values[k] - (pt + (1.0 - t) * qc)).max() < 1e-13


def test_terminal_stored_bitwise():
    g = TimeGrid(0.0, 1.0, 10)
    term = np.array([[0.123456789123456789]])
    sol = integrate_backward(TANH_FIELD, term, g)
    assert sol.values[-1][0, 0] == term[0, 0]


def test_eval_at_nodes_and_midpoint():
    g = TimeGrid(0.0, 1.0, 4)
    vals = np.arange(5, dtype=float).reshape(5, 1, 1)
    from mfgkit import RiccatiSolution, eval_at

    sol = RiccatiSolution(grid=g, values=vals)
    for k, t in enumerate(g.times()):
        assert eval_at(sol, t)[0, 0] == vals[k, 0, 0]
    assert eval_at(sol, 0.125)[0, 0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(OutOfRangeError):
        eval_at(sol, 1.5)


def test_eval_at_tanh_midtime():
    g = TimeGrid(0.0, 1.0, 10000)
    sol = integrate_backward(TANH_FIELD, np.zeros((1, 1)), g)
    assert abs(sol.eval_at(0.5)[0, 0] - math.tanh(0.5)) <= 1e-6


def test_dimension_mismatch():
    g = TimeGrid(0.0, 1.0, 10)
    with pytest.raises(DimensionMismatchError):
        integrate_backward(lambda t, x: np.zeros((3, 3)), np.zeros((2, 2)), g)


def test_blow_up_detected():
    # dP/dt = -(1 + P^2) grows like tan backward from 0; escapes before t=0
    g = TimeGrid(0.0, 2.0, 4000)
    with pytest.raises(BlowUpError):
        integrate_backward(lambda t, x: -(np.eye(1) + x @ x), np.zeros((1, 1)), g,
                           magnitude_bound=1e6)


def test_symmetry_preserved():
    # field maps symmetric to symmetric; nodes stay symmetric to 1e-12
    g = TimeGrid(0.0, 1.0, 500)
    q = np.array([[1.0, 0.3], [0.3, 2.0]])
    a = np.array([[0.1, -0.4], [0.2, 0.3]])
    field = lambda t, x: -(x @ a + a.T @ x + q - x @ x)
    sol = integrate_backward(field, q, g)
    asym = np.abs(sol.values - np.swapaxes(sol.values, 1, 2)).max()
    assert asym <= 1e-12


def test_fourth_order_convergence():
    horizon = math.tanh(1.0)
    errs = {}
    for steps in (1000, 2000):
        g = TimeGrid(0.0, 1.0, steps)
        sol = integrate_backward(TANH_FIELD, np.zeros((1, 1)), g)
        errs[steps] = abs(sol.values[0, 0, 0] - horizon)
    ratio = errs[1000] / errs[2000]
    assert 14.0 <= ratio <= 18.0, f"expected 4th-order ratio ~16, got {ratio}"


def test_quadrature_trivial_cases():
    g = TimeGrid(0.0, 1.0, 100)
    assert integrate_scalar_quadrature(lambda s: 0.0, g, 0.3) == 0.0
    assert abs(integrate_scalar_quadrature(lambda s: 1.0, g, 0.0) - 1.0) <= 1e-12
    assert integrate_scalar_quadrature(lambda s: 5.0, g, 1.0) == 0.0
    with pytest.raises(OutOfRangeError):
        integrate_scalar_quadrature(lambda s: 1.0, g, -0.5)


def test_quadrature_tanh():
    g = TimeGrid(0.0, 1.0, 1000)
    val = integrate_scalar_quadrature(lambda s: math.tanh(1.0 - s), g, 0.0)
    assert abs(val - math.log(math.cosh(1.0))) <= 1e-8


def test_tail_integrals_match_quadrature():
    g = TimeGrid(0.0, 1.0, 400)
    f = np.sin(3.0 * g.times()) + 0.5
    tails = tail_integrals(f, g)
    # closed form of the tail integral of sin(3s) + 1/2
    exact = (np.cos(3.0 * g.times()) - math.cos(3.0)) / 3.0 + 0.5 * (1.0 - g.times())
    assert np.abs(tails - exact).max() < 1e-9
