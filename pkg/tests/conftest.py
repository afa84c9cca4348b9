"""Shared model instances and solved ansatz fixtures.

Session-scoped fixtures amortize the Riccati sweeps across test modules; all
instances are small enough that the whole suite stays in the minutes range.
"""

import numpy as np
import pytest

from mfgkit import LQParams, TimeGrid, solve_master_mfc, solve_master_mfg

M1_SAMPLES = [0.5, 1.0, 2.0]

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def scalar_benchmark_params(sigma=0.3, beta=0.5):
    """A = A_bar = S = 0, B = R = Q_bar = 1: P(t) = tanh(1-t), Sigma = 0."""
    return LQParams.scalar(Q_bar=1.0, sigma=sigma, beta=beta, horizon=1.0)


def coupled_scalar_params(sigma=0.3, beta=0.5):
    """Scalar instance with every coupling switched on."""
    return LQParams.scalar(A=0.3, A_bar=-0.2, Q=0.5, Q_bar=1.0, S=0.6, S_T=0.5,
                           Q_T=0.4, Q_bar_T=0.7, sigma=sigma, beta=beta, horizon=1.0)


def coupled_2d_params(sigma_scale=1.0, beta=0.4):
    """Two-dimensional instance; Q_bar_T S_T is nonsymmetric by construction."""
    sigma = sigma_scale * np.array([[0.3, 0.0], [0.1, 0.25]])
    return LQParams(
        A=[[0.2, -0.3], [0.1, 0.0]],
        A_bar=[[0.1, 0.05], [0.0, -0.1]],
        B=[[1.0, 0.0], [0.2, 0.8]],
        Q=[[1.0, 0.2], [0.2, 0.8]],
        Q_bar=[[0.5, 0.1], [0.1, 0.3]],
        Q_T=[[0.6, 0.0], [0.0, 0.4]],
        Q_bar_T=[[0.3, 0.1], [0.1, 0.5]],
        S=[[0.4, 0.1], [-0.2, 0.3]],
        S_T=[[0.5, 0.2], [-0.1, 0.4]],
        R=[[1.0, 0.1], [0.1, 0.7]],
        sigma=sigma,
        beta=beta,
        horizon=1.0,
    )


def uncoupled_params():
    """Q_bar = Q_bar_T = 0, A_bar = 0: no mean-field interaction at all."""
    return LQParams.scalar(A=0.2, Q=1.0, Q_T=0.5, sigma=0.3, beta=0.4, horizon=1.0)


@pytest.fixture(scope="session")
def grid_mid():
    return TimeGrid(0.0, 1.0, 2000)


@pytest.fixture(scope="session")
def grid_fine():
    return TimeGrid(0.0, 1.0, 10000)


@pytest.fixture(scope="session")
def scalar_mfc(grid_fine):
    return solve_master_mfc(scalar_benchmark_params(), grid_fine, M1_SAMPLES)


@pytest.fixture(scope="session")
def scalar_mfg(grid_fine):
    return solve_master_mfg(scalar_benchmark_params(), grid_fine, M1_SAMPLES)


@pytest.fixture(scope="session")
def coupled_mfc(grid_mid):
    return solve_master_mfc(coupled_scalar_params(), grid_mid, M1_SAMPLES)


@pytest.fixture(scope="session")
def coupled_mfg(grid_mid):
    return solve_master_mfg(coupled_scalar_params(), grid_mid, M1_SAMPLES)


@pytest.fixture(scope="session")
def lq2d_mfc(grid_fine):
    return solve_master_mfc(coupled_2d_params(), grid_fine, M1_SAMPLES)


@pytest.fixture(scope="session")
def lq2d_mfg(grid_fine):
    return solve_master_mfg(coupled_2d_params(), grid_fine, M1_SAMPLES)
