"""Interbank lending model: scalar backward flow, closed-form solution on the
spread/mean split, equilibrium feedback, N-bank simulation, and the scalar
Master-equation residual.

The closed form solves the Master equation identically on the unit-mass slice
(and on the zero-first-moment slice); off both slices the flow term leaves the
exact defect (x - y) P (alpha + lam + P) y (m1 - 1), which the residual
reports faithfully.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .kernels import halfgrid_constant, rk4_backward_affine_quadratic
from .lq_model import MeasureMoments
from .master_residual import TERM_NAMES, ResidualReport
from .mckean_vlasov import BrownianPath, _rng
from .riccati import RiccatiSolution, TimeGrid, tail_integrals


@dataclass(frozen=True)
class SystemicParams:
    """Bank-lending model data: mean reversion, incentive, penalties, noises."""

    alpha: float
    lam: float
    mu: float
    c: float
    sigma: float
    beta: float
    T: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("alpha must be > 0")
        # strict inequality is the convexity condition; the boundary mu = lam^2
        # is admitted as the degenerate case with the zero solution
        if self.mu - self.lam**2 < 0.0:
            raise ValueError("convexity requires mu - lam^2 >= 0")
        if self.c < 0.0 or self.sigma < 0.0 or self.beta < 0.0:
            raise ValueError("c, sigma, beta must be >= 0")
        if self.T <= 0.0:
            raise ValueError("T must be > 0")


def stationary_value(p: SystemicParams) -> float:
    """Stable fixed point of the backward flow."""
    al = p.alpha + p.lam
    return -al + math.sqrt(al**2 + p.mu - p.lam**2)


@dataclass(frozen=True)
class SystemicSolution:
    params: SystemicParams
    grid: TimeGrid
    P: RiccatiSolution
    tail_P: np.ndarray  # integral of P from each node to T

    def P_at(self, t: float) -> float:
        return float(self.P.eval_at(t)[0, 0])

    def _integral_P(self, t: float) -> float:
        i, w = self.grid.locate(t)
        if w == 0.0:
            return float(self.tail_P[i])
        if w == 1.0:
            return float(self.tail_P[i + 1])
        ts = self.grid.times()
        pv = self.P.values[:, 0, 0]
        f_t = (1.0 - w) * pv[i] + w * pv[i + 1]
        return float(self.tail_P[i + 1] + 0.5 * (ts[i + 1] - t) * (f_t + pv[i + 1]))

    def R(self, m1: float, t: float) -> float:
        p = self.params
        return 0.5 * (p.sigma**2 + p.beta**2 * (m1 - 1.0) ** 2) * self._integral_P(t)

    def dR_dm1(self, m1: float, t: float) -> float:
        return self.params.beta**2 * (m1 - 1.0) * self._integral_P(t)

    def d2R_dm12(self, m1: float, t: float) -> float:
        return self.params.beta**2 * self._integral_P(t)


def solve_systemic(p: SystemicParams, grid: TimeGrid) -> SystemicSolution:
    """Backward sweep of dP/dt = 2(alpha+lam) P + P^2 - (mu - lam^2), P(T) = c."""
    if abs(grid.t_end - p.T) > 1e-12 * max(1.0, p.T):
        raise GridMismatchError("grid must end at the horizon T")
    al = p.alpha + p.lam
    P = rk4_backward_affine_quadratic(
        grid,
        terminal=np.array([[p.c]]),
        C_half=halfgrid_constant(np.array([[-(p.mu - p.lam**2)]]), grid.num_steps),
        L_half=halfgrid_constant(np.array([[al]]), grid.num_steps),
        D_half=halfgrid_constant(np.array([[al]]), grid.num_steps),
        W=np.array([[1.0]]),
        q=1.0,
        symmetrize=True,
    )
    return SystemicSolution(params=p, grid=grid, P=P,
                            tail_P=tail_integrals(P.values[:, 0, 0], grid))


def eval_U_systemic(sol: SystemicSolution, x: float, mom: MeasureMoments, t: float) -> float:
    y = float(mom.y[0])
    return 0.5 * (x - y) ** 2 * sol.P_at(t) + sol.R(mom.m1, t)


def equilibrium_feedback(sol: SystemicSolution, x: float, y: float, t: float) -> float:
    """Optimal lending rate (lam + P(t)) (y - x)."""
    return (sol.params.lam + sol.P_at(t)) * (y - x)


def b_field(sol: SystemicSolution, x: float, mom: MeasureMoments, t: float) -> dict:
    """Martingale coefficient of the backward HJB, both readings.

    'definition' integrates the measure derivative against the density
    gradient, which carries the P(t) factor and the mass; 'paper' is the bare
    spread (x - y).
    """
    y = float(mom.y[0])
    return {
        "definition": (x - y) * sol.P_at(t) * mom.m1,
        "paper": x - y,
    }


@dataclass(frozen=True)
class BankSimResult:
    times: np.ndarray
    mean: np.ndarray        # ensemble mean path
    y_ref: np.ndarray       # y0 + beta b(t) reference on the same common path
    spread_var: np.ndarray  # cross-sectional variance of x^i - xbar
    final_states: np.ndarray


def simulate_banks(p: SystemicParams, sol: SystemicSolution, N: int, x0,
                   seed: int, replication: int = 0) -> BankSimResult:
    """Euler simulation of N banks under the equilibrium feedback.

    The feedback consumes the ensemble mean (the self-consistent finite-N
    reading); the exogenous reference y0 + beta b(t) integrates on the same
    common path for comparison.
    """
    if N < 2:
        raise ValueError("need N >= 2 banks")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (N,):
        raise ValueError(f"x0 must have shape ({N},)")
    grid = sol.grid
    h = grid.h
    path = BrownianPath.generate(grid, 1, seed, replication=replication)
    rng_idio = _rng(seed, 1, replication)
    sqrt_h = math.sqrt(h)
    P_vals = sol.P.values[:, 0, 0]

    num = grid.num_steps
    mean = np.empty(num + 1)
    spread_var = np.empty(num + 1)
    mean[0] = x.mean()
    spread_var[0] = x.var()
    y0 = x.mean()
    y_ref = y0 + p.beta * path.cumulative()[:, 0]
    for k in range(num):
        xbar = x.mean()
        rate = p.alpha + p.lam + P_vals[k]
        dw = rng_idio.normal(0.0, sqrt_h, size=N)
        x = x + h * rate * (xbar - x) + p.sigma * dw + p.beta * path.increments[k, 0]
        mean[k + 1] = x.mean()
        spread_var[k + 1] = x.var()
    return BankSimResult(times=grid.times(), mean=mean, y_ref=y_ref,
                         spread_var=spread_var, final_states=x)


def _du_dt(sol: SystemicSolution, x: float, mom: MeasureMoments, node: int) -> float:
    ts = sol.grid.times()
    h = sol.grid.h
    u = [eval_U_systemic(sol, x, mom, ts[node + k]) for k in (-2, -1, 1, 2)]
    return (u[0] - 8.0 * u[1] + 8.0 * u[2] - u[3]) / (12.0 * h)


def residual_systemic(sol: SystemicSolution, samples) -> ResidualReport:
    """Term-by-term Master-equation residual of the closed-form solution."""
    p = sol.params
    grid = sol.grid
    residuals = np.empty(len(samples))
    all_terms = []
    points = []
    for k, (x, mom, t) in enumerate(samples):
        x = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        node = min(max(grid.nearest_node(t), 2), grid.num_steps - 2)
        t_node = grid.times()[node]
        P_t = sol.P_at(t_node)
        y, m1 = float(mom.y[0]), mom.m1
        q = (x - y) * P_t
        terms = {
            "time_derivative": -_du_dt(sol, x, mom, node),
            "second_order_x": -0.5 * (p.sigma**2 + p.beta**2) * P_t,
            "measure_laplacian": 0.0,
            # - d_xi(dU/dm) . G contracted: integral of (y - xi) dm = y (m1 - 1)
            "measure_flow": (x - y) * P_t * (p.alpha + p.lam + P_t) * y * (m1 - 1.0),
            "double_measure": -0.5 * p.beta**2 * P_t * m1**2,
            "div_cross": p.beta**2 * P_t * m1,
            "hamiltonian_side": (0.5 * (p.mu - p.lam**2) * (y - x) ** 2
                                 + (p.alpha + p.lam) * (y - x) * q - 0.5 * q**2),
        }
        lhs = sum(terms[name] for name in TERM_NAMES if name != "hamiltonian_side")
        residuals[k] = lhs - terms["hamiltonian_side"]
        all_terms.append(terms)
        points.append((np.array([x]), mom, float(t_node)))
    return ResidualReport(
        sample_points=points,
        residuals=residuals,
        max_abs=float(np.abs(residuals).max()) if len(samples) else 0.0,
        terms=all_terms,
    )


def draw_systemic_samples(grid: TimeGrid, count: int, m1_values, seed: int,
                          unit_mass_only: bool = False) -> list:
    """Random (x, moments, t) samples on interior nodes.

    The closed form solves the equation on the m1 = 1 slice for any first
    moment and on the y = 0 slice for any mass, so off-unit masses draw y = 0.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(8,)))
    ts = grid.times()
    m1_values = list(m1_values)
    samples = []
    for k in range(count):
        x = float(rng.uniform(-2.0, 2.0))
        m1 = m1_values[k % len(m1_values)]
        if unit_mass_only:
            m1 = 1.0
        ybar = float(rng.uniform(-1.0, 1.0)) if m1 == 1.0 else 0.0
        var = float(rng.uniform(0.1, 1.0))
        mom = MeasureMoments.gaussian([ybar], [[var]], m1=m1)
        node = int(rng.integers(2, grid.num_steps - 1))
        samples.append((np.array([x]), mom, float(ts[node])))
    return samples
