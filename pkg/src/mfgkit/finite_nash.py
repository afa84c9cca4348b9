"""Finite-player machinery: empirical measures, the N-player value functions
built from the game-type solution, the N-player PDE-system residual, and the
empirical-measure derivative identities with their quadratic-functional
testbed.

The coupling drift in the system residual evaluates the mean-field drift at
the *residual owner's* empirical measure (the fixed-vector-field reading of
the first derivative identity); with that reading the sigma = 0 reduction is
exact and the only defect is the idiosyncratic second-order term of order
1/(N-1).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import KindMismatchError
from .lq_model import (MFG, LQParams, MasterAnsatz, MeasureMoments, hamiltonian,
                       optimal_drift)
from .mckean_vlasov import BrownianPath, _rng, default_threads
from .riccati import TimeGrid

FD_GRAD_STEP = 1e-6
FD_HESS_STEP = 1e-3


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform atomic measure on K points with a common weight."""

    points: np.ndarray  # (K, n)
    weight: float

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise ValueError("need at least one point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def moments(self) -> MeasureMoments:
        return MeasureMoments.from_points(self.points, self.weight)


class QuadraticFunctional:
    """Symmetric-kernel pair functional F(m) = integral of K(u, v) dm(u) dm(v).

    Holds the kernel value and its closed-form first/second derivatives in the
    first argument; the kernel must satisfy K(u, v) = K(v, u).
    """

    def __init__(self, value: Callable, grad_u: Callable, hess_uu: Callable,
                 hess_uv: Callable):
        self.value = value
        self.grad_u = grad_u
        self.hess_uu = hess_uu
        self.hess_uv = hess_uv

    @classmethod
    def quadratic(cls, W, G=None, c=None, const: float = 0.0) -> "QuadraticFunctional":
        """Kernel u'Wv + (u'Gu + v'Gv)/2 + c'(u+v) + const with W, G symmetric."""
        W = np.atleast_2d(np.asarray(W, dtype=float))
        n = W.shape[0]
        G = np.zeros((n, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
        c = np.zeros(n) if c is None else np.atleast_1d(np.asarray(c, dtype=float))
        for name, m in (("W", W), ("G", G)):
            if np.abs(m - m.T).max() > 1e-12 * max(1.0, np.abs(m).max()):
                raise ValueError(f"{name} must be symmetric for an exchangeable kernel")

        def value(u, v):
            return float(u @ W @ v + 0.5 * (u @ G @ u + v @ G @ v) + c @ (u + v) + const)

        return cls(
            value=value,
            grad_u=lambda u, v: W @ v + G @ u + c,
            hess_uu=lambda u, v: G,
            hess_uv=lambda u, v: W,
        )

    def phi(self, points: np.ndarray, weight: float) -> float:
        """F at the uniform atomic measure: weight^2 sum_{j,k} K(x_j, x_k)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        total = 0.0
        for xj in pts:
            for xk in pts:
                total += self.value(xj, xk)
        return weight**2 * total


def u_i_from_master(ans: MasterAnsatz, states: np.ndarray, i: int, t: float) -> float:
    """Player i's value: U at (x_i, empirical measure of the other N-1 states)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    N = states.shape[0]
    if N < 2:
        raise ValueError("need at least two players")
    if not 0 <= i < N:
        raise IndexError(f"player index {i} out of range for N={N}")
    others = np.delete(states, i, axis=0)
    mom = EmpiricalMeasure(others, 1.0 / (N - 1)).moments()
    return ans.eval_U(states[i], mom, t)


def nash_system_residual(ans: MasterAnsatz, states: np.ndarray, t: float) -> np.ndarray:
    """Residual of the N-player PDE system on u^i built from the game solution.

    Player-coordinate derivatives of the quadratic u^i are closed-form; the
    time derivative uses the solved coefficient ODE right-hand sides, so the
    sigma = 0 case checks the algebraic reduction at machine precision.
    """
    if ans.kind != MFG:
        raise KindMismatchError("nash_system_residual needs a game-type ansatz")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    N = states.shape[0]
    if N < 2:
        raise ValueError("need at least two players")
    p = ans.params
    W, b2 = p.W, p.beta**2
    P = ans.P.eval_at(t)
    S = ans.sigma(1.0).eval_at(t)
    G = ans.gamma(1.0).eval_at(t)

    # coefficient ODE right-hand sides at m1 = 1
    Pd = -(P @ p.A + p.A.T @ P - P @ W @ P + p.Q + p.Q_bar)
    Sd = -(S @ (p.A + p.A_bar - W @ P) + (p.A.T - P @ W) @ S - S @ W @ S
           - p.Q_bar @ p.S + P @ p.A_bar)
    M = p.A + p.A_bar - W @ (P + S)
    Gd = -(G @ M + M.T @ G + p.S.T @ p.Q_bar @ p.S - S.T @ W @ S
           + S.T @ p.A_bar + p.A_bar.T @ S)
    mud = -(0.5 * np.tensordot(p.a, P) + 0.5 * b2 * np.trace(P)
            + 0.5 * b2 * np.trace(G) + b2 * np.trace(S))

    second_idio = 0.5 * np.tensordot(p.a, P) + 0.5 * np.tensordot(p.a, G) / (N - 1)
    second_common = 0.5 * b2 * (np.trace(P) + 2.0 * np.trace(S) + np.trace(G))

    res = np.empty(N)
    for i in range(N):
        xi = states[i]
        others = np.delete(states, i, axis=0)
        yi = others.mean(axis=0)
        mom_i = MeasureMoments.from_points(others, 1.0 / (N - 1))
        dudt = float(0.5 * xi @ Pd @ xi + xi @ Sd @ yi + 0.5 * yi @ Gd @ yi + mud)
        dju = (S.T @ xi + G @ yi) / (N - 1)
        coupling = 0.0
        for xj in others:
            qj = P @ xj + S @ yi
            coupling += float(dju @ optimal_drift(p, xj, mom_i, qj))
        ham = hamiltonian(p, xi, mom_i, P @ xi + S @ yi)
        res[i] = -dudt - second_idio - second_common - coupling - ham
    return res


# -- finite-difference machinery on Phi(x^1, ..., x^K) -----------------------


def _phi_flat(F: QuadraticFunctional, flat: np.ndarray, shape, weight: float) -> float:
    return F.phi(flat.reshape(shape), weight)


def _grad_block_fd(F, points, weight, j, h=FD_GRAD_STEP) -> np.ndarray:
    shape = points.shape
    flat = points.ravel().copy()
    n = shape[1]
    out = np.empty(n)
    for a in range(n):
        idx = j * n + a
        flat[idx] += h
        up = _phi_flat(F, flat, shape, weight)
        flat[idx] -= 2 * h
        dn = _phi_flat(F, flat, shape, weight)
        flat[idx] += h
        out[a] = (up - dn) / (2.0 * h)
    return out


def _hess_entry_fd(F, points, weight, idx1, idx2, h=FD_HESS_STEP) -> float:
    shape = points.shape
    flat = points.ravel().copy()

    def f(d1, d2):
        flat[idx1] += d1
        flat[idx2] += d2
        val = _phi_flat(F, flat, shape, weight)
        flat[idx1] -= d1
        flat[idx2] -= d2
        return val

    if idx1 == idx2:
        # five-point second derivative
        return (-f(2 * h, 0) + 16 * f(h, 0) - 30 * f(0, 0) + 16 * f(-h, 0) - f(-2 * h, 0)) \
            / (12.0 * h * h)
    return (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)


def _as_field(B, n: int) -> Callable:
    if callable(B):
        return lambda x: np.atleast_1d(np.asarray(B(x), dtype=float))
    vec = np.atleast_1d(np.asarray(B, dtype=float))
    if vec.shape != (n,):
        raise ValueError(f"constant field must have shape ({n},)")
    return lambda x: vec


def prop61_first_identity(F: QuadraticFunctional, points, B,
                          weight: float | None = None) -> tuple[float, float]:
    """First derivative identity: measure side analytically, player side by FD."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    K, n = pts.shape
    w = 1.0 / K if weight is None else float(weight)
    field = _as_field(B, n)
    lhs = 0.0
    for xj in pts:
        bj = field(xj)
        for xk in pts:
            lhs += 2.0 * w**2 * float(F.grad_u(xj, xk) @ bj)
    rhs = 0.0
    for j, xj in enumerate(pts):
        rhs += float(_grad_block_fd(F, pts, w, j) @ field(xj))
    return lhs, rhs


def prop61_second_identity(F: QuadraticFunctional, points,
                           weight: float | None = None) -> tuple[float, float]:
    """Second-order identity: Laplacian-plus-cross measure terms vs full Hessian trace."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    K, n = pts.shape
    w = 1.0 / K if weight is None else float(weight)
    lhs = 0.0
    for xj in pts:
        for xk in pts:
            lhs += 2.0 * w**2 * (float(np.trace(F.hess_uu(xj, xk)))
                                 + float(np.trace(F.hess_uv(xj, xk))))
    rhs = 0.0
    for j in range(K):
        for k in range(K):
            for a in range(n):
                rhs += _hess_entry_fd(F, pts, w, j * n + a, k * n + a)
    return lhs, rhs


@dataclass(frozen=True)
class Prop61Third:
    lhs: float
    rhs: float
    gap: float
    rhs_first_argument_convention: float


def prop61_third_identity(F: QuadraticFunctional, points, a_matrix,
                          weight: float | None = None) -> Prop61Third:
    """Diffusion-contraction relation; exact only in the first-argument convention.

    ``rhs`` is the true total second derivative of the player function (finite
    differences); ``rhs_first_argument_convention`` differentiates the kernel
    in its first slot only, which reproduces the measure side exactly. The gap
    between the two readings is O(1/K).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    K, n = pts.shape
    w = 1.0 / K if weight is None else float(weight)
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    lhs = 0.0
    for xj in pts:
        for xk in pts:
            lhs += 2.0 * w**2 * float(np.tensordot(a, F.hess_uu(xj, xk)))
    rhs = 0.0
    for j in range(K):
        for al in range(n):
            for be in range(n):
                if a[al, be] == 0.0:
                    continue
                rhs += a[al, be] * _hess_entry_fd(F, pts, w, j * n + al, j * n + be)
    return Prop61Third(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs),
                       rhs_first_argument_convention=lhs)


def nash_feedback(ans: MasterAnsatz, i: int) -> Callable:
    """Equilibrium feedback of player i from the game solution."""
    p = ans.params
    Rinv_Bt = np.linalg.solve(p.R, p.B.T)

    def fb(states: np.ndarray, t: float) -> np.ndarray:
        others = np.delete(states, i, axis=0)
        q = ans.P.eval_at(t) @ states[i] + ans.sigma(1.0).eval_at(t) @ others.mean(axis=0)
        return -(Rinv_Bt @ q)

    return fb


def finite_player_cost(p: LQParams, states0, feedbacks: Sequence[Callable],
                       grid: TimeGrid, seed: int, replications: int,
                       threads: int | None = None) -> np.ndarray:
    """Monte Carlo cost of each player under given feedbacks; returns (N, 2) mean/SE.

    Dynamics: per-player idiosyncratic noise plus the shared common noise;
    every player's mean-field argument is the empirical measure of the others.
    """
    states0 = np.atleast_2d(np.asarray(states0, dtype=float))
    N, n = states0.shape
    if len(feedbacks) != N:
        raise ValueError("need one feedback per player")
    h = grid.h
    times = grid.times()

    def y_others(states):
        total = states.sum(axis=0)
        return (total - states) / (N - 1)

    def running_cost(states, v, y_o):
        dev = states - y_o @ p.S.T
        return 0.5 * (np.einsum("ni,ij,nj->n", states, p.Q, states)
                      + np.einsum("ni,ij,nj->n", v, p.R, v)
                      + np.einsum("ni,ij,nj->n", dev, p.Q_bar, dev))

    def one_rep(rep: int) -> np.ndarray:
        path = BrownianPath.generate(grid, n, seed, replication=rep)
        rng_idio = _rng(seed, 1, rep)
        states = states0.copy()
        sqrt_h = np.sqrt(h)
        f_vals = np.empty((grid.num_steps + 1, N))
        for k in range(grid.num_steps):
            y_o = y_others(states)
            v = np.stack([feedbacks[i](states, times[k]) for i in range(N)])
            f_vals[k] = running_cost(states, v, y_o)
            drift = states @ p.A.T + y_o @ p.A_bar.T + v @ p.B.T
            dw = rng_idio.normal(0.0, sqrt_h, size=(N, n))
            states = states + h * drift + dw @ p.sigma.T + p.beta * path.increments[k]
        y_o = y_others(states)
        v = np.stack([feedbacks[i](states, times[-1]) for i in range(N)])
        f_vals[-1] = running_cost(states, v, y_o)
        dev_T = states - y_o @ p.S_T.T
        terminal = 0.5 * (np.einsum("ni,ij,nj->n", states, p.Q_T, states)
                          + np.einsum("ni,ij,nj->n", dev_T, p.Q_bar_T, dev_T))
        running = h * (f_vals.sum(axis=0) - 0.5 * (f_vals[0] + f_vals[-1]))
        return running + terminal

    workers = threads if threads is not None else default_threads()
    costs = np.empty((replications, N))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for rep, val in enumerate(pool.map(one_rep, range(replications))):
                costs[rep] = val
    else:
        for rep in range(replications):
            costs[rep] = one_rep(rep)
    out = np.empty((N, 2))
    out[:, 0] = costs.mean(axis=0)
    out[:, 1] = costs.std(axis=0, ddof=1) / np.sqrt(replications)
    return out
