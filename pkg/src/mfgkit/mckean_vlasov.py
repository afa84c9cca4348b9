"""Conditional-law dynamics under common noise: particle systems, the
conditional-mean SDE, the backward component r and scalar s, and Monte Carlo
cost estimation.

RNG contract: every stochastic object derives its stream from
(seed, stream-kind, replication) SeedSequence keys. Replications are the unit
of parallelism, so serial and threaded runs produce bitwise-identical output.
Within a replication the idiosyncratic block is drawn in one fixed order and
particles index its columns.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError
from .kernels import halfgrid_from_nodes
from .lq_model import MFC, LQParams, MasterAnsatz, MeasureMoments, hamiltonian
from .riccati import TimeGrid, tail_integrals

_COMMON, _IDIO, _INIT = 0, 1, 2


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("MFGKIT_THREADS", "1")))
    except ValueError:
        return 1


def _rng(seed: int, kind: int, replication: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(kind, replication))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class BrownianPath:
    """Common-noise increments over one grid; same seed -> same path bitwise."""

    grid: TimeGrid
    increments: np.ndarray  # (num_steps, n), each row ~ N(0, h I)
    seed: int

    @classmethod
    def generate(cls, grid: TimeGrid, dim: int, seed: int, replication: int = 0
                 ) -> "BrownianPath":
        rng = _rng(seed, _COMMON, replication)
        inc = rng.normal(0.0, np.sqrt(grid.h), size=(grid.num_steps, dim))
        return cls(grid=grid, increments=inc, seed=seed)

    def cumulative(self) -> np.ndarray:
        """b(t) at the nodes, b(t_start) = 0."""
        out = np.zeros((self.grid.num_steps + 1, self.increments.shape[1]))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


@dataclass(frozen=True)
class ParticleEnsemble:
    count: int
    states: np.ndarray  # (N, n)
    idio_seed: int      # block-stream seed; particles index columns of the block
    time_index: int


@dataclass(frozen=True)
class ParticleSimResult:
    times: np.ndarray
    means: np.ndarray        # (num_steps + 1, n) empirical mean path
    final: ParticleEnsemble
    states_history: np.ndarray | None = None  # (num_steps + 1, N, n) if recorded


@dataclass(frozen=True)
class FundamentalMatrix:
    """Two-parameter linear flow stored as per-step transition matrices."""

    grid: TimeGrid
    step_transitions: np.ndarray  # (num_steps, n, n); entry k maps t_k -> t_{k+1}

    @classmethod
    def from_generator_halfgrid(cls, grid: TimeGrid, gen_half: np.ndarray
                                ) -> "FundamentalMatrix":
        """One RK4 step per interval of dPhi/dt = F(t) Phi."""
        n = gen_half.shape[1]
        h = grid.h
        eye = np.eye(n)
        steps = np.empty((grid.num_steps, n, n))
        for k in range(grid.num_steps):
            f0, fm, f1 = gen_half[2 * k], gen_half[2 * k + 1], gen_half[2 * k + 2]
            k1 = f0
            k2 = fm @ (eye + 0.5 * h * k1)
            k3 = fm @ (eye + 0.5 * h * k2)
            k4 = f1 @ (eye + h * k3)
            steps[k] = eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return cls(grid=grid, step_transitions=steps)

    def flow(self, to_index: int, from_index: int) -> np.ndarray:
        """Phi(t_to, t_from) for grid nodes, to_index >= from_index."""
        if to_index < from_index:
            raise ValueError("flow needs to_index >= from_index")
        n = self.step_transitions.shape[1]
        out = np.eye(n)
        for k in range(from_index, to_index):
            out = self.step_transitions[k] @ out
        return out


def _check_grid(ans: MasterAnsatz, path: BrownianPath):
    if path.grid != ans.grid:
        raise GridMismatchError("path grid differs from ansatz grid")


def _mean_generator_nodes(ans: MasterAnsatz) -> np.ndarray:
    """A + A_bar - W (P + Sigma) at the nodes: the conditional-mean generator."""
    p = ans.params
    return p.A + p.A_bar - p.W @ (ans.P.values + ans.sigma(1.0).values)


def mean_flow_matrix(ans: MasterAnsatz) -> FundamentalMatrix:
    return FundamentalMatrix.from_generator_halfgrid(
        ans.grid, halfgrid_from_nodes(_mean_generator_nodes(ans))
    )


def simulate_conditional_mean(ans: MasterAnsatz, y0, path: BrownianPath) -> np.ndarray:
    """Euler path of the conditional-mean SDE driven by the common noise."""
    _check_grid(ans, path)
    p = ans.params
    h = ans.grid.h
    gen = _mean_generator_nodes(ans)
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    out = np.empty((ans.grid.num_steps + 1, p.n))
    out[0] = y
    for k in range(ans.grid.num_steps):
        y = y + h * (gen[k] @ y) + p.beta * path.increments[k]
        out[k + 1] = y
    return out


def _init_states(m0_mean, m0_cov, count: int, rng: np.random.Generator) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(m0_mean, dtype=float))
    cov = np.atleast_2d(np.asarray(m0_cov, dtype=float))
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise ValueError("m0_cov must be positive semi-definite")
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    z = rng.normal(size=(count, mean.shape[0]))
    return mean + z @ factor.T


def simulate_particles(ans: MasterAnsatz, N: int, m0_mean, m0_cov, path: BrownianPath,
                       idio_seed: int | None = None, replication: int = 0,
                       record_states: bool = False) -> ParticleSimResult:
    """Interacting particles under the optimal feedback, sharing the common path.

    Each particle uses the empirical mean of the ensemble itself as the
    mean-field argument.
    """
    if N < 2:
        raise ValueError("need N >= 2 particles")
    _check_grid(ans, path)
    p = ans.params
    h = ans.grid.h
    seed = path.seed if idio_seed is None else idio_seed
    rng_init = _rng(seed, _INIT, replication)
    rng_idio = _rng(seed, _IDIO, replication)
    states = _init_states(m0_mean, m0_cov, N, rng_init)

    P_nodes = ans.P.values
    S_nodes = ans.sigma(1.0).values
    sqrt_h = np.sqrt(h)
    num = ans.grid.num_steps
    means = np.empty((num + 1, p.n))
    history = np.empty((num + 1, N, p.n)) if record_states else None
    means[0] = states.mean(axis=0)
    if record_states:
        history[0] = states
    for k in range(num):
        ybar = states.mean(axis=0)
        drift_own = states @ (p.A - p.W @ P_nodes[k]).T
        drift_mean = (p.A_bar - p.W @ S_nodes[k]) @ ybar
        dw = rng_idio.normal(0.0, sqrt_h, size=(N, p.n))
        states = states + h * (drift_own + drift_mean) + dw @ p.sigma.T \
            + p.beta * path.increments[k]
        means[k + 1] = states.mean(axis=0)
        if record_states:
            history[k + 1] = states
    final = ParticleEnsemble(count=N, states=states, idio_seed=seed, time_index=num)
    return ParticleSimResult(times=ans.grid.times(), means=means, final=final,
                             states_history=history)


def _r_coefficients(ans: MasterAnsatz):
    """Flow generator, integral kernel and terminal matrix of the r-representation."""
    p = ans.params
    P_nodes = ans.P.values
    if ans.kind == MFC:
        gen_nodes = p.A + p.A_bar - p.W @ P_nodes
        const = p.S.T @ p.Q_bar @ p.S - p.Q_bar @ p.S - p.S.T @ p.Q_bar
        kernel = const + P_nodes @ p.A_bar + np.swapaxes(P_nodes @ p.A_bar, 1, 2)
        terminal = (p.S_T.T @ p.Q_bar_T @ p.S_T - p.S_T.T @ p.Q_bar_T - p.Q_bar_T @ p.S_T)
    else:
        # Ito on r = Sigma y with the game-type Sigma equation gives the
        # kernel (P A_bar - Q_bar S); the sign is pinned by the r = Sigma y
        # consistency check.
        gen_nodes = p.A - p.W @ P_nodes
        kernel = P_nodes @ p.A_bar - np.broadcast_to(p.Q_bar @ p.S, P_nodes.shape)
        terminal = -p.Q_bar_T @ p.S_T
    return gen_nodes, kernel, terminal


def backward_r(ans: MasterAnsatz, y_traj: np.ndarray, path: BrownianPath) -> np.ndarray:
    """r(t) from its integral representation (flow + kernel + averaged future mean).

    Conditional expectations of the future mean propagate with the
    deterministic mean-flow generator; the common-noise future averages out.
    Never consults the Sigma identity, so comparing the output against
    Sigma(t,1) y(t) is a genuine two-route check.
    """
    _check_grid(ans, path)
    y_traj = np.asarray(y_traj, dtype=float)
    if y_traj.shape[0] != ans.grid.num_steps + 1:
        raise GridMismatchError("y_traj length does not match the grid")
    gen_nodes, kernel, terminal = _r_coefficients(ans)
    phi = FundamentalMatrix.from_generator_halfgrid(
        ans.grid, halfgrid_from_nodes(gen_nodes))
    psi = mean_flow_matrix(ans)
    h = ans.grid.h
    num = ans.grid.num_steps
    M = terminal.copy()
    r = np.empty_like(y_traj)
    r[num] = M @ y_traj[num]
    for k in range(num - 1, -1, -1):
        phi_k = phi.step_transitions[k]
        psi_k = psi.step_transitions[k]
        local = 0.5 * h * (kernel[k] + phi_k.T @ kernel[k + 1] @ psi_k)
        M = phi_k.T @ M @ psi_k + local
        r[k] = M @ y_traj[k]
    return r


def scalar_s(ans: MasterAnsatz, y_traj: np.ndarray, r_traj: np.ndarray,
             path: BrownianPath) -> np.ndarray:
    """Adapted scalar component s(t) at every node.

    Trace terms integrate by quadrature; the conditional expectations of the
    quadratic functionals of the future mean reduce to one backward Lyapunov
    sweep (flow mean + covariance injected by the common noise), evaluated
    on the realized y(t). r(s) enters through the closed contraction
    r(s) = Sigma(s) y(s); the r_traj argument is shape-checked only.
    """
    _check_grid(ans, path)
    y_traj = np.asarray(y_traj, dtype=float)
    num = ans.grid.num_steps
    if y_traj.shape[0] != num + 1 or np.asarray(r_traj).shape[0] != num + 1:
        raise GridMismatchError("trajectory length does not match the grid")
    p = ans.params
    h = ans.grid.h
    b2 = p.beta**2
    S_nodes = ans.sigma(1.0).values
    P_nodes = ans.P.values

    trace_nodes = (0.5 * np.einsum("tij,ji->t", P_nodes, p.a)
                   + 0.5 * b2 * np.trace(P_nodes, axis1=1, axis2=2)
                   + b2 * np.trace(S_nodes, axis1=1, axis2=2))
    trace_tail = tail_integrals(trace_nodes, ans.grid)

    sqs = 0.5 * p.S.T @ p.Q_bar @ p.S
    xi = np.empty_like(S_nodes)
    for k in range(num + 1):
        sk = S_nodes[k]
        m = sqs - 0.5 * sk.T @ p.W @ sk + 0.5 * (sk.T @ p.A_bar + p.A_bar.T @ sk)
        xi[k] = 0.5 * (m + m.T)

    psi = mean_flow_matrix(ans).step_transitions
    eye = np.eye(p.n)
    theta = 0.5 * p.S_T.T @ p.Q_bar_T @ p.S_T
    theta = 0.5 * (theta + theta.T)
    const = 0.0
    out = np.empty(num + 1)
    out[num] = trace_tail[num] + y_traj[num] @ theta @ y_traj[num]
    theta_tilde = theta + 0.5 * h * xi[num]
    for k in range(num - 1, -1, -1):
        psi_k = psi[k]
        inj = 0.5 * h * b2 * (psi_k @ psi_k.T + eye)
        const = const + np.tensordot(theta_tilde, inj)
        theta = 0.5 * h * xi[k] + psi_k.T @ theta_tilde @ psi_k
        out[k] = trace_tail[k] + y_traj[k] @ theta @ y_traj[k] + const
        theta_tilde = theta + 0.5 * h * xi[k]
    return out


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    per_replication: np.ndarray


def _f_running(p: LQParams, states: np.ndarray, ybar: np.ndarray, v: np.ndarray) -> float:
    dev = states - ybar @ p.S.T
    val = (np.einsum("ni,ij,nj->n", states, p.Q, states)
           + np.einsum("ni,ij,nj->n", v, p.R, v)
           + np.einsum("ni,ij,nj->n", dev, p.Q_bar, dev))
    return 0.5 * float(val.mean())


def _h_terminal(p: LQParams, states: np.ndarray, ybar: np.ndarray) -> float:
    dev = states - ybar @ p.S_T.T
    val = (np.einsum("ni,ij,nj->n", states, p.Q_T, states)
           + np.einsum("ni,ij,nj->n", dev, p.Q_bar_T, dev))
    return 0.5 * float(val.mean())


def estimate_cost(p: LQParams, feedback, grid: TimeGrid, m0_mean, m0_cov,
                  N: int, replications: int, seed: int,
                  threads: int | None = None) -> CostEstimate:
    """Monte Carlo value of the objective under a feedback law.

    feedback(states, ybar, t) -> (N, d) controls; the empirical ensemble mean
    stands in for the conditional law. Time integral by trapezoid.
    """
    if N < 2 or replications < 2:
        raise ValueError("need N >= 2 and replications >= 2")
    h = grid.h
    times = grid.times()

    def one_rep(rep: int) -> float:
        path = BrownianPath.generate(grid, p.n, seed, replication=rep)
        rng_init = _rng(seed, _INIT, rep)
        rng_idio = _rng(seed, _IDIO, rep)
        states = _init_states(m0_mean, m0_cov, N, rng_init)
        sqrt_h = np.sqrt(h)
        f_vals = np.empty(grid.num_steps + 1)
        for k in range(grid.num_steps):
            ybar = states.mean(axis=0)
            v = feedback(states, ybar, times[k])
            f_vals[k] = _f_running(p, states, ybar, v)
            drift = states @ p.A.T + ybar @ p.A_bar.T + v @ p.B.T
            dw = rng_idio.normal(0.0, sqrt_h, size=(N, p.n))
            states = states + h * drift + dw @ p.sigma.T + p.beta * path.increments[k]
        ybar = states.mean(axis=0)
        v = feedback(states, ybar, times[-1])
        f_vals[-1] = _f_running(p, states, ybar, v)
        running = h * (f_vals.sum() - 0.5 * (f_vals[0] + f_vals[-1]))
        return float(running + _h_terminal(p, states, ybar))

    workers = threads if threads is not None else default_threads()
    costs = np.empty(replications)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for rep, val in enumerate(pool.map(one_rep, range(replications))):
                costs[rep] = val
    else:
        for rep in range(replications):
            costs[rep] = one_rep(rep)
    return CostEstimate(
        mean=float(costs.mean()),
        stderr=float(costs.std(ddof=1) / np.sqrt(replications)),
        per_replication=costs,
    )


def optimal_feedback(ans: MasterAnsatz):
    """The closed-form optimal feedback -R^{-1} B' (P x + Sigma ybar)."""
    p = ans.params
    Rinv_Bt = np.linalg.solve(p.R, p.B.T)

    def fb(states: np.ndarray, ybar: np.ndarray, t: float) -> np.ndarray:
        q = states @ ans.P.eval_at(t).T + ybar @ ans.sigma(1.0).eval_at(t).T
        return -(q @ Rinv_Bt.T)

    return fb


def bspde_discrete_residual(ans: MasterAnsatz, y_traj: np.ndarray, path: BrownianPath,
                            x_probes) -> tuple[float, np.ndarray]:
    """One-step residual of the backward stochastic HJB along a realized path.

    u(x,t) = x'P x/2 + x'r + s with r, s assembled from Sigma, Gamma, mu at
    the realized mean; the martingale term uses B(x,t) = -(Sigma x + Gamma y).
    Returns (max abs residual, per-step matrix (steps, probes)).
    """
    _check_grid(ans, path)
    p = ans.params
    h = ans.grid.h
    b2 = p.beta**2
    ts = ans.grid.times()
    num = ans.grid.num_steps
    probes = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_probes]
    P_nodes, S_nodes = ans.P.values, ans.sigma(1.0).values
    G_nodes = ans.gamma(1.0).values
    mu_nodes = np.array([ans.mu(ts[k], 1.0) for k in range(num + 1)])

    def u_of(k, x):
        y = y_traj[k]
        return (0.5 * x @ P_nodes[k] @ x + x @ (S_nodes[k] @ y)
                + 0.5 * y @ G_nodes[k] @ y + mu_nodes[k])

    res = np.empty((num, len(probes)))
    for k in range(num):
        y = y_traj[k]
        mom = MeasureMoments.dirac(y)
        Pk, Sk, Gk = P_nodes[k], S_nodes[k], G_nodes[k]
        db = path.increments[k]
        for j, x in enumerate(probes):
            du = u_of(k + 1, x) - u_of(k, x)
            Du = Pk @ x + Sk @ y
            B = -(Sk @ x if ans.kind == MFC else Sk.T @ x) - Gk @ y
            div_B = -float(np.trace(Sk))
            rhs = hamiltonian(p, x, mom, Du)
            if ans.kind == MFC:
                rhs += float(-x @ p.S.T @ p.Q_bar @ y + y @ p.S.T @ p.Q_bar @ p.S @ x
                             + (Pk @ y + Sk @ y) @ (p.A_bar @ x))
            drift = (-0.5 * np.tensordot(p.a, Pk) - 0.5 * b2 * np.trace(Pk)
                     + b2 * div_B - rhs)
            res[k, j] = -du + h * drift - p.beta * float(B @ db)
    return float(np.abs(res).max()), res
