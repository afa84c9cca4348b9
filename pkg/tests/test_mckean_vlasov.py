"""Conditional-law simulation, the backward pair (r, s), and cost estimation."""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import coupled_scalar_params, scalar_benchmark_params
from mfgkit import LQParams, MeasureMoments, TimeGrid, solve_master_mfc, solve_master_mfg
from mfgkit import mckean_vlasov as mv
from mfgkit.errors import GridMismatchError


@pytest.fixture(scope="module")
def coupled_fine():
    return solve_master_mfc(coupled_scalar_params(sigma=0.3, beta=0.5),
                            TimeGrid(0.0, 1.0, 10000), [1.0])


def test_brownian_path_deterministic():
    g = TimeGrid(0.0, 1.0, 100)
    p1 = mv.BrownianPath.generate(g, 2, seed=5)
    p2 = mv.BrownianPath.generate(g, 2, seed=5)
    assert np.array_equal(p1.increments, p2.increments)
    p3 = mv.BrownianPath.generate(g, 2, seed=6)
    assert not np.array_equal(p1.increments, p3.increments)
    cum = p1.cumulative()
    assert np.array_equal(cum[-1], p1.increments.sum(axis=0))


def test_conditional_mean_tanh_decay(scalar_mfc):
    # beta = 0 variant: dy = -tanh(1-t) y dt integrates to y0 / cosh(1)
    p = scalar_benchmark_params(sigma=0.0, beta=0.0)
    ans = solve_master_mfc(p, TimeGrid(0.0, 1.0, 10000), [1.0])
    path = mv.BrownianPath.generate(ans.grid, 1, seed=1)
    y = mv.simulate_conditional_mean(ans, [1.0], path)
    assert abs(y[-1, 0] - 1.0 / math.cosh(1.0)) <= 1e-4


def test_conditional_mean_trivial_cases():
    p = LQParams.scalar(sigma=0.0, beta=0.0, horizon=1.0)
    g = TimeGrid(0.0, 1.0, 200)
    ans = solve_master_mfc(p, g, [1.0])
    path = mv.BrownianPath.generate(g, 1, seed=2)
    y = mv.simulate_conditional_mean(ans, [0.7], path)
    assert np.all(y == 0.7)
    # beta > 0, zero drift: increments accumulate exactly
    p2 = LQParams.scalar(sigma=0.0, beta=0.8, horizon=1.0)
    ans2 = solve_master_mfc(p2, g, [1.0])
    y2 = mv.simulate_conditional_mean(ans2, [0.0], path)
    assert np.abs(y2[1:, 0] - 0.8 * np.cumsum(path.increments[:, 0])).max() < 1e-15


def test_grid_mismatch(coupled_mfc):
    other = mv.BrownianPath.generate(TimeGrid(0.0, 1.0, 77), 1, seed=0)
    with pytest.raises(GridMismatchError):
        mv.simulate_conditional_mean(coupled_mfc, [0.0], other)


def test_particles_no_noise_consensus(coupled_mfc):
    path = mv.BrownianPath.generate(coupled_mfc.grid, 1, seed=3)
    p0 = coupled_scalar_params(sigma=0.0, beta=0.0)
    ans = solve_master_mfc(p0, coupled_mfc.grid, [1.0])
    sim = mv.simulate_particles(ans, 8, [0.6], [[0.0]], path)
    assert np.ptp(sim.final.states) == 0.0  # all particles identical
    y = mv.simulate_conditional_mean(ans, [0.6], path)
    assert np.abs(sim.means - y).max() <= 1e-10


def test_particles_seed_determinism(coupled_mfc):
    path = mv.BrownianPath.generate(coupled_mfc.grid, 1, seed=4)
    a = mv.simulate_particles(coupled_mfc, 16, [0.5], [[0.2]], path)
    b = mv.simulate_particles(coupled_mfc, 16, [0.5], [[0.2]], path)
    assert np.array_equal(a.final.states, b.final.states)
    assert np.array_equal(a.means, b.means)


def test_particle_mean_rms_scaling():
    # RMS over replications of |ensemble mean - conditional mean| ~ c / sqrt(N)
    p = coupled_scalar_params(sigma=0.4, beta=0.3)
    g = TimeGrid(0.0, 1.0, 400)
    ans = solve_master_mfc(p, g, [1.0])

    def rms(N):
        gaps = []
        for rep in range(50):
            path = mv.BrownianPath.generate(g, 1, seed=100, replication=rep)
            sim = mv.simulate_particles(ans, N, [0.5], [[0.2]], path, replication=rep)
            y = mv.simulate_conditional_mean(ans, [0.5], path)
            gaps.append((sim.means[-1, 0] - y[-1, 0]) ** 2)
        return math.sqrt(np.mean(gaps))

    ratio = rms(100) / rms(400)
    assert 1.7 <= ratio <= 2.3, f"sqrt-N scaling ratio {ratio}"


def test_particles_common_noise_only_matches_mean_sde():
    # sigma = 0, Gaussian start: ensemble mean follows the linear SDE from the
    # empirical initial mean
    p = coupled_scalar_params(sigma=0.0, beta=0.5)
    g = TimeGrid(0.0, 1.0, 1000)
    ans = solve_master_mfc(p, g, [1.0])
    path = mv.BrownianPath.generate(g, 1, seed=12)
    sim = mv.simulate_particles(ans, 64, [0.5], [[0.3]], path)
    y = mv.simulate_conditional_mean(ans, sim.means[0], path)
    assert np.abs(sim.means - y).max() <= 1e-3


def test_flow_property(coupled_mfc):
    flow = mv.mean_flow_matrix(coupled_mfc)
    full = flow.flow(1500, 300)
    split = flow.flow(1500, 900) @ flow.flow(900, 300)
    assert np.abs(full - split).max() <= 1e-10
    assert np.array_equal(flow.flow(42, 42), np.eye(1))


def test_backward_r_zero_coupling():
    p = LQParams.scalar(A=0.2, Q=1.0, Q_T=0.5, sigma=0.3, beta=0.4, horizon=1.0)
    g = TimeGrid(0.0, 1.0, 500)
    ans = solve_master_mfc(p, g, [1.0])
    path = mv.BrownianPath.generate(g, 1, seed=5)
    y = mv.simulate_conditional_mean(ans, [0.8], path)
    r = mv.backward_r(ans, y, path)
    assert np.abs(r).max() == 0.0


def test_backward_r_terminal(coupled_fine):
    p = coupled_fine.params
    path = mv.BrownianPath.generate(coupled_fine.grid, 1, seed=6)
    y = mv.simulate_conditional_mean(coupled_fine, [0.8], path)
    r = mv.backward_r(coupled_fine, y, path)
    term = (p.S_T.T @ p.Q_bar_T @ p.S_T - p.S_T.T @ p.Q_bar_T - p.Q_bar_T @ p.S_T)
    assert np.abs(r[-1] - term @ y[-1]).max() < 1e-14


def test_fbsde_identity_mfc(coupled_fine):
    path = mv.BrownianPath.generate(coupled_fine.grid, 1, seed=7)
    y = mv.simulate_conditional_mean(coupled_fine, [0.8], path)
    r = mv.backward_r(coupled_fine, y, path)
    sig = coupled_fine.sigma(1.0).values
    gap = np.abs(r - np.einsum("tij,tj->ti", sig, y)).max()
    assert gap <= 1e-4


def test_fbsde_identity_mfg():
    ans = solve_master_mfg(coupled_scalar_params(sigma=0.3, beta=0.5),
                           TimeGrid(0.0, 1.0, 4000), [1.0])
    path = mv.BrownianPath.generate(ans.grid, 1, seed=8)
    y = mv.simulate_conditional_mean(ans, [0.6], path)
    r = mv.backward_r(ans, y, path)
    sig = ans.sigma(1.0).values
    gap = np.abs(r - np.einsum("tij,tj->ti", sig, y)).max()
    assert gap <= 1e-4


def test_scalar_s_trivial_zero():
    p = LQParams.scalar(A=0.2, Q=1.0, sigma=0.0, beta=0.0, horizon=1.0)
    g = TimeGrid(0.0, 1.0, 300)
    ans = solve_master_mfc(p, g, [1.0])
    path = mv.BrownianPath.generate(g, 1, seed=9)
    y = mv.simulate_conditional_mean(ans, [0.5], path)
    r = mv.backward_r(ans, y, path)
    s = mv.scalar_s(ans, y, r, path)
    assert np.abs(s).max() == 0.0


def test_scalar_s_deterministic_reduction():
    # beta = 0: s(t) is a plain integral along the deterministic mean;
    # oracle = adaptive integration of the same functional, to 1e-8
    p = coupled_scalar_params(sigma=0.4, beta=0.0)
    g = TimeGrid(0.0, 1.0, 2000)
    ans = solve_master_mfc(p, g, [1.0])
    path = mv.BrownianPath.generate(g, 1, seed=10)
    y = mv.simulate_conditional_mean(ans, [0.8], path)
    r = mv.backward_r(ans, y, path)
    s = mv.scalar_s(ans, y, r, path)

    P = lambda t: ans.P.eval_at(t)[0, 0]
    Sg = lambda t: ans.sigma(1.0).eval_at(t)[0, 0]
    W = p.W[0, 0]
    a = p.a[0, 0]
    Sc, Qb, Ab = p.S[0, 0], p.Q_bar[0, 0], p.A_bar[0, 0]

    def oracle(t_idx):
        t0 = g.times()[t_idx]
        y0 = y[t_idx, 0]

        def rhs(t, z):
            yv, acc = z
            rv = Sg(t) * yv
            f = (0.5 * a * P(t)
                 + 0.5 * Sc * Qb * Sc * yv * yv - 0.5 * W * rv * rv + rv * Ab * yv)
            return [(p.A[0, 0] + Ab - W * (P(t) + Sg(t))) * yv, f]

        sol = solve_ivp(rhs, (t0, 1.0), [y0, 0.0], rtol=1e-12, atol=1e-14)
        yT = sol.y[0, -1]
        return sol.y[1, -1] + 0.5 * p.S_T[0, 0] ** 2 * p.Q_bar_T[0, 0] * yT * yT

    for idx in (0, 700, 1500):
        assert abs(s[idx] - oracle(idx)) <= 1e-8


def test_scalar_s_matches_definition(coupled_fine):
    path = mv.BrownianPath.generate(coupled_fine.grid, 1, seed=11)
    y = mv.simulate_conditional_mean(coupled_fine, [0.8], path)
    r = mv.backward_r(coupled_fine, y, path)
    s = mv.scalar_s(coupled_fine, y, r, path)
    gam = coupled_fine.gamma(1.0).values[:, 0, 0]
    ts = coupled_fine.grid.times()
    idxs = np.arange(0, len(ts), 500)
    s_def = np.array([0.5 * gam[k] * y[k, 0] ** 2 + coupled_fine.mu(ts[k], 1.0)
                      for k in idxs])
    assert np.abs(s[idxs] - s_def).max() <= 1e-5


def test_scalar_s_monte_carlo_oracle():
    # beta > 0: conditional expectation formula vs direct resimulation of the
    # pathwise functional from a fixed time, within 3 standard errors
    p = coupled_scalar_params(sigma=0.3, beta=0.5)
    g = TimeGrid(0.0, 1.0, 500)
    ans = solve_master_mfc(p, g, [1.0])
    path = mv.BrownianPath.generate(g, 1, seed=13)
    y = mv.simulate_conditional_mean(ans, [0.8], path)
    r = mv.backward_r(ans, y, path)
    s = mv.scalar_s(ans, y, r, path)

    idx = 200
    t0 = g.times()[idx]
    y0 = y[idx, 0]
    h = g.h
    steps = g.num_steps - idx
    M = 20000
    rng = np.random.default_rng(999)
    P = ans.P.values[idx:, 0, 0]
    Sg = ans.sigma(1.0).values[idx:, 0, 0]
    W = p.W[0, 0]
    gen = (p.A[0, 0] + p.A_bar[0, 0]) - W * (P + Sg)
    ys = np.full(M, y0)
    f_acc = np.zeros(M)
    a = p.a[0, 0]
    trace_part = 0.5 * a * P + 0.5 * p.beta**2 * P + p.beta**2 * Sg

    def f_at(k, yv):
        rv = Sg[k] * yv
        return (trace_part[k]
                + 0.5 * p.S[0, 0] ** 2 * p.Q_bar[0, 0] * yv * yv
                - 0.5 * W * rv * rv + rv * p.A_bar[0, 0] * yv)

    f_prev = f_at(0, ys)
    for k in range(steps):
        ys = ys + h * gen[k] * ys + p.beta * rng.normal(0.0, math.sqrt(h), size=M)
        f_next = f_at(k + 1, ys)
        f_acc += 0.5 * h * (f_prev + f_next)
        f_prev = f_next
    totals = f_acc + 0.5 * p.S_T[0, 0] ** 2 * p.Q_bar_T[0, 0] * ys * ys
    mc_mean = totals.mean()
    mc_se = totals.std(ddof=1) / math.sqrt(M)
    assert abs(s[idx] - mc_mean) <= 3.0 * mc_se + 5e-4  # Euler bias allowance


def test_estimate_cost_zero_costs():
    p = LQParams.scalar(A=0.1, sigma=0.3, beta=0.2, horizon=1.0)
    g = TimeGrid(0.0, 1.0, 50)
    fb = lambda states, ybar, t: np.zeros((states.shape[0], 1))
    est = mv.estimate_cost(p, fb, g, [0.5], [[0.1]], N=8, replications=4, seed=1)
    assert est.mean == 0.0 and est.stderr == 0.0


def test_estimate_cost_matches_value(coupled_mfc):
    p = coupled_mfc.params
    g = coupled_mfc.grid
    fb = mv.optimal_feedback(coupled_mfc)
    est = mv.estimate_cost(p, fb, g, [0.5], [[0.2]], N=400, replications=64, seed=2024)
    V0 = coupled_mfc.eval_V(MeasureMoments.gaussian([0.5], [[0.2]]), 0.0)
    assert abs(est.mean - V0) <= 3.0 * est.stderr
    zero = mv.estimate_cost(p, lambda s, y, t: np.zeros((s.shape[0], 1)),
                            g, [0.5], [[0.2]], N=400, replications=64, seed=2024)
    assert zero.mean >= est.mean - 3.0 * zero.stderr


def test_estimate_cost_thread_invariance(coupled_mfc):
    p = coupled_mfc.params
    fb = mv.optimal_feedback(coupled_mfc)
    kw = dict(grid=coupled_mfc.grid, m0_mean=[0.5], m0_cov=[[0.2]],
              N=32, replications=6, seed=3)
    serial = mv.estimate_cost(p, fb, threads=1, **kw)
    threaded = mv.estimate_cost(p, fb, threads=4, **kw)
    assert np.array_equal(serial.per_replication, threaded.per_replication)


def test_bspde_residual_halves_with_h():
    p = coupled_scalar_params(sigma=0.3, beta=0.5)
    g_fine = TimeGrid(0.0, 1.0, 800)
    path_fine = mv.BrownianPath.generate(g_fine, 1, seed=14)
    g_coarse = TimeGrid(0.0, 1.0, 400)
    inc_coarse = path_fine.increments.reshape(400, 2, 1).sum(axis=1)
    path_coarse = mv.BrownianPath(grid=g_coarse, increments=inc_coarse, seed=14)
    probes = [np.array([0.7]), np.array([-1.2])]
    maxima = {}
    for g, path in ((g_fine, path_fine), (g_coarse, path_coarse)):
        ans = solve_master_mfc(p, g, [1.0])
        y = mv.simulate_conditional_mean(ans, [0.5], path)
        maxima[g.num_steps], _ = mv.bspde_discrete_residual(ans, y, path, probes)
    ratio = maxima[400] / maxima[800]
    assert 1.3 <= ratio <= 3.2, f"O(h) halving violated: {ratio}"
