"""Term-by-term numerical checks of the two Master equations on the quadratic ansatz.

All measure integrals contract exactly against (m1, y, M2) because every
integrand is a polynomial of degree <= 2 in the integration variable. The
time derivative of the ansatz is taken by finite differences on the stored
ODE solutions (never from the ODE right-hand sides), so a residual near zero
genuinely certifies the solution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import KindMismatchError
from .lq_model import MFC, MFG, LQParams, MasterAnsatz, MeasureMoments
from .riccati import TimeGrid

FD_M1_STEP = 1e-4

TERM_NAMES = (
    "time_derivative",
    "second_order_x",
    "measure_laplacian",
    "measure_flow",
    "double_measure",
    "div_cross",
    "hamiltonian_side",
)


@dataclass(frozen=True)
class DerivativeBundle:
    """Closed-form derivatives of the quadratic ansatz at one (x, m, t)."""

    DU: np.ndarray
    D2U: np.ndarray
    dUdm_linear: np.ndarray
    dUdm_const: float
    d2Udm2_bilinear: np.ndarray
    trace_Gamma: float
    trace_Sigma: float


@dataclass(frozen=True)
class ResidualReport:
    sample_points: list
    residuals: np.ndarray
    max_abs: float
    terms: list[dict]

    def to_csv(self, path, header_comment: str | None = None):
        n = self.sample_points[0][0].shape[0] if self.sample_points else 0
        cols = (["t"] + [f"x{i}" for i in range(n)] + ["m1"] + [f"y{i}" for i in range(n)]
                + ["residual"] + list(TERM_NAMES))
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(cols)
            for (x, mom, t), res, term in zip(self.sample_points, self.residuals, self.terms):
                row = ([t] + list(x) + [mom.m1] + list(mom.y) + [res]
                       + [term[k] for k in TERM_NAMES])
                writer.writerow([f"{v:.17g}" for v in row])


def analytic_derivatives(ans: MasterAnsatz, x, mom: MeasureMoments, t: float,
                         m1_step: float = FD_M1_STEP) -> DerivativeBundle:
    """Derivatives of the ansatz; m1-partials by central differences over re-solves."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y, m1 = mom.y, mom.m1
    P_t = ans.P.eval_at(t)
    S_t = ans.sigma(m1).eval_at(t)
    G_t = ans.gamma(m1).eval_at(t)
    h = m1_step
    dSig = (ans.sigma(m1 + h).eval_at(t) - ans.sigma(m1 - h).eval_at(t)) / (2.0 * h)
    dGam = (ans.gamma(m1 + h).eval_at(t) - ans.gamma(m1 - h).eval_at(t)) / (2.0 * h)
    dMu = (ans.mu(t, m1 + h) - ans.mu(t, m1 - h)) / (2.0 * h)
    if ans.kind == MFC:
        lin = S_t @ x + G_t @ y
        const = y @ dSig @ x + 0.5 * y @ dGam @ y + dMu
    else:
        lin = S_t.T @ x + G_t @ y
        const = x @ dSig @ y + 0.5 * y @ dGam @ y + dMu
    return DerivativeBundle(
        DU=P_t @ x + S_t @ y,
        D2U=P_t,
        dUdm_linear=lin,
        dUdm_const=float(const),
        d2Udm2_bilinear=G_t,
        trace_Gamma=float(np.trace(G_t)),
        trace_Sigma=float(np.trace(S_t)),
    )


def _du_dt(ans: MasterAnsatz, x, mom: MeasureMoments, node: int) -> float:
    """Five-point stencil on grid nodes; O(h^4), independent of the ODE forms."""
    ts = ans.grid.times()
    h = ans.grid.h
    u = [ans.eval_U(x, mom, ts[node + k]) for k in (-2, -1, 1, 2)]
    return (u[0] - 8.0 * u[1] + 8.0 * u[2] - u[3]) / (12.0 * h)


def _snap_node(grid: TimeGrid, t: float) -> int:
    node = grid.nearest_node(t)
    return min(max(node, 2), grid.num_steps - 2)


def _residual_terms(ans: MasterAnsatz, x, mom: MeasureMoments, t: float) -> dict:
    p = ans.params
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y, m1 = mom.y, mom.m1
    node = _snap_node(ans.grid, t)
    t_node = ans.grid.times()[node]
    P_t = ans.P.eval_at(t_node)
    S_t = ans.sigma(m1).eval_at(t_node)
    G_t = ans.gamma(m1).eval_at(t_node)
    b2 = p.beta**2

    DU = P_t @ x + S_t @ y
    lin = (S_t @ x if ans.kind == MFC else S_t.T @ x) + G_t @ y
    flow_vec = p.A @ y + m1 * (p.A_bar @ y) - p.W @ (P_t @ y + m1 * (S_t @ y))

    sy = p.S @ y
    ham = (0.5 * x @ (p.Q + p.Q_bar) @ x + 0.5 * sy @ p.Q_bar @ sy
           - 0.5 * DU @ p.W @ DU + DU @ (p.A @ x + p.A_bar @ y))
    if ans.kind == MFC:
        ham += (- x @ (p.Q_bar @ p.S + p.S.T @ p.Q_bar) @ y
                + m1 * (y @ p.S.T @ p.Q_bar @ p.S @ x)
                + (P_t @ y + m1 * (S_t @ y)) @ (p.A_bar @ x))
    else:
        ham += - x @ p.Q_bar @ sy

    terms = {
        "time_derivative": -_du_dt(ans, x, mom, node),
        "second_order_x": float(-0.5 * np.tensordot(p.a, P_t) - 0.5 * b2 * np.trace(P_t)),
        "measure_laplacian": 0.0,  # D_xi^2 of dU/dm vanishes for the quadratic ansatz
        "measure_flow": float(-lin @ flow_vec),
        "double_measure": float(-0.5 * b2 * np.trace(G_t) * m1**2),
        "div_cross": float(-b2 * np.trace(S_t) * m1),
        "hamiltonian_side": float(ham),
    }
    terms["_t_node"] = t_node
    return terms


def _residual_report(ans: MasterAnsatz, samples) -> ResidualReport:
    residuals = np.empty(len(samples))
    all_terms = []
    points = []
    for k, (x, mom, t) in enumerate(samples):
        terms = _residual_terms(ans, x, mom, t)
        t_node = terms.pop("_t_node")
        lhs = sum(terms[name] for name in TERM_NAMES if name != "hamiltonian_side")
        residuals[k] = lhs - terms["hamiltonian_side"]
        all_terms.append(terms)
        points.append((np.atleast_1d(np.asarray(x, dtype=float)), mom, float(t_node)))
    return ResidualReport(
        sample_points=points,
        residuals=residuals,
        max_abs=float(np.abs(residuals).max()) if len(samples) else 0.0,
        terms=all_terms,
    )


def residual_mfc(ans: MasterAnsatz, samples) -> ResidualReport:
    """LHS - RHS of the control-type Master equation at each (x, moments, t)."""
    if ans.kind != MFC:
        raise KindMismatchError("residual_mfc needs a control-type ansatz")
    return _residual_report(ans, samples)


def residual_mfg(ans: MasterAnsatz, samples) -> ResidualReport:
    """LHS - RHS of the game-type Master equation at each (x, moments, t)."""
    if ans.kind != MFG:
        raise KindMismatchError("residual_mfg needs a game-type ansatz")
    return _residual_report(ans, samples)


def symmetry_defect(ans: MasterAnsatz, mom: MeasureMoments, t: float) -> float:
    """Max probe-contracted asymmetry of the measure derivative swap.

    For the quadratic ansatz the swap of (x, xi) in dU/dm reduces to the
    asymmetry of Sigma contracted against probe basis vectors, so this is
    max_{a,b} |e_a' (Sigma - Sigma') e_b|.
    """
    S_t = ans.sigma(mom.m1).eval_at(t)
    asym = S_t - S_t.T
    n = asym.shape[0]
    probes = np.eye(n)
    return float(max(abs(probes[a] @ asym @ probes[b]) for a in range(n) for b in range(n)))


def gateaux_check_V(ans: MasterAnsatz, mom: MeasureMoments,
                    direction_moments: MeasureMoments, t: float,
                    theta: float = 1e-5) -> float:
    """|central difference of V along the direction - <U(., m, t), direction>|."""
    if ans.kind != MFC:
        raise KindMismatchError("gateaux_check_V needs a control-type ansatz")
    plus = ans.eval_V(mom.shifted(direction_moments, theta), t)
    minus = ans.eval_V(mom.shifted(direction_moments, -theta), t)
    fd = (plus - minus) / (2.0 * theta)
    y, m1 = mom.y, mom.m1
    S_t = ans.sigma(m1).eval_at(t)
    G_t = ans.gamma(m1).eval_at(t)
    pairing = (0.5 * np.tensordot(ans.P.eval_at(t), direction_moments.M2)
               + y @ S_t @ direction_moments.y
               + (0.5 * y @ G_t @ y + ans.mu(t, m1)) * direction_moments.m1)
    return float(abs(fd - pairing))


def draw_residual_samples(p: LQParams, grid: TimeGrid, count: int, m1_values,
                          seed: int, x_half_width: float = 2.0) -> list:
    """Random (x, moments, t) triples on interior grid nodes.

    Moments are Gaussian-measure moments scaled to each m1; times are interior
    nodes so the five-point time stencil stays inside the grid.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    n = p.n
    ts = grid.times()
    m1_values = list(m1_values)
    samples = []
    for k in range(count):
        x = rng.uniform(-x_half_width, x_half_width, size=n)
        mean = rng.uniform(-1.0, 1.0, size=n)
        scale = rng.uniform(0.2, 1.0, size=n)
        cov = np.diag(scale**2)
        m1 = m1_values[k % len(m1_values)]
        mom = MeasureMoments.gaussian(mean, cov, m1=m1)
        node = int(rng.integers(2, grid.num_steps - 1))
        samples.append((x, mom, float(ts[node])))
    return samples


def perturbed_P_ansatz(ans: MasterAnsatz, rel: float = 0.01) -> MasterAnsatz:
    """Clone with P scaled by (1 + rel); used as a residual-detector probe.

    The Sigma/Gamma families stay tied to the unperturbed P, so the clone's
    residual isolates the sensitivity to P itself.
    """
    from .riccati import RiccatiSolution, tail_integrals

    out = MasterAnsatz.__new__(MasterAnsatz)
    out.kind = ans.kind
    out.params = ans.params
    out.grid = ans.grid
    out.P = RiccatiSolution(grid=ans.grid, values=(1.0 + rel) * ans.P.values)
    out._P_half = ans._P_half
    out._sigma = ans._sigma
    out._gamma = ans._gamma
    out._trace_tails = ans._trace_tails
    p = ans.params
    base = 0.5 * np.einsum("tij,ji->t", out.P.values, p.a) + \
        0.5 * p.beta**2 * np.trace(out.P.values, axis1=1, axis2=2)
    out._base_trace_nodes = base
    out._base_trace_tail = tail_integrals(base, ans.grid)
    return out
