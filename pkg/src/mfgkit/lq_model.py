"""Linear-quadratic model data and the closed-form quadratic solution families.

The control-type (mfc) and game-type (mfg) solutions share the state-cost
matrix P and differ in the mean-coupling families Sigma/Gamma and in the
symmetry of Sigma. Measures enter every formula only through total mass m1,
first moment y and second moment M2, so moments are the measure type.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, KindMismatchError
from .kernels import halfgrid_constant, halfgrid_from_nodes, rk4_backward_affine_quadratic
from .riccati import RiccatiSolution, TimeGrid, tail_integrals

MFC = "mfc"
MFG = "mfg"

_SYM_TOL = 1e-10


def _sym_check(name: str, m: np.ndarray):
    if m.size and np.abs(m - m.T).max() > _SYM_TOL * max(1.0, np.abs(m).max()):
        raise ValueError(f"{name} must be symmetric")


@dataclass(frozen=True)
class LQParams:
    """Model matrices and noise intensities; the single source of model truth.

    Dynamics  dx = (A x + A_bar y + B v) dt + sigma dw + beta db,
    running cost  (x'Qx + v'Rv + (x - Sy)'Q_bar(x - Sy)) / 2  and terminal
    cost  (x'Q_T x + (x - S_T y)'Q_bar_T (x - S_T y)) / 2,  with y the first
    moment of the (conditional) state law.
    """

    A: np.ndarray
    A_bar: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    Q_bar: np.ndarray
    Q_T: np.ndarray
    Q_bar_T: np.ndarray
    S: np.ndarray
    S_T: np.ndarray
    R: np.ndarray
    sigma: np.ndarray
    beta: float
    horizon: float

    def __post_init__(self):
        arrays = {}
        for name in ("A", "A_bar", "B", "Q", "Q_bar", "Q_T", "Q_bar_T", "S", "S_T", "R", "sigma"):
            arrays[name] = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arrays[name])
        n = arrays["A"].shape[0]
        d = arrays["B"].shape[1]
        for name in ("A", "A_bar", "Q", "Q_bar", "Q_T", "Q_bar_T", "S", "S_T", "sigma"):
            if arrays[name].shape != (n, n):
                raise DimensionMismatchError(f"{name} must be {n}x{n}, got {arrays[name].shape}")
        if arrays["B"].shape != (n, d):
            raise DimensionMismatchError(f"B must be {n}x{d}, got {arrays['B'].shape}")
        if arrays["R"].shape != (d, d):
            raise DimensionMismatchError(f"R must be {d}x{d}, got {arrays['R'].shape}")
        for name in ("Q", "Q_bar", "Q_T", "Q_bar_T", "R"):
            _sym_check(name, arrays[name])
        try:
            np.linalg.cholesky(arrays["R"])
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be symmetric positive definite") from exc
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be > 0")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "horizon", float(self.horizon))
        w = arrays["B"] @ np.linalg.solve(arrays["R"], arrays["B"].T)
        object.__setattr__(self, "_W", 0.5 * (w + w.T))
        object.__setattr__(self, "_a", arrays["sigma"] @ arrays["sigma"].T)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def W(self) -> np.ndarray:
        """Control kernel B R^{-1} B'."""
        return self._W

    @property
    def a(self) -> np.ndarray:
        """Idiosyncratic diffusion covariance sigma sigma'."""
        return self._a

    @classmethod
    def scalar(cls, A=0.0, A_bar=0.0, B=1.0, Q=0.0, Q_bar=0.0, Q_T=0.0, Q_bar_T=0.0,
               S=0.0, S_T=0.0, R=1.0, sigma=0.0, beta=0.0, horizon=1.0) -> "LQParams":
        return cls(A=[[A]], A_bar=[[A_bar]], B=[[B]], Q=[[Q]], Q_bar=[[Q_bar]],
                   Q_T=[[Q_T]], Q_bar_T=[[Q_bar_T]], S=[[S]], S_T=[[S_T]], R=[[R]],
                   sigma=[[sigma]], beta=beta, horizon=horizon)


@dataclass(frozen=True)
class MeasureMoments:
    """Sufficient statistics (mass, first moment, raw second moment) of a measure."""

    m1: float
    y: np.ndarray
    M2: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        M2 = np.atleast_2d(np.asarray(self.M2, dtype=float))
        if M2.shape != (y.shape[0], y.shape[0]):
            raise DimensionMismatchError(f"M2 shape {M2.shape} incompatible with y {y.shape}")
        _sym_check("M2", M2)
        if self.m1 < 0.0:
            raise ValueError("m1 must be >= 0")
        if self.m1 > 0.0:
            cov = M2 - np.outer(y, y) / self.m1
            if np.linalg.eigvalsh(cov).min() < -1e-9 * max(1.0, np.abs(M2).max()):
                raise ValueError("M2 - y y'/m1 must be positive semi-definite")
        object.__setattr__(self, "m1", float(self.m1))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "M2", M2)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @classmethod
    def gaussian(cls, mean, cov, m1: float = 1.0) -> "MeasureMoments":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(m1=m1, y=m1 * mean, M2=m1 * (cov + np.outer(mean, mean)))

    @classmethod
    def dirac(cls, x, mass: float = 1.0) -> "MeasureMoments":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(m1=mass, y=mass * x, M2=mass * np.outer(x, x))

    @classmethod
    def from_points(cls, points, weight: float) -> "MeasureMoments":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m1 = weight * pts.shape[0]
        if abs(m1 - 1.0) < 1e-12:
            m1 = 1.0
        return cls(m1=m1, y=weight * pts.sum(axis=0), M2=weight * (pts.T @ pts))

    def shifted(self, direction: "MeasureMoments", scale: float) -> "MeasureMoments":
        """Moments of m + scale * direction (signed measures allowed for probes)."""
        out = object.__new__(MeasureMoments)
        object.__setattr__(out, "m1", self.m1 + scale * direction.m1)
        object.__setattr__(out, "y", self.y + scale * direction.y)
        object.__setattr__(out, "M2", self.M2 + scale * direction.M2)
        return out


def hamiltonian(p: LQParams, x, mom: MeasureMoments, q) -> float:
    """Optimized Hamiltonian inf_v [f + q.g] in closed form."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    y = mom.y
    sy = p.S @ y
    return float(
        0.5 * x @ (p.Q + p.Q_bar) @ x
        - x @ p.Q_bar @ sy
        + 0.5 * sy @ p.Q_bar @ sy
        - 0.5 * q @ p.W @ q
        + q @ (p.A @ x + p.A_bar @ y)
    )


def optimal_control(p: LQParams, q) -> np.ndarray:
    """Minimizer of v -> f + q.g, namely -R^{-1} B' q."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    return -np.linalg.solve(p.R, p.B.T @ q)


def optimal_drift(p: LQParams, x, mom: MeasureMoments, q) -> np.ndarray:
    """Drift under the optimal control: A x + A_bar y - B R^{-1} B' q."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    return p.A @ x + p.A_bar @ mom.y - p.W @ q


class MasterAnsatz:
    """Assembled quadratic solution: P plus per-m1 families Sigma, Gamma.

    The families are solved on demand per m1 value and cached; finite
    differences in m1 therefore always hit fresh ODE solves, never
    interpolation.
    """

    def __init__(self, kind: str, params: LQParams, grid: TimeGrid):
        if kind not in (MFC, MFG):
            raise ValueError(f"kind must be '{MFC}' or '{MFG}', got {kind!r}")
        self.kind = kind
        self.params = params
        self.grid = grid
        self.P = _solve_P(params, grid)
        self._P_half = halfgrid_from_nodes(self.P.values)
        self._sigma: dict[float, RiccatiSolution] = {}
        self._gamma: dict[float, RiccatiSolution] = {}
        self._trace_tails: dict[tuple[str, float], np.ndarray] = {}
        p = params
        base = 0.5 * np.einsum("tij,ji->t", self.P.values, p.a) + \
            0.5 * p.beta**2 * np.trace(self.P.values, axis1=1, axis2=2)
        self._base_trace_nodes = base
        self._base_trace_tail = tail_integrals(base, grid)

    # -- family solves -----------------------------------------------------

    def sigma(self, m1: float) -> RiccatiSolution:
        key = float(m1)
        if key not in self._sigma:
            self._sigma[key] = _solve_sigma(self.params, self.grid, self._P_half, self.kind, key)
        return self._sigma[key]

    def gamma(self, m1: float) -> RiccatiSolution:
        key = float(m1)
        if key not in self._gamma:
            sig_half = halfgrid_from_nodes(self.sigma(key).values)
            self._gamma[key] = _solve_gamma(
                self.params, self.grid, self._P_half, sig_half, self.kind, key
            )
        return self._gamma[key]

    # -- scalar pieces ------------------------------------------------------

    def _tail(self, which: str, m1: float) -> np.ndarray:
        key = (which, float(m1))
        if key not in self._trace_tails:
            sol = self.sigma(m1) if which == "sigma" else self.gamma(m1)
            nodes = np.trace(sol.values, axis1=1, axis2=2)
            self._trace_tails[key] = tail_integrals(nodes, self.grid)
        return self._trace_tails[key]

    def _tail_value(self, tail: np.ndarray, nodes_fn, t: float) -> float:
        i, w = self.grid.locate(t)
        if w == 0.0:
            return float(tail[i])
        if w == 1.0:
            return float(tail[i + 1])
        # partial interval [t, t_{i+1}] via trapezoid on the linear interpolant
        ts = self.grid.times()
        f_t = (1.0 - w) * nodes_fn(i) + w * nodes_fn(i + 1)
        return float(tail[i + 1] + 0.5 * (ts[i + 1] - t) * (f_t + nodes_fn(i + 1)))

    def _base_integral(self, t: float) -> float:
        return self._tail_value(self._base_trace_tail, lambda i: self._base_trace_nodes[i], t)

    def _trace_integral(self, which: str, m1: float, t: float) -> float:
        tail = self._tail(which, m1)
        sol = self.sigma(m1) if which == "sigma" else self.gamma(m1)
        return self._tail_value(tail, lambda i: np.trace(sol.values[i]), t)

    def lam(self, t: float, m1: float) -> float:
        """Measure-level constant term: lam(T, m1) = 0."""
        b2 = self.params.beta**2
        return m1 * self._base_integral(t) + 0.5 * b2 * m1**2 * self._trace_integral("sigma", m1, t)

    def mu(self, t: float, m1: float) -> float:
        """State-level constant term (the m1-derivative of lam for the mfc kind)."""
        b2 = self.params.beta**2
        return (
            self._base_integral(t)
            + 0.5 * b2 * m1**2 * self._trace_integral("gamma", m1, t)
            + b2 * m1 * self._trace_integral("sigma", m1, t)
        )

    # -- evaluations ---------------------------------------------------------

    def eval_U(self, x, mom: MeasureMoments, t: float) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y, m1 = mom.y, mom.m1
        P_t = self.P.eval_at(t)
        S_t = self.sigma(m1).eval_at(t)
        G_t = self.gamma(m1).eval_at(t)
        cross = y @ S_t @ x if self.kind == MFC else x @ S_t @ y
        return float(0.5 * x @ P_t @ x + cross + 0.5 * y @ G_t @ y + self.mu(t, m1))

    def eval_V(self, mom: MeasureMoments, t: float) -> float:
        if self.kind != MFC:
            raise KindMismatchError("eval_V is defined for the control-type ansatz only")
        y, m1 = mom.y, mom.m1
        P_t = self.P.eval_at(t)
        S_t = self.sigma(m1).eval_at(t)
        return float(0.5 * np.tensordot(P_t, mom.M2) + 0.5 * y @ S_t @ y + self.lam(t, m1))


def _solve_P(p: LQParams, grid: TimeGrid) -> RiccatiSolution:
    num = grid.num_steps
    return rk4_backward_affine_quadratic(
        grid,
        terminal=p.Q_T + p.Q_bar_T,
        C_half=halfgrid_constant(-(p.Q + p.Q_bar), num),
        L_half=halfgrid_constant(-p.A.T, num),
        D_half=halfgrid_constant(-p.A, num),
        W=p.W,
        q=1.0,
        symmetrize=True,
    )


def _solve_sigma(p: LQParams, grid: TimeGrid, P_half: np.ndarray, kind: str, m1: float
                 ) -> RiccatiSolution:
    WP = p.W @ P_half  # (2N+1, n, n) via broadcast
    M0 = (p.A + m1 * p.A_bar) - WP
    if kind == MFC:
        K = (m1 * (p.S.T @ p.Q_bar @ p.S) - p.Q_bar @ p.S - p.S.T @ p.Q_bar
             + P_half @ p.A_bar + np.swapaxes(P_half @ p.A_bar, 1, 2))
        terminal = m1 * (p.S_T.T @ p.Q_bar_T @ p.S_T) - (p.S_T.T @ p.Q_bar_T + p.Q_bar_T @ p.S_T)
        L = -np.swapaxes(M0, 1, 2)
        symmetrize = True
    else:
        K = -p.Q_bar @ p.S + P_half @ p.A_bar
        terminal = -p.Q_bar_T @ p.S_T
        L = -(p.A.T - np.swapaxes(WP, 1, 2))  # -(A' - P W)
        symmetrize = False
    return rk4_backward_affine_quadratic(
        grid, terminal=terminal, C_half=-K, L_half=L, D_half=-M0,
        W=p.W, q=m1, symmetrize=symmetrize,
    )


def _solve_gamma(p: LQParams, grid: TimeGrid, P_half: np.ndarray, sig_half: np.ndarray,
                 kind: str, m1: float) -> RiccatiSolution:
    M = (p.A + m1 * p.A_bar) - p.W @ (P_half + m1 * sig_half)
    sig_T = np.swapaxes(sig_half, 1, 2)
    if kind == MFC:
        # mfc Sigma is symmetric, so sig_T == sig_half up to the projection
        K = (p.S.T @ p.Q_bar @ p.S - sig_half @ p.W @ sig_half
             + sig_half @ p.A_bar + np.swapaxes(sig_half @ p.A_bar, 1, 2))
    else:
        K = (p.S.T @ p.Q_bar @ p.S - sig_T @ p.W @ sig_half
             + sig_T @ p.A_bar + np.swapaxes(sig_T @ p.A_bar, 1, 2))
    return rk4_backward_affine_quadratic(
        grid, terminal=p.S_T.T @ p.Q_bar_T @ p.S_T,
        C_half=-K, L_half=-np.swapaxes(M, 1, 2), D_half=-M,
        W=None, q=0.0, symmetrize=True,
    )


def solve_master_mfc(p: LQParams, grid: TimeGrid, m1_samples: Sequence[float]) -> MasterAnsatz:
    """Control-type quadratic solution; Sigma/Gamma pre-solved at m1_samples."""
    return _solve_master(MFC, p, grid, m1_samples)


def solve_master_mfg(p: LQParams, grid: TimeGrid, m1_samples: Sequence[float]) -> MasterAnsatz:
    """Game-type quadratic solution; Sigma is generally nonsymmetric."""
    return _solve_master(MFG, p, grid, m1_samples)


def _solve_master(kind: str, p: LQParams, grid: TimeGrid, m1_samples) -> MasterAnsatz:
    samples = [float(v) for v in m1_samples]
    if not samples:
        raise ValueError("m1_samples must be nonempty")
    if any(v <= 0.0 for v in samples):
        raise ValueError("m1_samples must all be > 0")
    ans = MasterAnsatz(kind, p, grid)
    for v in samples:
        ans.gamma(v)  # also solves sigma
    return ans


def eval_V(ans: MasterAnsatz, mom: MeasureMoments, t: float) -> float:
    return ans.eval_V(mom, t)


def eval_U(ans: MasterAnsatz, x, mom: MeasureMoments, t: float) -> float:
    return ans.eval_U(x, mom, t)
