"""Backward fixed-step RK4 integration of matrix-valued Riccati-type ODEs.

All solves run on a uniform grid with the terminal condition stored bitwise
at the last node. Blow-up (finite-time escape of the quadratic flow) raises
instead of returning inf/nan values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BlowUpError, DimensionMismatchError, OutOfRangeError

FieldFn = Callable[[float, np.ndarray], np.ndarray]

DEFAULT_MAGNITUDE_BOUND = 1e12
_SYM_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``num_steps`` intervals on [t_start, t_end]."""

    t_start: float
    t_end: float
    num_steps: int
    _times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"need t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if int(self.num_steps) < 1 or int(self.num_steps) != self.num_steps:
            raise ValueError(f"num_steps must be a positive integer, got {self.num_steps}")
        object.__setattr__(self, "num_steps", int(self.num_steps))
        times = np.linspace(self.t_start, self.t_end, self.num_steps + 1)
        times.setflags(write=False)
        object.__setattr__(self, "_times", times)

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.num_steps

    def times(self) -> np.ndarray:
        return self._times

    def contains(self, t: float, tol: float = 1e-12) -> bool:
        pad = tol * (self.t_end - self.t_start)
        return self.t_start - pad <= t <= self.t_end + pad

    def locate(self, t: float) -> tuple[int, float]:
        """Interval index i and interpolation weight w in [0, 1] with t ~ (1-w) t_i + w t_{i+1}."""
        if not self.contains(t):
            raise OutOfRangeError(f"t={t} outside grid [{self.t_start}, {self.t_end}]")
        i = int((t - self.t_start) / self.h)
        i = min(max(i, 0), self.num_steps - 1)
        ts = self._times
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return i, min(max(w, 0.0), 1.0)

    def nearest_node(self, t: float) -> int:
        if not self.contains(t):
            raise OutOfRangeError(f"t={t} outside grid [{self.t_start}, {self.t_end}]")
        return min(max(int(round((t - self.t_start) / self.h)), 0), self.num_steps)


@dataclass(frozen=True)
class RiccatiSolution:
    """Node values of a matrix ODE solution; index 0 holds t_start."""

    grid: TimeGrid
    values: np.ndarray  # (num_steps + 1, n, n)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2]:
            raise DimensionMismatchError(f"values must be (nodes, n, n), got {v.shape}")
        if v.shape[0] != self.grid.num_steps + 1:
            raise DimensionMismatchError(
                f"expected {self.grid.num_steps + 1} node values, got {v.shape[0]}"
            )
        if not np.isfinite(v).all():
            raise BlowUpError("solution contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def eval_at(self, t: float) -> np.ndarray:
        """Linear interpolation between bracketing nodes; exact at nodes."""
        i, w = self.grid.locate(t)
        if w == 0.0:
            return self.values[i]
        if w == 1.0:
            return self.values[i + 1]
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def scalar_values(self) -> np.ndarray:
        """Node values as a 1-D array (only for 1x1 solutions)."""
        if self.dim != 1:
            raise DimensionMismatchError("scalar_values requires a 1x1 solution")
        return self.values[:, 0, 0]


def eval_at(sol: RiccatiSolution, t: float) -> np.ndarray:
    return sol.eval_at(t)


def _as_square_matrix(m) -> np.ndarray:
    out = np.atleast_2d(np.asarray(m, dtype=float))
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {out.shape}")
    return out


def integrate_backward(
    field: FieldFn,
    terminal,
    grid: TimeGrid,
    symmetrize: bool | None = None,
    magnitude_bound: float = DEFAULT_MAGNITUDE_BOUND,
) -> RiccatiSolution:
    """Classical RK4 sweep from t_end down to t_start.

    Parameters
    ----------
    field : callable (t, X) -> dX/dt with X an (n, n) array.
    terminal : terminal value at t_end (scalar or (n, n)).
    symmetrize : project each step onto symmetric matrices; default: on iff
        the terminal value is symmetric (the symmetric Riccati families).
    magnitude_bound : raise BlowUpError when any entry magnitude exceeds it.
    """
    term = _as_square_matrix(terminal)
    if not np.isfinite(term).all():
        raise BlowUpError("terminal condition is not finite")
    if symmetrize is None:
        symmetrize = bool(np.max(np.abs(term - term.T)) <= _SYM_TOL * max(1.0, np.abs(term).max()))

    probe = np.asarray(field(grid.t_end, term), dtype=float)
    if probe.shape != term.shape:
        raise DimensionMismatchError(
            f"field output shape {probe.shape} != terminal shape {term.shape}"
        )

    times = grid.times()
    h = grid.h
    values = np.empty((grid.num_steps + 1,) + term.shape)
    values[-1] = term
    x = term.copy()
    comp = np.zeros_like(x)  # Kahan compensation keeps long sweeps at the h^4 floor
    for k in range(grid.num_steps - 1, -1, -1):
        t_hi = times[k + 1]
        t_mid = 0.5 * (times[k] + times[k + 1])
        k1 = field(t_hi, x)
        k2 = field(t_mid, x - (0.5 * h) * k1)
        k3 = field(t_mid, x - (0.5 * h) * k2)
        k4 = field(times[k], x - h * k3)
        delta = (-h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        yy = delta - comp
        tt = x + yy
        comp = (tt - x) - yy
        x = tt
        if symmetrize:
            x = 0.5 * (x + x.T)
            comp = 0.5 * (comp + comp.T)
        peak = np.abs(x).max()
        if not peak <= magnitude_bound:  # also catches nan
            raise BlowUpError(
                f"Riccati sweep escaped at t={times[k]:.6g}: max entry {peak:.3e}"
            )
        values[k] = x
    return RiccatiSolution(grid=grid, values=values)


def integrate_scalar_quadrature(f: Callable[[float], float], grid: TimeGrid, t: float) -> float:
    """Composite Simpson value of the tail integral of ``f`` from t to t_end.

    The subinterval width never exceeds the grid step, so node-aligned t gives
    evaluations exactly at grid nodes.
    """
    if not grid.contains(t):
        raise OutOfRangeError(f"t={t} outside grid [{grid.t_start}, {grid.t_end}]")
    span = grid.t_end - t
    if span <= 0.0:
        return 0.0
    n_sub = 2 * max(1, math.ceil(span / (2.0 * grid.h)))
    xs = np.linspace(t, grid.t_end, n_sub + 1)
    fx = np.array([f(x) for x in xs], dtype=float)
    w = np.ones(n_sub + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((xs[1] - xs[0]) / 3.0 * (w @ fx))


def tail_integrals(node_values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Integrals from every node to t_end of a function sampled at the nodes.

    Chains composite Simpson pairs; the single-interval base case uses the
    three-point closed Newton-Cotes rule, keeping every entry O(h^4) accurate.
    """
    f = np.asarray(node_values, dtype=float)
    n = grid.num_steps
    if f.shape[0] != n + 1:
        raise DimensionMismatchError(f"expected {n + 1} node samples, got {f.shape[0]}")
    h = grid.h
    out = np.empty(n + 1)
    out[n] = 0.0
    if n >= 1:
        if n == 1:
            out[0] = 0.5 * h * (f[0] + f[1])  # no third node available
            return out
        out[n - 1] = h / 12.0 * (-f[n - 2] + 8.0 * f[n - 1] + 5.0 * f[n])
    for i in range(n - 2, -1, -1):
        out[i] = out[i + 2] + h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2])
    return out
