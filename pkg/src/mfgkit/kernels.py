"""Hot-loop RK4 sweeps for the affine-quadratic ODE families.

Every Riccati family used by the closed forms fits

    dX/dt = C(t) + L(t) X + X D(t) + q * X W X

with coefficients known on the half grid (nodes plus midpoints). The sweep is
the runtime hot spot, so a Cython kernel is used when the built extension
imports; otherwise a numpy sweep with identical stepping runs. Set
``MFGKIT_NO_CEXT=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import BlowUpError
from .riccati import DEFAULT_MAGNITUDE_BOUND, RiccatiSolution, TimeGrid

try:  # pragma: no cover - depends on the build environment
    if os.environ.get("MFGKIT_NO_CEXT"):
        _ricc_kernel = None
    else:
        from . import _ricc_kernel
except ImportError:  # pragma: no cover
    _ricc_kernel = None

USING_COMPILED = _ricc_kernel is not None


def halfgrid_from_nodes(node_values: np.ndarray) -> np.ndarray:
    """Interleave node samples with midpoint averages: (N+1,...) -> (2N+1,...)."""
    v = np.asarray(node_values, dtype=float)
    out = np.empty((2 * (v.shape[0] - 1) + 1,) + v.shape[1:])
    out[0::2] = v
    out[1::2] = 0.5 * (v[:-1] + v[1:])
    return out


def halfgrid_constant(matrix: np.ndarray, num_steps: int) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    return np.broadcast_to(m, (2 * num_steps + 1,) + m.shape)


def _rhs_py(C, L, D, W, q, idx, X):
    out = C[idx] + L[idx] @ X + X @ D[idx]
    if q != 0.0:
        out = out + q * (X @ W @ X)
    return out


def _rk4_backward_py(C, L, D, W, q, terminal, h, num_steps, symmetrize, bound):
    n = terminal.shape[0]
    out = np.empty((num_steps + 1, n, n))
    out[num_steps] = terminal
    x = terminal.copy()
    comp = np.zeros_like(x)  # Kahan compensation, mirrors the compiled sweep
    for step in range(num_steps - 1, -1, -1):
        k1 = _rhs_py(C, L, D, W, q, 2 * step + 2, x)
        k2 = _rhs_py(C, L, D, W, q, 2 * step + 1, x - 0.5 * h * k1)
        k3 = _rhs_py(C, L, D, W, q, 2 * step + 1, x - 0.5 * h * k2)
        k4 = _rhs_py(C, L, D, W, q, 2 * step, x - h * k3)
        delta = (-h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        yy = delta - comp
        tt = x + yy
        comp = (tt - x) - yy
        x = tt
        if symmetrize:
            x = 0.5 * (x + x.T)
            comp = 0.5 * (comp + comp.T)
        peak = np.abs(x).max()
        if not peak <= bound:
            return None, step
        out[step] = x
    return out, -1


def rk4_backward_affine_quadratic(
    grid: TimeGrid,
    terminal: np.ndarray,
    C_half: np.ndarray,
    L_half: np.ndarray,
    D_half: np.ndarray,
    W: np.ndarray | None = None,
    q: float = 0.0,
    symmetrize: bool = False,
    magnitude_bound: float = DEFAULT_MAGNITUDE_BOUND,
) -> RiccatiSolution:
    """Backward RK4 sweep of dX/dt = C + L X + X D + q X W X on `grid`."""
    term = np.ascontiguousarray(terminal, dtype=float)
    n = term.shape[0]
    num = grid.num_steps
    want = 2 * num + 1
    C_half = np.ascontiguousarray(C_half, dtype=float)
    L_half = np.ascontiguousarray(L_half, dtype=float)
    D_half = np.ascontiguousarray(D_half, dtype=float)
    for name, arr in (("C", C_half), ("L", L_half), ("D", D_half)):
        if arr.shape != (want, n, n):
            raise ValueError(f"{name}_half must have shape {(want, n, n)}, got {arr.shape}")
    Wm = np.ascontiguousarray(np.zeros((n, n)) if W is None else W, dtype=float)

    if _ricc_kernel is not None:
        values, blow = _ricc_kernel.rk4_backward_aq(
            C_half, L_half, D_half, Wm, float(q), term, grid.h, num,
            bool(symmetrize), float(magnitude_bound),
        )
    else:
        values, blow = _rk4_backward_py(
            C_half, L_half, D_half, Wm, float(q), term, grid.h, num,
            bool(symmetrize), float(magnitude_bound),
        )
    if blow >= 0:
        raise BlowUpError(
            f"Riccati sweep escaped at t={grid.times()[blow]:.6g} (bound {magnitude_bound:.1e})"
        )
    return RiccatiSolution(grid=grid, values=values)
