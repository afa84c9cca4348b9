"""Experiment runner: structured config in, seed-reproducible CSV artifacts out.

Config format: one `key = value` per line, `#` comments, dotted sections
(`model.A = [[0.0]]`), matrices as row-major bracketed lists. Unknown keys are
rejected. Exit codes: 0 ok, 2 config error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import math
import sys
from pathlib import Path

import numpy as np

from . import finite_nash, master_residual, mckean_vlasov, systemic_risk
from .csvio import write_csv, write_keyvalue
from .errors import ConfigError, MfgkitError
from .lq_model import LQParams, solve_master_mfc, solve_master_mfg
from .riccati import TimeGrid, integrate_backward

LQ_MODEL_KEYS = ("A", "A_bar", "B", "Q", "Q_bar", "Q_T", "Q_bar_T", "S", "S_T",
                 "R", "sigma", "beta")
SYSTEMIC_MODEL_KEYS = ("alpha", "lam", "mu", "c", "sigma", "beta")

EXPERIMENT_KEYS = {
    "riccati-bench": {"required": {"grid", "seed"}, "optional": set()},
    "mfc-verify": {"required": {"grid", "seed", "model", "m1_samples", "num_samples"},
                   "optional": set()},
    "mfg-verify": {"required": {"grid", "seed", "model", "m1_samples", "num_samples"},
                   "optional": set()},
    "fbsde-check": {"required": {"grid", "seed", "model", "y0"}, "optional": set()},
    "finite-nash-sweep": {"required": {"grid", "seed", "model", "N_values"},
                          "optional": set()},
    "prop61": {"required": {"seed", "K_values"}, "optional": set()},
    "systemic": {"required": {"grid", "seed", "model", "N", "replications"},
                 "optional": set()},
}


def parse_config(text: str) -> dict:
    """Flat key = value lines into a nested dict; strict about syntax."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            parsed = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            parsed = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} conflicts with a scalar entry")
        if parts[-1] in node:
            raise ConfigError(f"duplicate key {key!r}")
        node[parts[-1]] = parsed
    return out


def _check_keys(experiment: str, config: dict):
    spec = EXPERIMENT_KEYS[experiment]
    allowed = spec["required"] | spec["optional"] | {"experiment", "out_dir"}
    unknown = set(config) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    missing = spec["required"] - set(config)
    if missing:
        raise ConfigError(f"missing key(s): {', '.join(sorted(missing))}")
    if "experiment" in config and config["experiment"] != experiment:
        raise ConfigError(
            f"config names experiment {config['experiment']!r}, command line says {experiment!r}"
        )


def _build_grid(section) -> TimeGrid:
    if not isinstance(section, dict):
        raise ConfigError("grid must be a section (grid.t_start, grid.t_end, grid.num_steps)")
    unknown = set(section) - {"t_start", "t_end", "num_steps"}
    if unknown:
        raise ConfigError(f"unknown grid key(s): {', '.join(sorted(unknown))}")
    try:
        return TimeGrid(float(section["t_start"]), float(section["t_end"]),
                        int(section["num_steps"]))
    except KeyError as exc:
        raise ConfigError(f"missing grid key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build_lq_model(section, horizon: float) -> LQParams:
    if not isinstance(section, dict):
        raise ConfigError("model must be a section (model.A = ..., ...)")
    unknown = set(section) - set(LQ_MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown model key(s): {', '.join(sorted(unknown))}")
    missing = set(LQ_MODEL_KEYS) - set(section)
    if missing:
        raise ConfigError(f"missing model key(s): {', '.join(sorted(missing))}")
    try:
        return LQParams(A=section["A"], A_bar=section["A_bar"], B=section["B"],
                        Q=section["Q"], Q_bar=section["Q_bar"], Q_T=section["Q_T"],
                        Q_bar_T=section["Q_bar_T"], S=section["S"], S_T=section["S_T"],
                        R=section["R"], sigma=section["sigma"],
                        beta=float(section["beta"]), horizon=horizon)
    except (ValueError, TypeError, MfgkitError) as exc:
        raise ConfigError(f"bad model: {exc}") from None


def _build_systemic_model(section, horizon: float) -> systemic_risk.SystemicParams:
    if not isinstance(section, dict):
        raise ConfigError("model must be a section")
    unknown = set(section) - set(SYSTEMIC_MODEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown model key(s): {', '.join(sorted(unknown))}")
    missing = set(SYSTEMIC_MODEL_KEYS) - set(section)
    if missing:
        raise ConfigError(f"missing model key(s): {', '.join(sorted(missing))}")
    try:
        return systemic_risk.SystemicParams(
            alpha=float(section["alpha"]), lam=float(section["lam"]),
            mu=float(section["mu"]), c=float(section["c"]),
            sigma=float(section["sigma"]), beta=float(section["beta"]), T=horizon)
    except ValueError as exc:
        raise ConfigError(f"bad model: {exc}") from None


def lq_params_to_config(p: LQParams) -> str:
    """Serialize model matrices to the flat config format (round-trips exactly)."""
    lines = []
    for key in LQ_MODEL_KEYS:
        if key == "beta":
            lines.append(f"model.beta = {float(p.beta)!r}")
        else:
            mat = getattr(p, key)
            rows = ", ".join(
                "[" + ", ".join(repr(float(v)) for v in row) + "]" for row in mat)
            lines.append(f"model.{key} = [{rows}]")
    return "\n".join(lines) + "\n"


def _model_hash(config: dict) -> str:
    canon = repr(sorted(_flatten(config))).encode()
    return hashlib.sha256(canon).hexdigest()[:16]


def _flatten(node, prefix=""):
    items = []
    if isinstance(node, dict):
        for key in sorted(node):
            items.extend(_flatten(node[key], f"{prefix}{key}."))
    else:
        items.append((prefix.rstrip("."), repr(node)))
    return items


def _header(experiment: str, seed: int, grid: TimeGrid | None, config: dict) -> str:
    gtxt = (f"grid=[{grid.t_start},{grid.t_end}]x{grid.num_steps}" if grid else "grid=none")
    return f"experiment={experiment} seed={seed} {gtxt} config_hash={_model_hash(config)}"


# -- experiment runners ------------------------------------------------------


def _run_riccati_bench(config, out_dir: Path, seed: int):
    grid = _build_grid(config["grid"])
    field = lambda t, x: x @ x - np.eye(1)
    rows = []
    prev_err = None
    for steps in (1000, 2000, 10000):
        g = TimeGrid(grid.t_start, grid.t_end, steps)
        sol = integrate_backward(field, np.zeros((1, 1)), g)
        horizon = g.t_end - g.t_start
        err = abs(sol.values[0, 0, 0] - math.tanh(horizon))
        ratio = prev_err / err if prev_err and err > 0.0 else float("nan")
        rows.append((steps, err, ratio))
        prev_err = err
    write_csv(out_dir / "riccati_bench.csv", ("num_steps", "abs_error", "error_ratio"),
              rows, header_comment=_header("riccati-bench", seed, grid, config))
    return 0


def _run_verify(kind: str, config, out_dir: Path, seed: int):
    grid = _build_grid(config["grid"])
    params = _build_lq_model(config["model"], horizon=grid.t_end)
    m1_samples = [float(v) for v in config["m1_samples"]]
    count = int(config["num_samples"])
    solver = solve_master_mfc if kind == "mfc" else solve_master_mfg
    ans = solver(params, grid, m1_samples)
    samples = master_residual.draw_residual_samples(params, grid, count, m1_samples, seed)
    if kind == "mfc":
        report = master_residual.residual_mfc(ans, samples)
    else:
        report = master_residual.residual_mfg(ans, samples)
    report.to_csv(out_dir / f"{kind}_residuals.csv",
                  header_comment=_header(f"{kind}-verify", seed, grid, config))
    print(f"{kind}-verify: max |residual| = {report.max_abs:.3e} over {count} samples")
    return 0


def _run_fbsde(config, out_dir: Path, seed: int):
    grid = _build_grid(config["grid"])
    params = _build_lq_model(config["model"], horizon=grid.t_end)
    ans = solve_master_mfc(params, grid, [1.0])
    path = mckean_vlasov.BrownianPath.generate(grid, params.n, seed)
    y0 = np.atleast_1d(np.asarray(config["y0"], dtype=float))
    y_traj = mckean_vlasov.simulate_conditional_mean(ans, y0, path)
    r_traj = mckean_vlasov.backward_r(ans, y_traj, path)
    s_traj = mckean_vlasov.scalar_s(ans, y_traj, r_traj, path)
    sig = ans.sigma(1.0)
    rows = []
    gap_max = 0.0
    for k, t in enumerate(grid.times()):
        ref = sig.values[k] @ y_traj[k]
        gap = float(np.abs(r_traj[k] - ref).max())
        gap_max = max(gap_max, gap)
        rows.append((t, *y_traj[k], *r_traj[k], s_traj[k], gap))
    n = params.n
    cols = (["t"] + [f"y{i}" for i in range(n)] + [f"r{i}" for i in range(n)]
            + ["s", "gap"])
    write_csv(out_dir / "fbsde_check.csv", cols, rows,
              header_comment=_header("fbsde-check", seed, grid, config))
    print(f"fbsde-check: sup |r - Sigma y| = {gap_max:.3e}")
    return 0


def _run_finite_nash(config, out_dir: Path, seed: int):
    grid = _build_grid(config["grid"])
    params = _build_lq_model(config["model"], horizon=grid.t_end)
    ans = solve_master_mfg(params, grid, [1.0])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    t_mid = grid.times()[grid.num_steps // 2]
    sigma_scalar = float(np.abs(params.sigma).max())
    rows = []
    for N in config["N_values"]:
        states = rng.uniform(-1.0, 1.0, size=(int(N), params.n))
        res = finite_nash.nash_system_residual(ans, states, t_mid)
        rows.append((int(N), sigma_scalar, float(np.abs(res).max())))
    write_csv(out_dir / "finite_nash_sweep.csv", ("N", "sigma", "max_residual"), rows,
              header_comment=_header("finite-nash-sweep", seed, grid, config))
    return 0


def _run_prop61(config, out_dir: Path, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10,)))
    kernel = finite_nash.QuadraticFunctional.quadratic(W=[[1.0]])
    rows = []
    for K in config["K_values"]:
        pts = rng.uniform(-1.0, 1.0, size=(int(K), 1))
        l1, r1 = finite_nash.prop61_first_identity(kernel, pts, np.ones(1))
        rows.append((int(K), "first", l1, r1, abs(l1 - r1)))
        l2, r2 = finite_nash.prop61_second_identity(kernel, pts)
        rows.append((int(K), "second", l2, r2, abs(l2 - r2)))
        third = finite_nash.prop61_third_identity(kernel, pts, np.eye(1))
        rows.append((int(K), "third", third.lhs, third.rhs, third.gap))
    write_csv(out_dir / "prop61.csv", ("K", "identity", "lhs", "rhs", "gap"), rows,
              header_comment=_header("prop61", seed, None, config))
    return 0


def _run_systemic(config, out_dir: Path, seed: int):
    grid = _build_grid(config["grid"])
    params = _build_systemic_model(config["model"], horizon=grid.t_end)
    sol = systemic_risk.solve_systemic(params, grid)
    N = int(config["N"])
    replications = int(config["replications"])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    x0 = rng.normal(0.0, 0.5, size=N)
    sim = systemic_risk.simulate_banks(params, sol, N, x0, seed)
    rows = list(zip(sim.times, sim.mean, sim.y_ref, sim.spread_var))
    write_csv(out_dir / "systemic_paths.csv", ("t", "xbar", "y_ref", "spread_var"), rows,
              header_comment=_header("systemic", seed, grid, config))
    gaps = np.empty(replications)
    for rep in range(replications):
        rsim = systemic_risk.simulate_banks(params, sol, N, np.full(N, x0.mean()),
                                            seed, replication=rep)
        gaps[rep] = (rsim.mean[-1] - rsim.y_ref[-1]) ** 2
    write_keyvalue(out_dir / "systemic_summary.txt", [
        ("P0", sol.P_at(grid.t_start)),
        ("R_1_0", sol.R(1.0, grid.t_start)),
        ("stationary_value", systemic_risk.stationary_value(params)),
        ("mean_sq_gap_T", float(gaps.mean())),
        ("sigma2_T_over_N", params.sigma**2 * (grid.t_end - grid.t_start) / N),
    ], header_comment=_header("systemic", seed, grid, config))
    return 0


RUNNERS = {
    "riccati-bench": _run_riccati_bench,
    "mfc-verify": lambda cfg, out, seed: _run_verify("mfc", cfg, out, seed),
    "mfg-verify": lambda cfg, out, seed: _run_verify("mfg", cfg, out, seed),
    "fbsde-check": _run_fbsde,
    "finite-nash-sweep": _run_finite_nash,
    "prop61": _run_prop61,
    "systemic": _run_systemic,
}


def run(experiment: str, config: dict, out_dir, seed: int | None = None) -> int:
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"choose from {', '.join(sorted(RUNNERS))}")
    _check_keys(experiment, config)
    actual_seed = int(config["seed"]) if seed is None else int(seed)
    config = dict(config)
    config["seed"] = actual_seed
    out = Path(out_dir if out_dir is not None else config.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[experiment](config, out, actual_seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfgkit",
        description="Mean-field LQ toolkit experiment runner",
    )
    parser.add_argument("experiment", choices=sorted(RUNNERS))
    parser.add_argument("--config", required=True, help="path to key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        config = parse_config(text)
        return run(args.experiment, config, args.out, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MfgkitError as exc:
        print(f"numerical error in {args.experiment}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
