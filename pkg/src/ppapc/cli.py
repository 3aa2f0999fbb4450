"""Experiment runner: dimension sweeps, method comparison tables, series export.

Reproduces the benchmark study layout at configurable scale: for every grid
cell and seed, each selected method solves the same random instance; results
land in CSV tables (plus medians over seeds) with a JSON manifest tying the
artifacts to the configuration. Series mode exports per-iteration objective
and distance-to-reference series together with rendered figures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from statistics import median

import numpy as np

from . import diagnostics as diag
from .pc import PcConfig, run_pc
from .qcqp import (
    generate_instance,
    load_instance,
    oracle_solve,
    qcqp_problem,
    save_instance,
)
from .relaxed_ppa import RelaxedPpaConfig, run_relaxed_ppa

__all__ = ["ExperimentConfig", "run_table", "run_series", "replay", "main"]

DEFAULT_GRID = tuple((m, n) for m in (10, 20, 30) for n in (30, 60, 90))
METHODS = ("ppa", "rppa", "pc")
METHOD_GAMMAS = {"ppa": 1.0, "rppa": 1.5, "pc": 1.0}

TABLE_COLUMNS = [
    "m",
    "n",
    "seed",
    "method",
    "gamma",
    "iter",
    "time",
    "cpu",
    "error",
    "converged",
    "status",
]
SUMMARY_COLUMNS = [
    "m",
    "n",
    "method",
    "gamma",
    "median_iter",
    "median_error",
    "median_time",
    "median_cpu",
    "runs",
    "failures",
]

OUT_ENV_VAR = "PPAPC_OUT"
_ORACLE_LIMITS = (3, 6)  # max (m, n) for ground-truth checks


@dataclass
class ExperimentConfig:
    """Knobs of a benchmark run; defaults follow the reference study setup."""

    grid: tuple = DEFAULT_GRID
    seeds: int = 20
    seed_base: int = 0
    methods: tuple = METHODS
    mu1: float = 9.0
    mu2: float = 1.2
    gamma: float | None = None  # overrides the per-method default when set
    tau: float = 1e-10
    max_iters: int = 100_000
    corrector: str = "lower"
    diagnostics: bool = False
    compat_signs: bool = False
    out_dir: Path = field(default_factory=lambda: Path("ppapc_results"))
    save_instances: bool = False
    plot: bool = True

    def method_gamma(self, method: str) -> float:
        return self.gamma if self.gamma is not None else METHOD_GAMMAS[method]

    def as_dict(self) -> dict:
        return {
            "grid": [list(cell) for cell in self.grid],
            "seeds": self.seeds,
            "seed_base": self.seed_base,
            "methods": list(self.methods),
            "mu1": self.mu1,
            "mu2": self.mu2,
            "gamma": self.gamma,
            "tau": self.tau,
            "max_iters": self.max_iters,
            "corrector": self.corrector,
            "diagnostics": self.diagnostics,
            "compat_signs": self.compat_signs,
            "save_instances": self.save_instances,
            "plot": self.plot,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _solve(problem, method, cfg, gamma, keep_iterates=False, keep_details=False):
    if method in ("ppa", "rppa"):
        solver_cfg = RelaxedPpaConfig(
            mu1=cfg.mu1,
            mu2=cfg.mu2,
            gamma=gamma,
            tau=cfg.tau,
            max_iters=cfg.max_iters,
            compat_signs=cfg.compat_signs,
            keep_iterates=keep_iterates,
            diagnostics=keep_details,
        )
        return run_relaxed_ppa(problem, solver_cfg)
    solver_cfg = PcConfig(
        mu1=cfg.mu1,
        mu2=cfg.mu2,
        gamma=gamma,
        tau=cfg.tau,
        max_iters=cfg.max_iters,
        corrector=cfg.corrector,
        compat_signs=cfg.compat_signs,
        keep_iterates=keep_iterates,
        diagnostics=keep_details,
    )
    return run_pc(problem, solver_cfg)


def _write_manifest(cfg, out_dir, artifacts, notes=None):
    manifest = {
        "config": cfg.as_dict(),
        "config_hash": cfg.config_hash(),
        "artifacts": sorted(str(a) for a in artifacts),
        "created": datetime.now(timezone.utc).isoformat(),
    }
    if notes:
        manifest["notes"] = notes
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def run_table(cfg: ExperimentConfig):
    """Run the full grid sweep and write the comparison table CSVs.

    Returns (rows, summary_rows, failures); a failed or non-converged cell is
    recorded and the sweep continues.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    rows = []
    failures = 0
    oracle_m, oracle_n = _ORACLE_LIMITS

    for m, n in cfg.grid:
        for offset in range(cfg.seeds):
            seed = cfg.seed_base + offset
            inst = generate_instance(m, n, seed)
            if cfg.save_instances:
                inst_path = out_dir / f"instance_m{m}_n{n}_seed{seed}.json"
                save_instance(inst, inst_path)
                artifacts.append(inst_path)
            problem = qcqp_problem(inst)
            diagnosable = cfg.diagnostics and m <= oracle_m and n <= oracle_n
            for method in cfg.methods:
                gamma = cfg.method_gamma(method)
                row = {
                    "m": m,
                    "n": n,
                    "seed": seed,
                    "method": method,
                    "gamma": gamma,
                }
                t0 = time.perf_counter()
                try:
                    point, trace = _solve(
                        problem, method, cfg, gamma, keep_details=diagnosable
                    )
                except Exception as exc:  # record and continue the sweep
                    row.update(
                        iter=0,
                        time=0.0,
                        cpu=0.0,
                        error="",
                        converged=False,
                        status=f"failed: {exc}",
                    )
                    failures += 1
                    rows.append(row)
                    continue
                elapsed = time.perf_counter() - t0
                final_error = trace.records[-1].error if trace.records else 0.0
                row.update(
                    iter=trace.iterations,
                    time=elapsed,
                    cpu=max(trace.subproblem_times, default=0.0),
                    error=final_error,
                    converged=trace.converged,
                    status="ok" if trace.converged else "max_iters",
                )
                if not trace.converged:
                    failures += 1
                rows.append(row)
                if diagnosable and trace.details:
                    w_star = oracle_solve(inst)
                    if method == "pc":
                        report = diag.check_pc_contraction(trace, w_star)
                    else:
                        report = diag.check_ppa_contraction(trace, w_star)
                    diag_path = out_dir / f"diag_{method}_m{m}_n{n}_seed{seed}.json"
                    report.to_json(diag_path)
                    artifacts.append(diag_path)

    rows.sort(key=lambda r: (r["m"], r["n"], r["method"], r["gamma"], r["seed"]))
    table_path = out_dir / "table.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["error"] = repr(out["error"]) if out["error"] != "" else ""
            out["time"] = f"{out['time']:.6f}"
            out["cpu"] = f"{out['cpu']:.6f}"
            writer.writerow(out)
    artifacts.append(table_path)

    summary_rows = []
    keys = sorted({(r["m"], r["n"], r["method"], r["gamma"]) for r in rows})
    for m, n, method, gamma in keys:
        cell = [
            r
            for r in rows
            if (r["m"], r["n"], r["method"], r["gamma"]) == (m, n, method, gamma)
        ]
        ok = [r for r in cell if r["status"] == "ok"]
        summary_rows.append(
            {
                "m": m,
                "n": n,
                "method": method,
                "gamma": gamma,
                "median_iter": median(r["iter"] for r in ok) if ok else "",
                "median_error": repr(median(r["error"] for r in ok)) if ok else "",
                "median_time": f"{median(r['time'] for r in ok):.6f}" if ok else "",
                "median_cpu": f"{median(r['cpu'] for r in ok):.6f}" if ok else "",
                "runs": len(cell),
                "failures": len(cell) - len(ok),
            }
        )
    summary_path = out_dir / "table_summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(summary_rows)
    artifacts.append(summary_path)

    _write_manifest(cfg, out_dir, artifacts)
    return rows, summary_rows, failures


def _reference_solution(cfg, inst, problem):
    """Ground truth for the distance series: oracle on tiny instances, a
    high-accuracy run otherwise; None when neither is available."""
    if inst.m <= _ORACLE_LIMITS[0] and inst.n <= _ORACLE_LIMITS[1]:
        return oracle_solve(inst).x
    ref_cfg = RelaxedPpaConfig(
        mu1=cfg.mu1,
        mu2=cfg.mu2,
        gamma=1.5,
        tau=min(cfg.tau, 1e-13),
        max_iters=max(4 * cfg.max_iters, 200_000),
        compat_signs=cfg.compat_signs,
    )
    point, trace = run_relaxed_ppa(problem, ref_cfg)
    return point.x if trace.converged else None


def run_series(cfg: ExperimentConfig, method: str, m: int, n: int, seed: int):
    """Solve one cell and export per-iteration series files (and figures).

    Writes ``(k, f(x^k))`` and ``(k, ||x^k - x*||)`` CSVs, one row per
    iteration; the distance series is dropped with a warning when no
    reference solution can be certified.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inst = generate_instance(m, n, seed)
    inst_path = out_dir / f"instance_m{m}_n{n}_seed{seed}.json"
    save_instance(inst, inst_path)
    problem = qcqp_problem(inst)
    gamma = cfg.method_gamma(method)
    point, trace = _solve(problem, method, cfg, gamma, keep_iterates=True)

    stem = f"{method}_m{m}_n{n}_seed{seed}"
    artifacts = [inst_path]
    ks = list(range(1, trace.iterations + 1))
    f_vals = [rec.f_value for rec in trace.records]
    f_path = out_dir / f"f_series_{stem}.csv"
    with open(f_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "f"])
        for k, f_val in zip(ks, f_vals):
            writer.writerow([k, repr(f_val)])
    artifacts.append(f_path)
    if cfg.plot:
        from .plots import render_objective_figure

        fig_path = out_dir / f"fig_f_{stem}.png"
        render_objective_figure(ks, f_vals, fig_path, label=method)
        artifacts.append(fig_path)

    x_ref = _reference_solution(cfg, inst, problem)
    dist_path = None
    if x_ref is None:
        warnings.warn(
            "no certified reference solution; emitting only the objective series",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        dists = [float(np.linalg.norm(x - x_ref)) for x in trace.x_iterates[1:]]
        dist_path = out_dir / f"dist_series_{stem}.csv"
        with open(dist_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "dist"])
            for k, dist in zip(ks, dists):
                writer.writerow([k, repr(dist)])
        artifacts.append(dist_path)
        if cfg.plot:
            from .plots import render_distance_figure

            fig_path = out_dir / f"fig_dist_{stem}.png"
            render_distance_figure(ks, dists, fig_path, label=method)
            artifacts.append(fig_path)

    _write_manifest(cfg, out_dir, artifacts)
    return {
        "trace": trace,
        "point": point,
        "f_series": f_path,
        "dist_series": dist_path,
    }


def replay(instance_file, method: str, cfg: ExperimentConfig):
    """Deterministically rerun a saved instance with the given parameters."""
    inst = load_instance(instance_file)
    problem = qcqp_problem(inst)
    gamma = cfg.method_gamma(method)
    point, trace = _solve(problem, method, cfg, gamma)
    return {
        "method": method,
        "gamma": gamma,
        "iter": trace.iterations,
        "error": trace.records[-1].error if trace.records else 0.0,
        "converged": trace.converged,
        "f": float(problem.objective(point.x)),
        "x": point.x.tolist(),
        "lam": point.lam.tolist(),
    }


def _parse_grid(text: str):
    cells = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            m_str, n_str = chunk.split(":")
            cells.append((int(m_str), int(n_str)))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"grid cell {chunk!r} is not of the form m:n"
            )
    if not cells:
        raise argparse.ArgumentTypeError("grid is empty")
    return tuple(cells)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppapc",
        description=(
            "Benchmark runner for the relaxed proximal point and "
            "prediction-correction solvers on random QCQP instances."
        ),
    )
    parser.add_argument("--grid", type=_parse_grid, default=DEFAULT_GRID,
                        help='dimension grid as "m:n,m:n,..." (default: study grid)')
    parser.add_argument("--seeds", type=int, default=20,
                        help="seeds per grid cell (default 20)")
    parser.add_argument("--seed-base", type=int, default=0,
                        help="first seed value (default 0)")
    parser.add_argument("--method", action="append", choices=METHODS, default=None,
                        help="method to run; repeatable (default: all three)")
    parser.add_argument("--gamma", type=float, default=None,
                        help="relaxation/step tuning factor override")
    parser.add_argument("--mu1", type=float, default=9.0)
    parser.add_argument("--mu2", type=float, default=1.2)
    parser.add_argument("--tau", type=float, default=1e-10,
                        help="stopping error on the objective change")
    parser.add_argument("--max-iters", type=int, default=100_000)
    parser.add_argument("--corrector", choices=("upper", "lower"), default="lower")
    parser.add_argument("--diagnostics", action="store_true",
                        help="retain history and emit contraction reports "
                             "for oracle-checkable cells")
    parser.add_argument("--compat-signs", action="store_true",
                        help="reproduce the sign-flipped multiplier updates of "
                             "the reference experiment setup")
    parser.add_argument("--out", type=Path, default=None,
                        help=f"output directory (default ${OUT_ENV_VAR} or ppapc_results)")
    parser.add_argument("--replay", type=Path, default=None, metavar="FILE",
                        help="rerun a saved instance JSON instead of sweeping")
    parser.add_argument("--series", action="store_true",
                        help="emit per-iteration series (and figures) for each "
                             "method and grid cell at the base seed")
    parser.add_argument("--save-instances", action="store_true",
                        help="write each instance JSON next to the table")
    parser.add_argument("--no-plot", action="store_true",
                        help="skip figure rendering in series mode")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out or Path(os.environ.get(OUT_ENV_VAR, "ppapc_results"))
    methods = tuple(args.method) if args.method else METHODS
    cfg = ExperimentConfig(
        grid=args.grid,
        seeds=args.seeds,
        seed_base=args.seed_base,
        methods=methods,
        mu1=args.mu1,
        mu2=args.mu2,
        gamma=args.gamma,
        tau=args.tau,
        max_iters=args.max_iters,
        corrector=args.corrector,
        diagnostics=args.diagnostics,
        compat_signs=args.compat_signs,
        out_dir=out_dir,
        save_instances=args.save_instances,
        plot=not args.no_plot,
    )

    if args.replay is not None:
        failures = 0
        for method in methods:
            try:
                result = replay(args.replay, method, cfg)
            except Exception as exc:
                print(f"replay {method}: failed: {exc}", file=sys.stderr)
                failures += 1
                continue
            out_dir.mkdir(parents=True, exist_ok=True)
            result_path = out_dir / f"replay_{method}.json"
            with open(result_path, "w") as fh:
                json.dump(result, fh)
            print(
                f"replay {method}: iter={result['iter']} "
                f"error={result['error']:.3e} converged={result['converged']}"
            )
            if not result["converged"]:
                failures += 1
        return 2 if failures else 0

    if args.series:
        failures = 0
        for m, n in cfg.grid:
            for method in methods:
                try:
                    out = run_series(cfg, method, m, n, cfg.seed_base)
                except Exception as exc:
                    print(
                        f"series {method} m={m} n={n}: failed: {exc}",
                        file=sys.stderr,
                    )
                    failures += 1
                    continue
                trace = out["trace"]
                print(
                    f"series {method} m={m} n={n}: iter={trace.iterations} "
                    f"converged={trace.converged}"
                )
                if not trace.converged:
                    failures += 1
        return 2 if failures else 0

    rows, summary, failures = run_table(cfg)
    for row in summary:
        print(
            f"m={row['m']} n={row['n']} {row['method']}(gamma={row['gamma']}): "
            f"median_iter={row['median_iter']} failures={row['failures']}"
        )
    print(f"table written to {cfg.out_dir} ({len(rows)} runs, {failures} failures)")
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
