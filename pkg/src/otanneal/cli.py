"""Command-line interface.

Subcommands: solve, diagnose, pseudospectrum, calibrate, run, compare,
track, gen. Every subcommand accepts ``--config <path>`` (JSON) and
``--seed``; file outputs land under ``--output-dir`` and are byte-stable
under fixed seeds (timings go to stderr only).

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 controller
stall.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .control import (
    ControllerConfig,
    CostProcess,
    ExponentialSchedule,
    calibrate_k_safe,
    run_annealing,
    schedule_from_json_dict,
)
from .errors import (
    ConvergenceError,
    InvalidInputError,
    NumericalFailureError,
    OTAnnealError,
)
from .harness import (
    SyntheticTask,
    annealing_log_rows,
    diagnostics_sweep,
    generate_spread_task,
    generate_task,
    run_comparison,
    write_jsonl,
)
from .spectral import (
    duality_check,
    pseudospectrum_grid,
    sinkhorn_jacobian,
    spectral_report,
    write_pseudospectrum_csv,
)
from .tracking import TrackingParams, critical_epsilon, simulate_tracking, write_trace_csv
from .transport import (
    CostMatrix,
    SolveConfig,
    load_cost_csv,
    load_cost_json,
    plan_entropy,
    round_to_assignment,
    sinkhorn_solve,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
EXIT_STALLED = 3


def _load_config(args) -> dict:
    if getattr(args, "config", None) is None:
        return {}
    with open(args.config) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise InvalidInputError("config root must be a JSON object")
    return doc


def _out_dir(args) -> Path:
    out = Path(getattr(args, "output_dir", ".") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve_cfg(doc: dict) -> SolveConfig:
    sub = doc.get("solve", {})
    return SolveConfig(
        tolerance=float(sub.get("tolerance", 1e-9)),
        max_iterations=int(sub.get("max_iterations", 10_000)),
        epsilon_floor=float(sub.get("epsilon_floor", 1e-4)),
    )


def _load_instance(args, doc: dict) -> CostMatrix:
    if getattr(args, "cost", None):
        spec = args.cost
        if spec == "zero":
            n = int(args.n or doc.get("n", 2))
            return CostMatrix.uniform(np.zeros((n, n)))
        path = Path(spec)
        if path.suffix == ".json":
            return load_cost_json(path)
        return load_cost_csv(path)
    if getattr(args, "task", None):
        task = _load_task(args.task)
        return task.base_instance()
    if "cost" in doc:
        from .transport import cost_from_json_dict

        return cost_from_json_dict(doc)
    raise InvalidInputError("no cost instance given (use --cost, --task, or config)")


def _load_task(path) -> SyntheticTask:
    with open(path) as fh:
        return SyntheticTask.from_json_dict(json.load(fh))


def _format_matrix(M: np.ndarray) -> str:
    return "\n".join(",".join(repr(float(x)) for x in row) for row in M)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_solve(args) -> int:
    doc = _load_config(args)
    C = _load_instance(args, doc)
    cfg = _solve_cfg(doc)
    sol = sinkhorn_solve(C, float(args.eps), cfg)
    print(f"epsilon: {sol.epsilon!r}")
    print(f"converged: {sol.converged} after {sol.iterations} iterations")
    print(f"marginal_residual: {sol.marginal_residual!r}")
    print(f"entropy: {plan_entropy(sol)!r}")
    assignment, exact = round_to_assignment(sol)
    print(f"assignment: {' '.join(str(int(j)) for j in assignment)} (exact={exact})")
    print("plan:")
    print(_format_matrix(sol.plan))
    if not sol.converged:
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_gen(args) -> int:
    doc = _load_config(args)
    n = int(args.n or doc.get("n", 8))
    seed = int(args.seed or 0)
    if (args.kind or doc.get("kind", "margin")) == "spread":
        task = generate_spread_task(n, seed=seed)
    else:
        noise = doc.get("noise_params", [args.noise_a, args.noise_b])
        task = generate_task(
            n,
            margin=float(args.margin or doc.get("margin", 1.0)),
            noise_params=(float(noise[0]), float(noise[1])),
            seed=seed,
        )
    out = _out_dir(args) / (args.output or f"task_n{n}_seed{seed}.json")
    with open(out, "w") as fh:
        json.dump(task.to_json_dict(), fh)
        fh.write("\n")
    print(f"wrote {out}")
    print(f"planted: {' '.join(str(int(j)) for j in task.planted)}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    doc = _load_config(args)
    cfg = _solve_cfg(doc)
    seed = int(args.seed or 0)
    if args.eps_list:
        eps_list = [float(x) for x in args.eps_list.split(",") if x]
        task = _load_task(args.task) if args.task else generate_spread_task(
            int(args.n or doc.get("n", 8)), seed=seed
        )
        out = _out_dir(args)
        csv_path = out / (args.output or "constants.csv")
        jsonl_path = out / "spectral_reports.jsonl"
        with open(csv_path, "w") as csv_fh, open(jsonl_path, "w") as jsonl_fh:
            rows = diagnostics_sweep(
                task, eps_list, int(args.sweep_seeds), solve_cfg=cfg,
                csv_file=csv_fh, jsonl_file=jsonl_fh,
            )
        print(f"wrote {csv_path} ({len(rows)} rows) and {jsonl_path}")
        return EXIT_OK
    C = _load_instance(args, doc)
    report = spectral_report(C, float(args.eps), cfg, seed=seed)
    for key, value in report.to_json_dict().items():
        print(f"{key}: {value!r}")
    check = duality_check(report)
    print(f"duality_check: {'pass' if check.passed else 'FAIL'} (slack {check.slack!r})")
    return EXIT_OK


def cmd_pseudospectrum(args) -> int:
    doc = _load_config(args)
    cfg = _solve_cfg(doc)
    C = _load_instance(args, doc)
    sol = sinkhorn_solve(C, float(args.eps), cfg)
    if not sol.converged:
        raise ConvergenceError(f"solve did not converge at eps={args.eps}")
    J = sinkhorn_jacobian(sol, C)
    re_axis, im_axis, sigma = pseudospectrum_grid(
        J,
        (float(args.re_min), float(args.re_max)),
        (float(args.im_min), float(args.im_max)),
        int(args.resolution),
    )
    out = _out_dir(args) / (args.output or "pseudospectrum.csv")
    with open(out, "w") as fh:
        write_pseudospectrum_csv(fh, re_axis, im_axis, sigma)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    doc = _load_config(args)
    cfg = _solve_cfg(doc)
    seed = int(args.seed or 0)
    n = int(doc.get("n", 8))
    n_proxies = int(doc.get("proxies", 5))
    noise = doc.get("noise_params", [2.5, 0.05])
    proxies = [
        generate_task(n, margin=float(doc.get("margin", 1.0)),
                      noise_params=(float(noise[0]), float(noise[1])),
                      seed=seed + 1000 + k).as_process(name=f"proxy-{k}")
        for k in range(n_proxies)
    ]
    result = calibrate_k_safe(
        proxies,
        float(doc.get("aggressive_alpha", args.alpha)),
        cfg,
        epsilon_start=float(doc.get("epsilon_start", 1.0)),
        epsilon_target=float(doc.get("epsilon_target", 0.01)),
        max_steps=int(doc.get("max_steps", 300)),
        seed=seed,
    )
    print(f"k_safe_estimate: {result.k_safe_estimate!r}")
    print(f"collapse_epsilon: {result.collapse_epsilon!r}")
    print(f"collapse_drift: {result.collapse_drift!r}")
    for trial in result.trials:
        print(
            f"trial {trial.name}: collapsed={trial.collapsed} step={trial.step} "
            f"epsilon={trial.epsilon!r} ratio={trial.ratio!r}"
        )
    out = _out_dir(args) / (args.output or "calibration.json")
    with open(out, "w") as fh:
        json.dump(
            {
                "k_safe_estimate": result.k_safe_estimate,
                "collapse_epsilon": result.collapse_epsilon,
                "collapse_drift": result.collapse_drift,
                "safety_factor": result.safety_factor,
                "trials": [
                    {
                        "name": t.name,
                        "collapsed": t.collapsed,
                        "step": t.step,
                        "epsilon": t.epsilon,
                        "drift": t.drift,
                        "ratio": t.ratio,
                    }
                    for t in result.trials
                ],
            },
            fh,
        )
        fh.write("\n")
    print(f"wrote {out}")
    return EXIT_OK


def _controller_config(doc: dict) -> ControllerConfig:
    if "controller" in doc:
        return ControllerConfig.from_json_dict(doc["controller"])
    raise InvalidInputError("config must contain a 'controller' object")


def cmd_run(args) -> int:
    doc = _load_config(args)
    cfg = _solve_cfg(doc)
    seed = int(args.seed or doc.get("seed", 0))
    task = _load_task(args.task) if args.task else SyntheticTask.from_json_dict(doc["task"])
    controller = _controller_config(doc)
    run = run_annealing(task.as_process(), controller, cfg, seed=seed)
    rows = annealing_log_rows(task, run)
    out = _out_dir(args) / (args.output or "run_log.jsonl")
    with open(out, "w") as fh:
        write_jsonl(fh, rows)
    final_correct = rows[-1]["assignment_correct"] if rows else False
    print(f"steps: {len(rows)}")
    print(f"final_epsilon: {run.states[-1].epsilon!r}")
    print(f"pauses: {run.states[-1].pause_count}")
    print(f"final_assignment_correct: {final_correct}")
    print(f"wrote {out}")
    if run.stalled:
        print("controller stalled", file=sys.stderr)
        return EXIT_STALLED
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = _load_config(args)
    cfg = _solve_cfg(doc)
    seed = int(args.seed or doc.get("seed", 0))
    task = _load_task(args.task) if args.task else SyntheticTask.from_json_dict(doc["task"])
    methods_doc = doc.get("methods")
    if not methods_doc:
        raise InvalidInputError("config must contain a 'methods' object")
    methods = {name: ControllerConfig.from_json_dict(md) for name, md in methods_doc.items()}
    summaries, logs = run_comparison(task, methods, cfg, seed=seed)
    out = _out_dir(args)
    for name, rows in logs.items():
        with open(out / f"log_{name}.jsonl", "w") as fh:
            write_jsonl(fh, rows)
    table_path = out / (args.output or "summary.json")
    with open(table_path, "w") as fh:
        json.dump([s.to_json_dict() for s in summaries], fh, indent=2)
        fh.write("\n")
    for s in summaries:
        target = s.steps_to_target if s.steps_to_target is not None else "failed"
        print(
            f"{s.method}: steps_to_target={target} accuracy={s.final_accuracy!r} "
            f"pauses={s.pause_steps} collapse={s.collapse_detected}"
        )
        print(f"  wall_time: {s.wall_time:.3f}s", file=sys.stderr)
    print(f"wrote {table_path}")
    return EXIT_OK


def cmd_track(args) -> int:
    doc = _load_config(args)
    params_doc = doc.get("tracking", {})
    schedule = (
        schedule_from_json_dict(params_doc["schedule"])
        if "schedule" in params_doc
        else ExponentialSchedule(alpha=float(args.alpha))
    )
    params = TrackingParams(
        gamma=float(params_doc.get("gamma", 1.0)),
        sensitivity_const=float(params_doc.get("sensitivity_const", 1.0)),
        kappa=float(params_doc.get("kappa", 1.0)),
        basin_radius=float(params_doc.get("basin_radius", 1.0)),
        epsilon_start=float(params_doc.get("epsilon_start", 0.5)),
        schedule=schedule,
        basin_mode=params_doc.get("basin_mode", "linear"),
    )
    steps = int(args.steps or params_doc.get("steps", 2000))
    trace = simulate_tracking(params, steps)
    out = _out_dir(args) / (args.output or "trace.csv")
    with open(out, "w") as fh:
        write_trace_csv(fh, trace)
    crit = critical_epsilon(params, float(args.alpha))
    print(f"escaped: {trace.ever_escaped}")
    print(f"escape_epsilon: {trace.escape_epsilon!r}")
    print(f"critical_epsilon_analytic: {crit.analytic!r}")
    print(f"critical_epsilon_simulated: {crit.simulated!r}")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidInputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otanneal", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="base RNG seed")
    common.add_argument("--output-dir", default=".", help="directory for file outputs")
    common.add_argument("--output", default=None, help="primary output file name")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one instance at one temperature")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--cost", default=None, help="'zero', a CSV path, or a JSON path")
    p.add_argument("--task", default=None, help="task JSON (uses its noise-free cost)")
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic task")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--noise-a", type=float, default=0.0)
    p.add_argument("--noise-b", type=float, default=1.0)
    p.add_argument("--kind", choices=["margin", "spread"], default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("diagnose", parents=[common], help="spectral report or constants sweep")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--cost", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--eps-list", default=None, help="comma-separated sweep temperatures")
    p.add_argument("--sweep-seeds", type=int, default=1)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("pseudospectrum", parents=[common], help="sigma_min grid of (zI - J)")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--cost", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--re-min", type=float, default=0.0)
    p.add_argument("--re-max", type=float, default=1.5)
    p.add_argument("--im-min", type=float, default=-0.75)
    p.add_argument("--im-max", type=float, default=0.75)
    p.add_argument("--resolution", type=int, default=41)
    p.set_defaults(func=cmd_pseudospectrum)

    p = sub.add_parser("calibrate", parents=[common], help="estimate the safety slope")
    p.add_argument("--alpha", type=float, default=0.8, help="aggressive schedule rate")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", parents=[common], help="one annealing run")
    p.add_argument("--task", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="run a method suite")
    p.add_argument("--task", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("track", parents=[common], help="scalar tracking simulation")
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailureError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OTAnnealError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
