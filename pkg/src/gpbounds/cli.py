"""Command-line entry point for the experiment harness and oracle checks."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .config import ConfigError, build_config, load_config_file
from .control import DivergenceError
from .experiments import run_control_experiment, run_sample_study, run_violation_benchmark
from .gp import NumericsError
from .hyperposterior import SamplerStuckError
from .oracles import run_all_checks

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

_NUMERICAL_FAILURES = (NumericsError, DivergenceError, SamplerStuckError, np.linalg.LinAlgError)


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=Path, default=None, help="YAML config file")
    sp.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    sp.add_argument("--seed", type=int, default=None, help="master seed override")
    sp.add_argument("--reps", type=int, default=None, help="repetition count override")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpbounds",
        description="Robust GP uniform error bounds: studies, benchmarks, control runs, oracle checks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sample-study", help="ground truth drawn from the prior, violation rates per method")
    _add_common_flags(sp)

    sp = sub.add_parser("benchmark", help="violation rates on a CSV dataset under random splits")
    _add_common_flags(sp)
    sp.add_argument("--dataset", type=Path, default=None, help="dataset CSV (columns x1..xd,y)")

    sp = sub.add_parser("control", help="manipulator tracking runs under the three gain policies")
    _add_common_flags(sp)

    sp = sub.add_parser("oracle", help="run the randomized check suite and write checks.csv")
    sp.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trials", type=int, default=1000)
    return parser


def _resolve_config(args, experiment: str):
    raw = load_config_file(args.config) if args.config else {}
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if experiment == "benchmark" and getattr(args, "dataset", None) is not None:
        overrides["dataset_path"] = str(args.dataset)
    return build_config(experiment, raw, **overrides)


def _summarize_rates(rows) -> list[str]:
    lines = []
    methods = sorted({r.method for r in rows})
    sizes = sorted({r.train_size for r in rows})
    for n in sizes:
        for method in methods:
            rates = [r.violation_rate for r in rows if r.method == method and r.train_size == n]
            lines.append(f"N={n} {method}: mean violation rate {np.mean(rates):.3f} over {len(rates)} runs")
    return lines


def _cmd_sample_study(args) -> int:
    cfg = _resolve_config(args, "sample-study")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    output = run_sample_study(cfg)
    reporting.write_results_csv(out / "results.csv", output.rows)
    reporting.write_pairs_csv(out / "bounding_pairs.csv", output.pairs)
    reporting.write_containment_csv(out / "containment.csv", output.containment)
    reporting.render_rates_figure(out / "sample_study.png", output.rows, "GP-sample study")
    reporting.write_manifest(out / "run_manifest.json", cfg.manifest(), {"rows": len(output.rows)})
    for line in _summarize_rates(output.rows):
        print(line)
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    cfg = _resolve_config(args, "benchmark")
    if cfg.dataset_path is None:
        raise ConfigError("benchmark needs a dataset: pass --dataset or set dataset_path in the config")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    output = run_violation_benchmark(cfg)
    reporting.write_results_csv(out / "results.csv", output.rows)
    reporting.write_pairs_csv(out / "bounding_pairs.csv", output.pairs)
    reporting.render_rates_figure(out / "benchmark.png", output.rows, Path(cfg.dataset_path).stem)
    reporting.write_manifest(out / "run_manifest.json", cfg.manifest(), {"rows": len(output.rows)})
    for line in _summarize_rates(output.rows):
        print(line)
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


def _cmd_control(args) -> int:
    cfg = _resolve_config(args, "control")
    out = Path(args.out)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    output = run_control_experiment(cfg)
    reporting.write_results_csv(out / "results.csv", output.rows)
    reporting.write_pairs_csv(out / "bounding_pairs.csv", output.pairs)
    reporting.write_decile_csv(out / "decile_summary.csv", output.deciles)
    for policy, rep, traj in output.trajectories:
        reporting.write_trajectory_csv(out / "trajectories" / f"{policy}_rep{rep:03d}.csv", traj)
    reporting.render_control_figure(out / "control.png", output, cfg.control.xi_des)
    reporting.write_manifest(out / "run_manifest.json", cfg.manifest(), {"runs": len(output.runs)})
    for policy in sorted(output.deciles):
        maxes = [r.max_error_post_transient for r in output.runs if r.policy == policy]
        print(f"{policy}: median post-transient max error {np.median(maxes):.3f} over {len(maxes)} runs")
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = run_all_checks(seed=args.seed, trials=args.trials)
    reporting.write_checks_csv(out / "checks.csv", reports)
    reporting.render_checks_figure(out / "checks.png", reports)
    hard_fail = False
    for rep in reports:
        soft = rep.name.endswith("gamma1")
        status = "pass" if rep.passed else ("soft-fail" if soft else "FAIL")
        print(f"{rep.name}: worst violation {rep.worst_violation:.3e} (tol {rep.tolerance:.1e}) {status}")
        hard_fail |= not rep.passed and not soft
    print(f"wrote {out / 'checks.csv'}")
    return EXIT_NUMERICAL if hard_fail else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    commands = {
        "sample-study": _cmd_sample_study,
        "benchmark": _cmd_benchmark,
        "control": _cmd_control,
        "oracle": _cmd_oracle,
    }
    try:
        return commands[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_FAILURES as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
