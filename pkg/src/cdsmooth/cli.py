"""Command line interface: run experiments, validate configs, print model cards."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import ExperimentConfig, run_experiment
from .models import BENCHMARK_NAMES, benchmark, model_card


def _load_config(path: str) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text())
    return ExperimentConfig.from_dict(raw)


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    result = run_experiment(config)
    print(f"model={config.model} kind={config.kind} smoother={config.smoother} "
          f"approx={config.approximator} trials={len(result.reports)} "
          f"failures={len(result.failures)}")
    print(f"{'iter':>4} {'rmse_pos':>12} {'rmse_vel':>12} {'rmse_par':>12} {'chi2_avg':>12}")
    for row in result.summary:
        print(f"{int(row[0]):>4} {row[1]:>12.4f} {row[2]:>12.4f} {row[3]:>12.4f} {row[4]:>12.4f}")
    for name, path in result.files.items():
        print(f"{name}: {path}")
    return 0


def _cmd_validate(args) -> int:
    config = _load_config(args.config)
    try:
        bench = benchmark(config.model, radar_x=config.radar_x, radar_y=config.radar_y)
        lines = bench.model.validate()
        from .harness import _resolve

        _, mesh, _, _ = _resolve(config)
    except (ValueError, KeyError) as exc:
        print(f"INVALID: {exc}")
        return 1
    print(f"config {args.config}: OK")
    for line in lines:
        print(f"  {line}")
    print(f"  mesh: {mesh.n_nodes} nodes, {mesh.measurement_times.size} measurements, "
          f"substeps={mesh.substeps}")
    print(f"  trials={config.mc_runs} iterations={config.iterations} seed={config.seed}")
    return 0


def _cmd_models(args) -> int:
    for name in BENCHMARK_NAMES:
        print(model_card(name))
        print()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cdsmooth",
        description="Continuous-discrete Gaussian smoothing for nonlinear SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a Monte Carlo experiment from a JSON config")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="dry-run dimension/constant checks for a config")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_models = sub.add_parser("models", help="print the model cards")
    p_models.set_defaults(func=_cmd_models)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
