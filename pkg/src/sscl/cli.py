"""Command-line entry point: single runs and one-dimensional sweeps.

Each run writes three files into its output directory:

* ``report.json``   - the full experiment report (deterministic bytes)
* ``accuracy.csv``  - header ``task,eval_task,accuracy``, one row per
  lower-triangular accuracy entry
* ``metrics.csv``   - header ``task,A_t,unlabeled_train_acc``

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, parse_config
from .driver import ExperimentReport, run_experiment
from .errors import ConfigError

_SWEEP_KEYS = {
    "k": "k_order",
    "k_order": "k_order",
    "gamma": "gamma",
    "tau": "tau",
    "lambda_sgd": "lambda_sgd",
    "seed": "seed",
    "tasks": "tasks",
    "epochs": "epochs",
}

_INT_FIELDS = {"k_order", "seed", "tasks", "epochs"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sscl",
        description="Run a semi-supervised class-incremental experiment.",
    )
    parser.add_argument("--config", metavar="PATH", help="key=value configuration file")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--tasks", type=int, metavar="N")
    parser.add_argument("--gamma", type=float, metavar="F")
    parser.add_argument("--k-order", dest="k_order", type=int, metavar="N")
    parser.add_argument("--tau", type=float, metavar="F")
    parser.add_argument("--lambda-sgd", dest="lambda_sgd", type=float, metavar="F")
    parser.add_argument(
        "--strategy", choices=("none", "logit", "psedis", "dsgd", "combined")
    )
    parser.add_argument("--distill-scope", dest="distill_scope", choices=("labeled", "all", "gt"))
    parser.add_argument(
        "--sweep",
        metavar="KEY=A..B",
        help="run once per value, e.g. k=1..6 or gamma=0.9,1,2; subdirectories per value",
    )
    parser.add_argument("--out", dest="out_dir", metavar="DIR")
    return parser


def parse_sweep(spec: str) -> tuple[str, str, list]:
    """Parse KEY=A..B (inclusive integer range) or KEY=v1,v2,... into values."""
    if "=" not in spec:
        raise ConfigError(f"sweep spec {spec!r} must look like KEY=A..B or KEY=v1,v2")
    name, raw = (part.strip() for part in spec.split("=", 1))
    if name not in _SWEEP_KEYS:
        raise ConfigError(f"sweep key {name!r} not in {sorted(_SWEEP_KEYS)}")
    key = _SWEEP_KEYS[name]
    if ".." in raw:
        lo_text, hi_text = raw.split("..", 1)
        try:
            lo, hi = int(lo_text), int(hi_text)
        except ValueError:
            raise ConfigError(f"sweep range {raw!r} must use integers") from None
        if hi < lo:
            raise ConfigError(f"sweep range {raw!r} is empty")
        values: list = list(range(lo, hi + 1))
    else:
        tokens = [tok.strip() for tok in raw.split(",") if tok.strip()]
        if not tokens:
            raise ConfigError(f"sweep spec {raw!r} has no values")
        values = [int(tok) if key in _INT_FIELDS else float(tok) for tok in tokens]
    if key in _INT_FIELDS:
        values = [int(v) for v in values]
    return name, key, values


def _format_float(value: float) -> str:
    return f"{value:.6f}"


def write_outputs(report: ExperimentReport, out_dir: str) -> None:
    """Emit report.json, accuracy.csv, and metrics.csv (UTF-8, LF endings)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    (out / "report.json").write_text(payload, encoding="utf-8", newline="\n")

    acc_lines = ["task,eval_task,accuracy"]
    for t, row in enumerate(report.accuracy, start=1):
        for i, value in enumerate(row, start=1):
            acc_lines.append(f"{t},{i},{_format_float(value)}")
    (out / "accuracy.csv").write_text("\n".join(acc_lines) + "\n", encoding="utf-8", newline="\n")

    met_lines = ["task,A_t,unlabeled_train_acc"]
    for t, (a_t, unl) in enumerate(zip(report.incremental, report.unlabeled_pooled), start=1):
        met_lines.append(f"{t},{_format_float(a_t)},{_format_float(unl)}")
    (out / "metrics.csv").write_text("\n".join(met_lines) + "\n", encoding="utf-8", newline="\n")


def run(config: RunConfig) -> int:
    """Execute one experiment and write its three output files."""
    report = run_experiment(config)
    write_outputs(report, config.out_dir)
    print(
        f"run complete: A={report.average:.4f} "
        f"(seed {report.seed}, {report.wall_clock_seconds:.1f}s) -> {config.out_dir}"
    )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: value
        for key, value in vars(args).items()
        if key not in ("config", "sweep") and value is not None
    }
    try:
        base = parse_config(args.config, overrides)
        if args.sweep is None:
            return run(base)
        name, key, values = parse_sweep(args.sweep)
        root = Path(base.out_dir)
        for value in values:
            label = f"{name}{value:g}" if isinstance(value, float) else f"{name}{value}"
            sub = parse_config(
                args.config, {**overrides, key: value, "out_dir": str(root / label)}
            )
            code = run(sub)
            if code != 0:
                return code
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"run failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
