"""Command-line entry point.

Subcommands: generate-data, train, evaluate, gradcheck, compare.
Exit codes: 0 success, 1 validation error, 2 numerical abort (NaN).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment as exp
from . import trainer as trainer_mod
from .experiment import ConfigError, ExperimentConfig
from .trainer import NumericalAbortError


def _add_common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required,
                   help="path to the experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="difftok")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the synthetic dataset")
    _add_common(p)

    p = sub.add_parser("train", help="run one training experiment")
    _add_common(p)
    p.add_argument("--regime", default=None,
                   choices=["BASELINE", "FREEZE_SSL", "FULL_FINETUNE"],
                   help="override config regime")

    p = sub.add_parser("evaluate", help="re-evaluate a trained run directory")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the joint loss")
    _add_common(p, config_required=False)

    p = sub.add_parser("compare", help="run several regimes and tabulate")
    _add_common(p)
    p.add_argument("--regimes", default="BASELINE,FREEZE_SSL,FULL_FINETUNE",
                   help="comma-separated regime list")
    return parser


def _load(args) -> ExperimentConfig:
    return exp.load_config(args.config, seed=args.seed, out_dir=args.out,
                           regime=getattr(args, "regime", None))


def cmd_generate_data(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    dataset = exp.dataset_for(cfg, out / "data")
    print(f"wrote {len(dataset)} utterances under {out / 'data'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    result = exp.run_experiment(cfg)
    print(json.dumps({
        "config_hash": result.config_hash,
        "frame_accuracy": result.evaluation["frame_accuracy"],
        "mean_asr_loss": result.evaluation["mean_asr_loss"],
        "final_loss": result.history[-1].total_loss,
        "out_dir": cfg.out_dir,
    }, indent=1))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    params_path = out / "params.json"
    if not params_path.exists():
        raise ConfigError("out", f"no trained parameters at {params_path}")
    dataset = exp.dataset_for(cfg, out / "data")
    state = trainer_mod.init_training(trainer_mod.Regime(cfg.regime), dataset, cfg)
    state.params = exp.load_paramset(params_path)
    evaluation = trainer_mod.evaluate(state, dataset)
    print(json.dumps(evaluation, indent=1))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load(args) if args.config else None
    report = exp.run_gradcheck(cfg)
    out_dir = Path(args.out) if args.out else (
        Path(cfg.out_dir) if cfg else Path("runs/gradcheck"))
    out_dir.mkdir(parents=True, exist_ok=True)
    exp.write_json(out_dir / "gradcheck.json", report)
    print(f"gradcheck {'PASS' if report['passed'] else 'FAIL'} "
          f"(max_rel_err={report['max_rel_err']:.3e}, "
          f"threshold={report['threshold']:.0e})")
    if not report["passed"]:
        print("failed parameters: " + ", ".join(report["failed_params"]))
    return 0 if report["passed"] else 1


def cmd_compare(args) -> int:
    cfg = _load(args)
    regimes = [r.strip() for r in args.regimes.split(",") if r.strip()]
    rows = exp.compare_regimes(cfg, regimes)
    header = "\t".join(exp.COMPARE_COLUMNS)
    print(header)
    for row in rows:
        print("\t".join(str(row[c]) for c in exp.COMPARE_COLUMNS))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "generate-data": cmd_generate_data,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "gradcheck": cmd_gradcheck,
        "compare": cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericalAbortError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
