"""Command-line interface.

Subcommands: train, eval, adapt, ablate, synth, gradcheck.  Exit codes:
0 success, 1 usage or configuration error, 2 data or checkpoint format
error, 3 property failure (gradient check violations, training divergence).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULT_CONFIG_TEXT, ExperimentConfig
from .data import generate, write_trials
from .errors import (
    AcceptanceFailure,
    CheckpointError,
    ConfigError,
    ContractError,
    DataFormatError,
    DomainError,
    ShapeError,
    TrainingDiverged,
)
from .gradcheck import run_mixer_gradcheck, run_model_gradcheck
from .metrics import (
    RunMetrics,
    SeedResult,
    StructuredLog,
    write_confusion,
    write_entropy_trace,
    write_run_table,
)
from .train import (
    build_stream,
    evaluate,
    make_splits,
    run_ablation,
    run_adaptation,
    train_model,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROPERTY = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems via exit code 1."""

    def error(self, message):
        raise _UsageError(message)


def _read_config_file(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_file(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return _read_config_file(args.config)
    return ExperimentConfig()


def _apply_flag_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "mode", None):
        config = config.replace(tent__mode=args.mode)
    return config


def _out_dir(args, command: str, config: ExperimentConfig) -> str:
    out = getattr(args, "out", None) or os.path.join("runs", f"{command}-{config.config_hash()}")
    os.makedirs(out, exist_ok=True)
    return out


def _pick_seed(args, config: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else config.seeds()[0]


def cmd_train(args) -> int:
    config = _apply_flag_overrides(_load_config(args), args)
    seed = _pick_seed(args, config)
    out = _out_dir(args, "train", config)
    with StructuredLog(os.path.join(out, "log.jsonl")) as log:
        log.emit("train_start", seed=seed, config_hash=config.config_hash())
        start = time.perf_counter()
        model, history = train_model(config, seed, log)
        elapsed = time.perf_counter() - start
        ckpt_path = os.path.join(out, "model.nckp")
        save_checkpoint(ckpt_path, model, config)
        _, _, test_set = make_splits(config)
        test_accuracy, confusion = evaluate(model, test_set, config.get("optim.batch_size"))
        metrics = RunMetrics(config_hash=config.config_hash())
        metrics.add(SeedResult("train", seed, test_accuracy, elapsed))
        metrics.confusion = confusion
        write_run_table(os.path.join(out, "metrics.csv"), metrics)
        write_confusion(os.path.join(out, "confusion.csv"), confusion)
        log.emit(
            "train_done",
            seed=seed,
            best_epoch=history.best_epoch,
            best_val_accuracy=history.best_val_accuracy,
            test_accuracy=test_accuracy,
            checkpoint=ckpt_path,
        )
    print(
        f"trained seed {seed}: best val {history.best_val_accuracy:.4f} "
        f"(epoch {history.best_epoch}), test {test_accuracy:.4f}; checkpoint at {ckpt_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    override = _read_config_file(args.config) if args.config else None
    model, config = load_checkpoint(args.checkpoint, override, partial=args.partial)
    out = _out_dir(args, "eval", config)
    train_set, val_set, test_set = make_splits(config)
    chosen = {"train": train_set, "val": val_set, "test": test_set}[args.split]
    accuracy, confusion = evaluate(model, chosen, config.get("optim.batch_size"))
    metrics = RunMetrics(config_hash=config.config_hash())
    metrics.add(SeedResult(f"eval-{args.split}", _pick_seed(args, config), accuracy, 0.0))
    metrics.confusion = confusion
    write_run_table(os.path.join(out, "metrics.csv"), metrics)
    write_confusion(os.path.join(out, "confusion.csv"), confusion)
    print(f"eval on {args.split}: accuracy {accuracy:.4f} over {len(chosen)} trials")
    return EXIT_OK


def cmd_adapt(args) -> int:
    override = _read_config_file(args.config) if args.config else None
    model, config = load_checkpoint(args.checkpoint, override, partial=args.partial)
    config = _apply_flag_overrides(config, args)
    seed = _pick_seed(args, config)
    out = _out_dir(args, "adapt", config)
    _, _, test_set = make_splits(config)
    signals, labels = build_stream(test_set, config, seed)
    with StructuredLog(os.path.join(out, "log.jsonl")) as log:
        log.emit(
            "adapt_start",
            seed=seed,
            mode=config.get("tent.mode"),
            batches=len(signals),
            config_hash=config.config_hash(),
        )
        start = time.perf_counter()
        frozen, adapted, report = run_adaptation(model, config, signals, labels)
        elapsed = time.perf_counter() - start
        metrics = RunMetrics(config_hash=config.config_hash())
        metrics.add(SeedResult("frozen", seed, frozen, elapsed))
        metrics.add(SeedResult("adapted", seed, adapted, elapsed))
        metrics.entropy_trace = report.entropies
        write_run_table(os.path.join(out, "metrics.csv"), metrics)
        write_entropy_trace(os.path.join(out, "trace.csv"), report)
        log.emit(
            "adapt_done",
            frozen_accuracy=frozen,
            adapted_accuracy=adapted,
            flagged_batches=report.n_flagged,
            final_drift=report.final_drift,
        )
    print(
        f"adaptation ({config.get('tent.mode')}, {len(signals)} batches): "
        f"frozen {frozen:.4f} -> adapted {adapted:.4f} "
        f"(drift {report.final_drift:.4f}, {report.n_flagged} flagged)"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _apply_flag_overrides(_load_config(args), args)
    out = _out_dir(args, "ablate", config)
    with StructuredLog(os.path.join(out, "log.jsonl")) as log:
        log.emit("ablate_start", seeds=list(config.seeds()), config_hash=config.config_hash())
        metrics, report = run_ablation(config, log)
        write_run_table(os.path.join(out, "metrics.csv"), metrics)
        if report is not None:
            write_entropy_trace(os.path.join(out, "trace.csv"), report)
        log.emit("ablate_done")
    print(f"{'arm':<14} {'mean':>8} {'std':>8}")
    for arm in metrics.arms():
        mean, std = metrics.arm_mean_std(arm)
        print(f"{arm:<14} {mean:>8.4f} {std:>8.4f}")
    print(f"table written to {os.path.join(out, 'metrics.csv')}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _load_config(args)
    dataset = generate(config.synth_spec(), config.get("data.n_trials"))
    path = args.out or "trials.ntrl"
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_trials(path, dataset)
    print(
        f"wrote {len(dataset)} trials ({dataset.channels} channels x {dataset.time_len} "
        f"samples, {dataset.n_classes} classes) to {path}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = [
        run_model_gradcheck(tolerance=args.tolerance, seed=args.seed or 0),
        run_mixer_gradcheck(tolerance=args.tolerance, seed=args.seed or 0),
    ]
    for report in reports:
        for line in report.summary_lines():
            print(line)
    if not all(r.passed for r in reports):
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_show_config(args) -> int:
    sys.stdout.write(DEFAULT_CONFIG_TEXT)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="entromix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="experiment config file (key = value lines)")
        p.add_argument("--seed", type=int, default=None, help="run seed (default: first of seeds)")
        p.add_argument("--out", help="output directory (or file for synth)")
        p.add_argument(
            "--mode", choices=("episodic", "online"), default=None, help="adaptation mode"
        )
        p.add_argument(
            "--partial",
            action="store_true",
            help="allow skipping stored tensors the model has no slot for",
        )
        return p

    add("train", cmd_train, "train one model and save the best-validation checkpoint")
    p_eval = add("eval", cmd_eval, "evaluate a checkpoint on a data split")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file to load")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")
    p_adapt = add("adapt", cmd_adapt, "run frozen vs adapted accuracy over a shifted stream")
    p_adapt.add_argument("--checkpoint", required=True, help="checkpoint file to load")
    add("ablate", cmd_ablate, "run the four-arm ablation ladder over all seeds")
    add("synth", cmd_synth, "generate a synthetic trial file")
    p_grad = add("gradcheck", cmd_gradcheck, "finite-difference check of all gradients")
    p_grad.add_argument("--tolerance", type=float, default=1e-3, help="max relative error")
    add("show-config", cmd_show_config, "print the documented default configuration")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, AcceptanceFailure) as exc:
        print(f"property failure: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except (ShapeError, ContractError) as exc:
        print(f"internal contract violation: {exc}", file=sys.stderr)
        return EXIT_PROPERTY


if __name__ == "__main__":
    sys.exit(main(argv=None))
