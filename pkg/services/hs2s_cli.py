#!/usr/bin/env python3
"""
services/hs2s_cli.py

Command-line entry point of the motion pipeline.

Subcommands:
- prepare-data     ingest + normalization statistics + dataset cache
- train-ae         train the autoencoder (variant from the run config or --variant)
- fit-completion   fit an ADD or FN completer for one prefix index
- evaluate         short-term error table for one predictor
- predict          export predicted / ground-truth motion and distance curves
- generate         noise-injected motion from the FN completer
- interpolate      decode k + 1 codes between two actions
- classify         label probabilities by completing unlabeled codes
- ablate           completion vs matching and baseline ablation
- report           concatenate every table of the output directory

Exit status: 0 on success, 2 on usage errors, 1 on data/model errors with a
single `error: <Class>: <message>` line on stderr. All randomness derives
from the single --seed.

Usage:
    python services/hs2s_cli.py prepare-data --config runs/t60.yaml
    python services/hs2s_cli.py evaluate --predictor zero-velocity
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# Add project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

import numpy as np
import pandas as pd

from tools.checkpoint import CheckpointAux, load_checkpoint, save_checkpoint
from tools.completion import (
    build_pair_set,
    classify_windows,
    compute_vj,
    fit_fn,
    generate_noisy,
    interpolate,
    label_pair_set,
)
from tools.config import RunConfig, get_config
from tools.decorators import log_duration
from tools.errors import ArgumentError, ConfigError, DataError, HS2SError
from tools.evalbench import (
    AblationData,
    ClipSelection,
    model_predictor,
    read_clip_list,
    run_ablation,
    select_clips,
    zero_velocity_predictor,
    evaluate_short_term,
    export_long_term,
)
from tools.hs2sae import TrainConfig, encode_batch, train_autoencoder
from tools.logging_config import init_logging
from tools.motiondata import normalize
from tools.pipeline import (
    PreparedData,
    arch_for,
    completer_key,
    completer_path,
    eval_windows,
    load_prepared,
    model_path,
    prepare_data,
)
from tools.report_writer import JsonLinesWriter, concat_tables, write_frames, write_table_csv
from tools.utils import make_rng

logger = logging.getLogger(__name__)

# ─── Configuration ────────────────────────────────────────────────────────────
config = get_config()
HORIZONS_MS = tuple(config.get("evaluation.horizons_ms", [80, 160, 320, 400]))
ABLATION_WINDOWS = config.get("evaluation.ablation_windows", 256)
CLASSIFY_WINDOWS = config.get("classification.windows_per_action", 64)
GENERATE_COUNT = config.get("generation.count", 4)
SUMMARY_FILE = "summary.csv"

PREDICTORS = ("zero-velocity", "add", "fn", "h-seq2seq", "basic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so run_command owns the exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ─── Helpers ──────────────────────────────────────────────────────────────────
def _fn_train_config(run: RunConfig) -> TrainConfig:
    return TrainConfig(lr0=run.lr0, decay=0.0, batch=run.batch, epochs=run.fn_epochs, seed=run.seed,
                       schedule="step", drop_rate=run.fn_drop_rate, drop_every=run.fn_drop_every)


def _load_model(path: Path):
    if not path.exists():
        raise DataError(f"no model at '{path}'; run train-ae first")
    model, aux = load_checkpoint(path)
    if model is None:
        raise DataError(f"'{path}' holds no model parameters")
    return model, aux


def _load_completer(path: Path, key: str):
    if not path.exists():
        raise DataError(f"no completer at '{path}'; run fit-completion first")
    _, aux = load_checkpoint(path)
    return aux.completers[key]


def _uses_labels(aux: CheckpointAux) -> bool:
    return aux.meta.get("use_labels") == "True"


def check_classify_variant(aux: CheckpointAux, variant: str):
    """`masked` needs a model trained with label masking, `recovery` one trained without."""
    masked = aux.meta.get("label_masking") == "True"
    if masked != (variant == "masked"):
        raise ConfigError(f"variant {variant} does not match the model (label_masking={masked})")


def _selection(run: RunConfig, prepared: PreparedData) -> ClipSelection:
    if run.clip_list:
        return read_clip_list(run.clip_list)
    present = {seq.action for seq in prepared.test}
    actions = [a for a in prepared.vocab.names if a in present]
    return select_clips(prepared.test, actions, run.clips_per_action, run.clip_seed)


def _predictor(name: str, run: RunConfig, prepared: PreparedData, j: int, target: str, output_frames: int):
    if name == "zero-velocity":
        return zero_velocity_predictor(output_frames)
    variant = {"add": "hs2sae", "fn": "hs2sae", "basic": "basic_pad", "h-seq2seq": "h_seq2seq"}[name]
    path = model_path(run, variant)
    model, aux = _load_model(path)
    label_block = prepared.label_block if _uses_labels(aux) else None
    if name == "h-seq2seq":
        return model_predictor(model, model.arch, None, model.arch.seq2seq_j, "completion", label_block,
                               prepared.pose_channels)
    mode = "fn" if name == "fn" else "add"
    completer = _load_completer(completer_path(path, mode, target, j), completer_key(mode, target, j))
    return model_predictor(model, model.arch, completer, j, target, label_block, prepared.pose_channels)


def _pose_frames(frames: np.ndarray, prepared: PreparedData) -> np.ndarray:
    return normalize(frames[..., :prepared.pose_channels], prepared.stats, "inverse")


# ─── Subcommands ──────────────────────────────────────────────────────────────
@log_duration("prepare-data")
def cmd_prepare_data(run: RunConfig, args) -> int:
    prepared = prepare_data(run)
    print(f"prepared {len(prepared.train)} train / {len(prepared.test)} test sequences, "
          f"{prepared.pose_channels} channels")
    return 0


@log_duration("train-ae")
def cmd_train_ae(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    cfg = arch_for(run, prepared)
    label_dim = prepared.vocab.size if run.use_labels else 0
    tc = TrainConfig.from_run(run, label_dim=label_dim)
    params, history = train_autoencoder(prepared.split_frames("train", run.use_labels), cfg, tc)

    path = model_path(run)
    meta = {"use_labels": str(run.use_labels), "label_masking": str(tc.label_masking),
            "seed": str(run.seed), "best_epoch": str(history.best_epoch)}
    save_checkpoint(path, params, CheckpointAux(stats=prepared.stats, vocab=prepared.vocab, meta=meta))
    write_table_csv(history.epochs_frame(), path.with_name(f"{path.stem}_history.csv"), index=False)
    write_table_csv(history.steps_frame(), path.with_name(f"{path.stem}_steps.csv"), index=False)
    print(f"trained {params.count()} parameters -> {path}")
    return 0


@log_duration("fit-completion")
def cmd_fit_completion(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    path = Path(args.model) if args.model else model_path(run)
    model, aux = _load_model(path)
    cfg = model.arch
    windows = eval_windows(prepared.split_frames("train", _uses_labels(aux)), cfg.T, run.vj_samples, run.seed, "fit")
    pairs = build_pair_set(model, cfg, windows, args.j, args.target)
    cv = compute_vj(model, cfg, pairs, args.j, args.target)
    completer = cv
    if args.mode == "fn":
        completer = fit_fn(pairs, _fn_train_config(run))
        completer.sigma = cv.sigma

    key = completer_key(args.mode, args.target, args.j)
    out = completer_path(path, args.mode, args.target, args.j)
    save_checkpoint(out, None, CheckpointAux(completers={key: completer},
                                             meta={"model": path.name, "samples": str(len(pairs))}))
    print(f"{key}: mean sigma {cv.sigma.mean():.6f} -> {out}")
    return 0


@log_duration("evaluate")
def cmd_evaluate(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    j = args.j or run.seq2seq_j
    predictor = _predictor(args.predictor, run, prepared, j, args.target, run.output_frames)
    table, records = evaluate_short_term(predictor, prepared.test_dataset(), _selection(run, prepared),
                                         run.input_frames, run.output_frames, prepared.metric(run),
                                         HORIZONS_MS, prepared.fps)
    stem = f"eval_{args.predictor}"
    out = table.to_csv(Path(run.output_dir) / f"{stem}.csv")
    with JsonLinesWriter(Path(run.output_dir) / f"{stem}_clips.jsonl") as writer:
        writer.write_many(records)
    print(table.frame.to_string(float_format=lambda v: f"{v:.3f}"))
    logger.info(f"Wrote {out}", extra={"predictor": args.predictor, "clips": len(records)})
    return 0


@log_duration("predict")
def cmd_predict(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    j = args.j or 1
    predictor = _predictor(args.predictor, run, prepared, j, args.target, args.output_frames)
    out_dir = Path(run.output_dir) / f"long_term_{args.predictor}"
    written = export_long_term(predictor, prepared.test_dataset(), _selection(run, prepared), prepared.stats,
                               prepared.metric(run), out_dir, args.input_frames, args.output_frames)
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


@log_duration("generate")
def cmd_generate(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    path = model_path(run, "hs2sae")
    model, aux = _load_model(path)
    cfg = model.arch
    j = args.j or run.seq2seq_j
    fn = _load_completer(completer_path(path, "fn", "completion", j), completer_key("fn", "completion", j))
    windows = eval_windows(prepared.split_frames("test", _uses_labels(aux)), cfg.T, args.count, run.seed, "generate")

    out_dir = Path(run.output_dir) / "generate"
    for i, window in enumerate(windows):
        rng = make_rng(run.seed, "generate", str(i))
        motion = generate_noisy(model, cfg, fn, window[:j * cfg.tau], args.noise_scale, rng)
        write_frames(_pose_frames(motion, prepared), out_dir / f"generated_{i}.txt")
        write_frames(_pose_frames(window, prepared), out_dir / f"source_{i}.txt")
    print(f"wrote {len(windows)} generated sequences to {out_dir}")
    return 0


@log_duration("interpolate")
def cmd_interpolate(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    model, aux = _load_model(model_path(run, "hs2sae"))
    cfg = model.arch
    names = prepared.vocab.names
    action_a = args.from_action or names[0]
    action_b = args.to_action or ("sitting" if "sitting" in names else names[-1])

    codes = []
    for action in (action_a, action_b):
        frames = [seq.frames for seq in prepared.test if seq.action == action]
        if not frames:
            raise DataError(f"no test sequence for action '{action}'")
        window = eval_windows(frames, cfg.T, 1, run.seed, f"interpolate:{action}")
        if _uses_labels(aux):
            window = np.concatenate([window, np.broadcast_to(prepared.label_block(action),
                                                             window.shape[:-1] + (prepared.vocab.size,))], axis=-1)
        codes.append(encode_batch(model, cfg, window)[0])

    motions = interpolate(model, cfg, codes[0], codes[1], args.steps)
    out_dir = Path(run.output_dir) / "interpolate"
    for i, motion in enumerate(motions):
        write_frames(_pose_frames(motion, prepared), out_dir / f"interp_{i}.txt")
    print(f"wrote {len(motions)} motion files to {out_dir}")
    return 0


@log_duration("classify")
def cmd_classify(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    model, aux = _load_model(Path(args.model) if args.model else model_path(run, "hs2sae"))
    if not _uses_labels(aux):
        raise ArgumentError("classification needs a model trained with label channels (use_labels)")
    check_classify_variant(aux, args.variant)
    cfg, vocab = model.arch, prepared.vocab

    train = eval_windows(prepared.split_frames("train", True), cfg.T, run.vj_samples, run.seed, "classify")
    pairs = label_pair_set(model, cfg, train, vocab.size)
    completer = compute_vj(model, cfg, pairs, cfg.blocks, "completion")
    if args.mode == "fn":
        completer = fit_fn(pairs, _fn_train_config(run))

    rows: Dict[str, List[float]] = {}
    for label, action in enumerate(vocab.names):
        frames = [f for f, seq in zip(prepared.split_frames("test", True), prepared.test) if seq.action == action]
        if not frames:
            continue
        windows = eval_windows(frames, cfg.T, args.windows, run.seed, f"classify:{action}")
        probs = classify_windows(model, cfg, completer, windows, vocab.size)
        rows[action] = [float(probs[:, label].mean()), float((probs.argmax(axis=1) == label).mean())]

    df = pd.DataFrame.from_dict(rows, orient="index", columns=["mean_true_probability", "accuracy"])
    df.loc["Average"] = df.mean(axis=0)
    df.index.name = "action"
    out = write_table_csv(df, Path(run.output_dir) / f"classify_{args.variant}_{args.mode}.csv")
    print(df.to_string(float_format=lambda v: f"{v:.3f}"))
    logger.info(f"Wrote {out}")
    return 0


@log_duration("ablate")
def cmd_ablate(run: RunConfig, args) -> int:
    prepared = load_prepared(run)
    pose_run = RunConfig.from_mapping({"use_labels": False}, run)
    cfg = arch_for(pose_run, prepared, "hs2sae")
    data = AblationData(prepared.split_frames("train"), prepared.split_frames("test"),
                        prepared.metric(run), prepared.fps)
    report = run_ablation(data, cfg, TrainConfig.from_run(pose_run), run.seq2seq_j, run.vj_samples,
                          ABLATION_WINDOWS, _fn_train_config(run), HORIZONS_MS)
    out = write_table_csv(report.to_frame(), Path(run.output_dir) / "ablation.csv")
    with JsonLinesWriter(Path(run.output_dir) / "ablation_windows.jsonl") as writer:
        writer.write_many(report.records)
    print(report.to_frame().to_string(float_format=lambda v: f"{v:.3f}"))
    logger.info(f"Wrote {out}", extra={"skipped": sorted(report.skipped)})
    return 0


@log_duration("report")
def cmd_report(run: RunConfig, args) -> int:
    summary = concat_tables(run.output_dir, exclude=(SUMMARY_FILE,))
    out = write_table_csv(summary, Path(run.output_dir) / SUMMARY_FILE, index=False)
    print(f"{len(summary)} rows -> {out}")
    return 0


# ─── Argument parsing ─────────────────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat YAML run file layered over config.yaml")
    common.add_argument("--seed", type=int, help="seed of every random stream")
    common.add_argument("--output-dir", help="run directory for artifacts")
    common.add_argument("--data-dir", help="dataset root (default: HS2S_DATA_DIR)")
    common.add_argument("--log-level", default=None, help="logging level (default from config.yaml)")

    parser = _Parser(prog="hs2s", description="Hierarchical sequence autoencoder motion pipeline")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("prepare-data", parents=[common], help="ingest and normalize a dataset")
    p.add_argument("--source", dest="data_source", choices=["h36m", "synthetic"])
    p.set_defaults(handler=cmd_prepare_data)

    p = sub.add_parser("train-ae", parents=[common], help="train the autoencoder")
    p.add_argument("--variant", choices=["hs2sae", "basic_pad", "h_seq2seq"])
    p.add_argument("--seq2seq-target", choices=["full", "suffix"])
    p.add_argument("--epochs", type=int)
    p.set_defaults(handler=cmd_train_ae)

    p = sub.add_parser("fit-completion", parents=[common], help="fit an ADD or FN completer")
    p.add_argument("--mode", choices=["add", "fn"], default="add")
    p.add_argument("--target", choices=["completion", "matching"], default="completion")
    p.add_argument("--j", type=int, required=True, help="prefix index (prefix = j * tau frames)")
    p.add_argument("--model", help="model file (default: the run's model for its variant)")
    p.add_argument("--variant", choices=["hs2sae", "basic_pad"])
    p.set_defaults(handler=cmd_fit_completion)

    p = sub.add_parser("evaluate", parents=[common], help="short-term error table")
    p.add_argument("--predictor", choices=PREDICTORS, required=True)
    p.add_argument("--j", type=int)
    p.add_argument("--target", choices=["completion", "matching"], default="completion")
    p.add_argument("--clip-list")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="export long-horizon predictions")
    p.add_argument("--predictor", choices=PREDICTORS, required=True)
    p.add_argument("--j", type=int)
    p.add_argument("--target", choices=["completion", "matching"], default="completion")
    p.add_argument("--input-frames", type=int, default=10)
    p.add_argument("--output-frames", type=int, default=50)
    p.add_argument("--clip-list")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("generate", parents=[common], help="noise-injected generation")
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--j", type=int)
    p.add_argument("--count", type=int, default=GENERATE_COUNT)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("interpolate", parents=[common], help="latent interpolation between two actions")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--from-action")
    p.add_argument("--to-action")
    p.set_defaults(handler=cmd_interpolate)

    p = sub.add_parser("classify", parents=[common], help="classification by label completion")
    p.add_argument("--variant", choices=["masked", "recovery"], required=True)
    p.add_argument("--mode", choices=["add", "fn"], default="add")
    p.add_argument("--windows", type=int, default=CLASSIFY_WINDOWS)
    p.add_argument("--model")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("ablate", parents=[common], help="completion/matching ablation")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("report", parents=[common], help="concatenate all tables")
    p.set_defaults(handler=cmd_report)
    return parser


def _overrides(args) -> Dict[str, object]:
    keys = {
        "seed": "seed", "output_dir": "output_dir", "data_dir": "data_dir", "data_source": "data_source",
        "variant": "variant", "seq2seq_target": "seq2seq_target", "epochs": "epochs",
        "clip_list": "clip_list", "noise_scale": "noise_scale",
    }
    return {field: getattr(args, attr) for attr, field in keys.items() if getattr(args, attr, None) is not None}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit status."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: UsageError: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if not getattr(args, "handler", None):
        parser.print_usage(sys.stderr)
        return 2

    init_logging(args.log_level or config.get("logging.level", "INFO"))
    try:
        run = RunConfig.from_sources(config, args.config, _overrides(args))
        if getattr(args, "noise_scale", None) is None and args.command == "generate":
            args.noise_scale = run.noise_scale
        return args.handler(run, args)
    except HS2SError as e:
        logger.error(f"{args.command} failed", extra={"error": str(e)})
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        logger.error(f"{args.command} failed", extra={"error": str(e)})
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
