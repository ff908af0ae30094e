#!/usr/bin/env python3
"""
AS-CAL command line: synthetic data, contrastive pretraining, evaluation,
augmentation previews and ablation sweeps.

Configuration precedence: model defaults < preset < --config file < flags.
"""
import argparse
import json
import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch
from dotenv import load_dotenv
from pydantic import ValidationError

from app.errors import CheckpointError, ConfigError, DatasetError, DivergenceError
from app.models.config import AugmentationPipeline, RunConfig, deep_merge, set_dotted
from app.models.skeleton import LabeledDataset, SyntheticSpec
from app.services.augmentation import augment_pair
from app.services.checkpoint_service import restore
from app.services.dataset_io import load_dataset, save_dataset
from app.services.evaluation import linear_evaluation, semi_supervised
from app.services.experiments import (
    compare_compositions, compare_paradigms, compare_representations, final_loss, run_directory,
    sweep, with_inputs, write_pretrain_artifacts, write_summary, write_table,
)
from app.services.rng import AUGMENT, RngStream
from app.services.skeleton_service import generate_synthetic, normalize_dataset
from app.services.trainer import pretrain

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as f:
        if path.suffix == ".json":
            return json.load(f)
        return tomllib.load(f)


def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config paths set explicitly on the command line"""
    overrides: Dict[str, Any] = {}
    if getattr(args, "preset", None):
        overrides["preset"] = args.preset
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        if args.command == "synth":
            overrides["synthetic.seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "truncate", False):
        overrides["truncate"] = True
    if getattr(args, "strategy", None):
        overrides["pretrain.augmentations"] = AugmentationPipeline.parse(args.strategy).model_dump(mode="json")
    if getattr(args, "paradigm", None):
        overrides["pretrain.contrastive.paradigm"] = args.paradigm
    if getattr(args, "representation", None):
        overrides["evaluation.representation"] = args.representation
    if getattr(args, "fraction", None) is not None:
        overrides["finetune.fraction"] = args.fraction
    if getattr(args, "epochs", None) is not None:
        overrides["pretrain.epochs"] = args.epochs
    for name in ("classes", "per_class", "noise"):
        value = getattr(args, name, None)
        if value is not None:
            field = {"classes": "class_count", "per_class": "sequences_per_class", "noise": "noise_std"}[name]
            overrides[f"synthetic.{field}"] = value
    return overrides


def build_config(args: argparse.Namespace) -> RunConfig:
    data: Dict[str, Any] = {}
    if os.getenv("ASCAL_WORKERS"):
        data["workers"] = int(os.getenv("ASCAL_WORKERS"))
    data = deep_merge(data, read_config_file(args.config))
    for path, value in flag_overrides(args).items():
        data = set_dotted(data, path, value)
    synthetic = data.get("synthetic")
    if isinstance(synthetic, dict) and "class_count" in synthetic and isinstance(synthetic.get("shape"), dict):
        # the generated shape always declares class_count classes
        synthetic["shape"] = {**synthetic["shape"], "classes": synthetic["class_count"]}
    return RunConfig.model_validate(data)


def _runs_root(args: argparse.Namespace) -> Path:
    return Path(args.out or os.getenv("ASCAL_RUNS_DIR", "runs"))


def _load(path: Optional[str], config: RunConfig, flag: str) -> LabeledDataset:
    if not path:
        raise ConfigError(f"{flag} is required")
    return normalize_dataset(load_dataset(path, truncate=config.truncate))


def cmd_synth(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.out:
        raise ConfigError("--out is required")
    spec = config.synthetic or SyntheticSpec(seed=config.seed)
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    counts = dataset.class_counts()
    print(f"Wrote {len(dataset)} sequences to {args.out}")
    for cls, count in enumerate(counts):
        print(f"  class {cls}: {count}")
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    dataset = _load(args.data, config, "--data")
    config = with_inputs(config, data=args.data, resume=args.resume)
    directory = run_directory(_runs_root(args), "pretrain", config)
    result = pretrain(dataset, config.pretrain, checkpoint_dir=directory / "checkpoints", resume_from=args.resume)
    write_pretrain_artifacts(directory, result)
    write_summary(directory / "summary.json", "pretrain", config, {
        "steps": result.progress.global_step,
        "final_loss": final_loss(result.loss_log),
        "checkpoint": str(directory / "checkpoints" / "last.pt"),
    })
    print(f"Pretraining finished after {result.progress.global_step} steps: {directory}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    train = _load(args.data, config, "--data")
    test = _load(args.test_data, config, "--test-data") if args.test_data else train
    config = with_inputs(config, data=args.data, test_data=args.test_data, checkpoint=args.checkpoint)
    directory = run_directory(_runs_root(args), f"eval-{args.mode}", config)

    if args.mode == "paradigms":
        rows = compare_paradigms(config, train, test)
        write_table(directory / "metrics.csv", rows)
        write_summary(directory / "summary.json", "eval", config, {"mode": args.mode, "rows": rows})
        print(f"Paradigm comparison written to {directory}")
        return EXIT_OK

    if not args.checkpoint:
        raise ConfigError("--checkpoint is required for this evaluation mode")
    pretrained = restore(args.checkpoint).learner
    if args.mode == "representations":
        rows = compare_representations(pretrained, train, test, config.evaluation)
    elif args.mode == "semi":
        metrics = semi_supervised(pretrained, train, test, config.finetune.fraction,
                                  config.evaluation, config.finetune)
        rows = [{"fraction": config.finetune.fraction, **metrics.row()}]
    else:
        metrics = linear_evaluation(pretrained, train, test, config.evaluation)
        rows = [{"representation": config.evaluation.representation.value, **metrics.row()}]
    write_table(directory / "metrics.csv", rows)
    write_summary(directory / "summary.json", "eval", config,
                  {"mode": args.mode, "checkpoint": str(args.checkpoint), "rows": rows})
    for row in rows:
        print(", ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_augment(args: argparse.Namespace, config: RunConfig) -> int:
    if not args.out or not args.data:
        raise ConfigError("--data and --out are required")
    # previews transform the file as stored, without centering
    dataset = load_dataset(args.data, truncate=config.truncate)
    pipeline = config.pretrain.augmentations
    root = RngStream(config.seed)
    queries, keys = [], []
    out = Path(args.out)
    key_out = out.with_name(f"{out.stem}.key{out.suffix}")
    os.makedirs(out.parent, exist_ok=True)
    with open(out.parent / "augment_params.jsonl", "w") as log_file:
        for index, seq in enumerate(dataset.sequences):
            logs = ([], [])
            query, key = augment_pair(seq, pipeline, root.split(AUGMENT, index), logs)
            queries.append(query)
            keys.append(key)
            for view, params in zip(("query", "key"), logs):
                log_file.write(json.dumps({"index": index, "view": view, "params": params}) + "\n")
    for views, path in ((queries, out), (keys, key_out)):
        save_dataset(LabeledDataset(sequences=views, labels=list(dataset.labels), shape=dataset.shape), path)
    print(f"Augmented {len(queries)} sequences with [{pipeline.label()}] -> {out} (query), {key_out} (key)")
    return EXIT_OK


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    train = _load(args.data, config, "--data")
    test = _load(args.test_data, config, "--test-data") if args.test_data else train
    config = with_inputs(config, data=args.data, test_data=args.test_data)
    directory = run_directory(_runs_root(args), "sweep", config)
    if args.grid:
        pipeline = AugmentationPipeline.parse(args.grid)
        rows = compare_compositions(config, pipeline.strategies, train, test)
    else:
        if not args.parameter or not args.values:
            raise ConfigError("sweep needs --parameter and --values (or --grid)")
        rows = sweep(config, args.parameter, [_parse_value(v) for v in args.values], train, test)
    write_table(directory / "metrics.csv", rows)
    write_summary(directory / "summary.json", "sweep", config,
                  {"parameter": args.parameter or "pretrain.augmentations", "rows": rows})
    print(f"Sweep of {len(rows)} arms written to {directory}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "augment": cmd_augment,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ascal", description="Contrastive skeleton action representation learning")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run configuration")
    common.add_argument("--preset", help="Dataset preset (ntu60, ntu120, sbu, uwa3d, synthetic)")
    common.add_argument("--seed", type=int, help="Run seed")
    common.add_argument("--data", help="Training dataset (JSON Lines)")
    common.add_argument("--out", help="Output file (synth, augment) or runs directory")
    common.add_argument("--workers", type=int, help="Cap on intra-op threads")
    common.add_argument("--truncate", action="store_true", help="Subsample sequences longer than the header T")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    synth.add_argument("--classes", type=int, help="Number of classes")
    synth.add_argument("--per-class", dest="per_class", type=int, help="Sequences per class")
    synth.add_argument("--noise", type=float, help="Noise standard deviation")

    train = sub.add_parser("pretrain", parents=[common], help="Unsupervised contrastive pretraining")
    train.add_argument("--strategy", help="Comma-separated augmentation pipeline")
    train.add_argument("--paradigm", choices=["queue", "end_to_end", "memory_bank"])
    train.add_argument("--epochs", type=int)
    train.add_argument("--resume", help="Checkpoint to resume from")

    evaluate = sub.add_parser("eval", parents=[common], help="Evaluate learned representations")
    evaluate.add_argument("--checkpoint", help="Pretraining checkpoint")
    evaluate.add_argument("--test-data", dest="test_data", help="Test dataset (JSON Lines)")
    evaluate.add_argument("--mode", choices=["linear", "semi", "representations", "paradigms"], default="linear")
    evaluate.add_argument("--representation", choices=["h_q", "h_k", "k", "cae", "cae_plus"])
    evaluate.add_argument("--fraction", type=float, help="Labeled fraction for --mode semi")
    evaluate.add_argument("--strategy", help="Pretraining pipeline for --mode paradigms")
    evaluate.add_argument("--epochs", type=int, help="Pretraining epochs for --mode paradigms")

    augment = sub.add_parser("augment", parents=[common], help="Preview augmented sequences")
    augment.add_argument("--strategy", help="Comma-separated augmentation pipeline ('identity' for none)")

    sweeper = sub.add_parser("sweep", parents=[common], help="Pretrain + linear evaluation per config value")
    sweeper.add_argument("--test-data", dest="test_data", help="Test dataset (JSON Lines)")
    sweeper.add_argument("--parameter", help="Dotted config path, e.g. pretrain.contrastive.momentum")
    sweeper.add_argument("--values", nargs="+", help="Values (JSON literals or strings)")
    sweeper.add_argument("--grid", help="Strategies whose ordered pairs form the pipelines to compare")
    sweeper.add_argument("--epochs", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else os.getenv("LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = build_config(args)
        torch.set_num_threads(config.workers)
        return COMMANDS[args.command](args, config)
    except DivergenceError as e:
        logger.error(f"Training diverged: {e}")
        return EXIT_DIVERGENCE
    except (ValidationError, ConfigError, ValueError) as e:
        logger.error(f"Invalid configuration or arguments: {e}")
        return EXIT_VALIDATION
    except (OSError, DatasetError, CheckpointError) as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
