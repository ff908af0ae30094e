"""Run directories, result tables and the comparison/ablation runners."""
import csv
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from ..models.config import (
    AugmentationPipeline, EvalConfig, InputFile, Paradigm, RepresentationKind, RunConfig,
    Strategy, set_dotted,
)
from ..models.results import LossLog
from ..models.skeleton import LabeledDataset
from .augmentation import composition_grid
from .evaluation import linear_evaluation
from .trainer import PretrainResult, pretrain

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
KEY_KINDS = (RepresentationKind.KEY_LAST, RepresentationKind.KEY, RepresentationKind.CAE_PLUS)


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def file_digest(path: PathLike, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk_size), b""):
            digest.update(block)
    return digest.hexdigest()


def with_inputs(config: RunConfig, **paths: Optional[PathLike]) -> RunConfig:
    """Pin the files a run reads into its config, so other inputs get another run directory"""
    inputs = dict(config.inputs)
    for flag, path in paths.items():
        if path is not None:
            inputs[flag] = InputFile(path=str(path), sha256=file_digest(path))
    return config.model_copy(update={"inputs": inputs})


def run_directory(root: PathLike, command: str, config: RunConfig) -> Path:
    """`<command>-<config hash>-s<seed>`; identical configs share a directory, different ones never do"""
    path = Path(root) / f"{command}-{config_hash(config)}-s{config.seed}"
    os.makedirs(path, exist_ok=True)
    with open(path / "config.json", "w") as f:
        json.dump(config.model_dump(mode="json"), f, indent=2, sort_keys=True)
    logger.info(f"Run directory: {path}")
    return path


def write_table(path: PathLike, rows: Sequence[Dict[str, Any]]) -> Path:
    path = Path(path)
    fields: List[str] = []
    for row in rows:
        fields.extend(k for k in row if k not in fields)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def write_summary(path: PathLike, command: str, config: RunConfig, results: Dict[str, Any]) -> Path:
    path = Path(path)
    summary = {
        "command": command,
        "config_hash": config_hash(config),
        "seeds": {
            "run": config.seed,
            "pretrain": config.pretrain.seed,
            "evaluation": config.evaluation.seed,
            "finetune": config.finetune.seed,
        },
        **results,
    }
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return path


def write_pretrain_artifacts(directory: PathLike, result: PretrainResult) -> None:
    directory = Path(directory)
    result.loss_log.write_csv(directory / "loss.csv")
    result.loss_log.write_epoch_csv(directory / "loss_epochs.csv")


def tail_loss_std(log: LossLog, epochs: int = 10) -> float:
    """Mean within-epoch loss std over the last `epochs` epochs"""
    summaries = log.epoch_summaries()[-epochs:]
    return float(np.mean([s.std for s in summaries])) if summaries else float("nan")


def final_loss(log: LossLog) -> float:
    """Mean loss of the last epoch"""
    summaries = log.epoch_summaries()
    return summaries[-1].mean if summaries else float("nan")


def compare_representations(pretrained, train: LabeledDataset, test: LabeledDataset, config: EvalConfig,
                            kinds: Optional[Iterable[RepresentationKind]] = None) -> List[Dict[str, Any]]:
    """One linear evaluation per representation kind, all on the same pretrained encoders"""
    rows = []
    for kind in kinds or list(RepresentationKind):
        kind = RepresentationKind(kind)
        if kind in KEY_KINDS and pretrained.encoder_k is None:
            logger.warning(f"Skipping representation '{kind.value}': model has no key encoder")
            continue
        metrics = linear_evaluation(pretrained, train, test, config.model_copy(update={"representation": kind}))
        rows.append({"representation": kind.value, **metrics.row()})
    return rows


def _value_label(value: Any) -> str:
    if isinstance(value, AugmentationPipeline):
        return value.label()
    if isinstance(value, dict) and "strategies" in value:
        return AugmentationPipeline.model_validate(value).label()
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def _normalize_value(parameter: str, value: Any) -> Any:
    if parameter.endswith("augmentations"):
        if isinstance(value, str):
            value = AugmentationPipeline.parse(value)
        if isinstance(value, AugmentationPipeline):
            return value.model_dump(mode="json")
    if hasattr(value, "value"):
        return value.value
    return value


def sweep(config: RunConfig, parameter: str, values: Iterable[Any], train: LabeledDataset,
          test: LabeledDataset) -> List[Dict[str, Any]]:
    """One pretraining + linear evaluation per value of a dotted config path"""
    base = config.model_dump(mode="json")
    rows = []
    for value in values:
        data = set_dotted(base, parameter, _normalize_value(parameter, value))
        if parameter == "seed":
            # the dump pins every section's seed; a seed sweep moves them together
            for section in ("pretrain", "evaluation", "finetune"):
                data = set_dotted(data, f"{section}.seed", value)
        arm = RunConfig.model_validate(data)
        logger.info(f"Sweep {parameter}={_value_label(value)}")
        result = pretrain(train, arm.pretrain)
        metrics = linear_evaluation(result, train, test, arm.evaluation)
        rows.append({
            parameter: _value_label(value),
            "final_loss": final_loss(result.loss_log),
            "tail_loss_std": tail_loss_std(result.loss_log),
            **metrics.row(),
        })
    return rows


def compare_paradigms(config: RunConfig, train: LabeledDataset, test: LabeledDataset,
                      paradigms: Optional[Iterable[Paradigm]] = None) -> List[Dict[str, Any]]:
    rows = sweep(config, "pretrain.contrastive.paradigm", list(paradigms or Paradigm), train, test)
    for row in rows:
        row["paradigm"] = row.pop("pretrain.contrastive.paradigm")
    return rows


def compare_compositions(config: RunConfig, strategies: Sequence[Strategy], train: LabeledDataset,
                         test: LabeledDataset) -> List[Dict[str, Any]]:
    """Every ordered pair of strategies as the pretraining pipeline"""
    rows = sweep(config, "pretrain.augmentations", composition_grid(list(strategies)), train, test)
    for row in rows:
        row["augmentations"] = row.pop("pretrain.augmentations")
    return rows
