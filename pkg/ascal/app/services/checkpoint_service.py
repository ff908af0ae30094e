import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch
from pydantic import ValidationError

from ..errors import CheckpointError
from ..models.config import Paradigm, PretrainConfig
from ..models.results import LossLog
from ..models.skeleton import DataShape
from .contrastive import ContrastiveLearner, KeyQueue, MemoryBank, build_dictionary, build_learner
from .encoder import GATE_ORDER
from .rng import RngStream

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PathLike = Union[str, Path]


@dataclass
class TrainerProgress:
    """Where the loop stands: the next (epoch, batch) to run and steps taken so far"""
    epoch: int = 0
    batch: int = 0
    global_step: int = 0


@dataclass
class RestoredRun:
    learner: ContrastiveLearner
    config: PretrainConfig
    data_shape: DataShape
    dictionary: Optional[Union[KeyQueue, MemoryBank]]
    progress: TrainerProgress
    loss_log: LossLog
    optimizer_state: Optional[Dict[str, Any]]


def save_checkpoint(path: PathLike, learner: ContrastiveLearner, config: PretrainConfig, data_shape: DataShape,
                    optimizer: Optional[torch.optim.Optimizer] = None, dictionary=None,
                    progress: Optional[TrainerProgress] = None, loss_log: Optional[LossLog] = None) -> Path:
    """Write the full training state; the file is replaced atomically"""
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    progress = progress or TrainerProgress()
    payload = {
        "format_version": FORMAT_VERSION,
        "gate_order": GATE_ORDER,
        "dtype": "float64",
        "config": config.model_dump(mode="json"),
        "data_shape": data_shape.model_dump(mode="json"),
        "learner": learner.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "dictionary": dictionary.state_dict() if dictionary is not None else None,
        "progress": {"epoch": progress.epoch, "batch": progress.batch, "global_step": progress.global_step},
        "loss_log": [r.model_dump() for r in (loss_log.records if loss_log else [])],
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        raise
    logger.info(f"Saved checkpoint {path} (step {progress.global_step})")
    return path


def load_checkpoint(path: PathLike) -> Dict[str, Any]:
    """Read and validate the raw checkpoint payload"""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict):
        raise CheckpointError(f"{path} is not a checkpoint")
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    if payload.get("gate_order") != GATE_ORDER:
        raise CheckpointError(
            f"checkpoint gate order {payload.get('gate_order')!r} does not match this build's {GATE_ORDER!r}"
        )
    return payload


def restore(path: PathLike) -> RestoredRun:
    """Rebuild learner, dictionary and trainer state from a checkpoint file"""
    payload = load_checkpoint(path)
    try:
        config = PretrainConfig.model_validate(payload["config"])
        data_shape = DataShape.model_validate(payload["data_shape"])
        loss_log = LossLog.model_validate({"records": payload["loss_log"]})
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"checkpoint metadata is invalid: {e}")

    # structure only; every tensor is overwritten from the payload below
    learner = build_learner(data_shape.frame_dim, config, RngStream(config.seed))
    try:
        learner.load_state_dict(payload["learner"])
    except RuntimeError as e:
        raise CheckpointError(f"parameter shapes do not match the stored config: {e}")

    dictionary = None
    if payload["dictionary"] is not None:
        if config.contrastive.paradigm == Paradigm.MEMORY_BANK:
            slots = payload["dictionary"]["slots"]
            dictionary = MemoryBank(slots.clone(), float(payload["dictionary"]["momentum"]))
        else:
            dictionary = build_dictionary(learner, config.contrastive, 0, RngStream(config.seed))
            dictionary.load_state_dict(payload["dictionary"])

    progress = TrainerProgress(**payload["progress"])
    logger.info(f"Restored checkpoint {path} at step {progress.global_step}")
    return RestoredRun(
        learner=learner, config=config, data_shape=data_shape, dictionary=dictionary,
        progress=progress, loss_log=loss_log, optimizer_state=payload["optimizer"],
    )
