import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import torch

from ..errors import ConfigError, DivergenceError
from ..models.config import Paradigm, PretrainConfig
from ..models.results import LossLog, LossRecord
from ..models.skeleton import DataShape, LabeledDataset
from .augmentation import augment_pair
from .checkpoint_service import TrainerProgress, restore, save_checkpoint
from .contrastive import (
    ContrastiveLearner, KeyQueue, MemoryBank, build_dictionary, build_learner,
    end_to_end_step, memory_bank_step, queue_step,
)
from .encoder import compute_gradients, momentum_update, sequences_to_tensor
from .optimizer import build_sgd, lr_at, sgd_step
from .rng import AUGMENT, BANK, INIT, QUEUE, SHUFFLE, RngStream

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class PretrainResult:
    learner: ContrastiveLearner
    loss_log: LossLog
    config: PretrainConfig
    data_shape: DataShape
    dictionary: Optional[Union[KeyQueue, MemoryBank]]
    progress: TrainerProgress
    checkpoints: List[Path] = field(default_factory=list)

    @property
    def encoder_q(self):
        return self.learner.encoder_q

    @property
    def encoder_k(self):
        return self.learner.encoder_k


class Pretrainer:
    """Runs the unsupervised contrastive loop one mini-batch at a time.

    Every random draw comes from a stream keyed by (purpose, epoch, batch, position),
    so a run resumed from a checkpoint replays the same trajectory.
    """

    def __init__(self, dataset: LabeledDataset, config: PretrainConfig,
                 checkpoint_dir: Optional[PathLike] = None, resume_from: Optional[PathLike] = None):
        if len(dataset) < config.batch_size:
            raise ConfigError(f"dataset of {len(dataset)} sequences is smaller than batch_size {config.batch_size}")
        self.dataset = dataset
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.checkpoints: List[Path] = []

        run = None
        if resume_from is not None:
            run = restore(resume_from)
            if run.config != config:
                logger.warning(f"Resuming with the configuration stored in {resume_from}")
            if run.data_shape != dataset.shape:
                raise ConfigError(f"checkpoint was trained on shape {run.data_shape}, dataset has {dataset.shape}")
            self.config = run.config
            self.learner = run.learner
            self.dictionary = run.dictionary
            self.progress = run.progress
            self.loss_log = run.loss_log
        else:
            self.config = config
            root = RngStream(config.seed)
            self.learner = build_learner(dataset.shape.frame_dim, config, root.split(INIT))
            purpose = BANK if config.contrastive.paradigm == Paradigm.MEMORY_BANK else QUEUE
            self.dictionary = build_dictionary(self.learner, config.contrastive, len(dataset), root.split(purpose))
            self.progress = TrainerProgress()
            self.loss_log = LossLog()

        self.root = RngStream(self.config.seed)
        self.named_params = self.learner.trainable_parameters()
        self.optimizer = build_sgd(self.named_params, self.config.lr, self.config.sgd_momentum,
                                   self.config.weight_decay)
        if run is not None and run.optimizer_state is not None:
            self.optimizer.load_state_dict(run.optimizer_state)
        self.steps_per_epoch = len(dataset) // self.config.batch_size  # drop last

    @property
    def paradigm(self) -> Paradigm:
        return self.config.contrastive.paradigm

    def _views(self, indices: List[int], epoch: int, batch: int):
        queries, keys = [], []
        for position, index in enumerate(indices):
            rng = self.root.split(AUGMENT, epoch, batch, position)
            query, key = augment_pair(self.dataset.sequences[index], self.config.augmentations, rng)
            queries.append(query)
            keys.append(key)
        return sequences_to_tensor(queries), sequences_to_tensor(keys)

    def step(self, epoch: int, batch: int, indices: List[int]) -> LossRecord:
        """One optimizer step; the serialized critical section of the loop"""
        contrastive = self.config.contrastive
        lr = lr_at(epoch, self.config)
        step = self.progress.global_step
        x_query, x_key = self._views(indices, epoch, batch)
        try:
            if self.paradigm == Paradigm.QUEUE:
                out = queue_step(self.learner, x_query, x_key, self.dictionary, contrastive)
            elif self.paradigm == Paradigm.END_TO_END:
                out = end_to_end_step(self.learner, x_query, x_key, contrastive)
            else:
                out = memory_bank_step(self.learner, x_query, indices, self.dictionary, contrastive,
                                       self.root.split(BANK, epoch, batch))
            if not torch.isfinite(out.loss):
                raise DivergenceError("non-finite contrastive loss")
            grads = compute_gradients(out.loss, self.named_params)
            sgd_step(self.optimizer, self.named_params, grads, lr, self.config.clip_grad_norm)
        except DivergenceError as e:
            logger.error(f"Pretraining diverged at step {step}: {e}")
            raise DivergenceError(str(e), step=step) from e

        if self.paradigm == Paradigm.QUEUE:
            momentum_update(self.learner.encoder_k, self.learner.encoder_q, contrastive.momentum)
            momentum_update(self.learner.head_k, self.learner.head_q, contrastive.momentum)
            self.dictionary.enqueue(out.k)
        elif self.paradigm == Paradigm.MEMORY_BANK:
            self.dictionary.update(indices, out.q)

        warmup = self.paradigm == Paradigm.QUEUE and out.negatives < contrastive.queue_size
        if warmup and step == 0:
            logger.warning(f"Queue warm-up: training with {out.negatives} of {contrastive.queue_size} negatives")
        record = LossRecord(epoch=epoch, step=step, loss=float(out.loss), lr=lr,
                            queue_fill=out.negatives, warmup=warmup)
        self.loss_log.append(record)
        self.progress.global_step += 1
        return record

    def checkpoint(self, name: str) -> Optional[Path]:
        if self.checkpoint_dir is None:
            return None
        path = save_checkpoint(
            self.checkpoint_dir / name, self.learner, self.config, self.dataset.shape,
            optimizer=self.optimizer, dictionary=self.dictionary, progress=self.progress, loss_log=self.loss_log,
        )
        self.checkpoints.append(path)
        return path

    def run(self, stop_at_step: Optional[int] = None) -> PretrainResult:
        """Train until the configured epoch count (or `stop_at_step` steps) is reached"""
        n = self.config.batch_size
        every = self.config.checkpoint_every
        logger.info(
            f"Pretraining {self.paradigm.value}: {len(self.dataset)} sequences, {self.steps_per_epoch} steps/epoch, "
            f"epochs {self.progress.epoch}..{self.config.epochs - 1}, "
            f"augmentations {self.config.augmentations.label()}"
        )
        while self.progress.epoch < self.config.epochs:
            epoch = self.progress.epoch
            order = self.root.split(SHUFFLE, epoch).permutation(len(self.dataset))
            while self.progress.batch < self.steps_per_epoch:
                if stop_at_step is not None and self.progress.global_step >= stop_at_step:
                    self.checkpoint("last.pt")
                    return self._result()
                batch = self.progress.batch
                indices = order[batch * n:(batch + 1) * n].tolist()
                self.step(epoch, batch, indices)
                self.progress.batch += 1
                if every and self.progress.global_step % every == 0:
                    self.checkpoint(f"step-{self.progress.global_step:08d}.pt")

            summary = self.loss_log.epoch_summaries()[-1]
            logger.info(
                f"Epoch {epoch + 1}/{self.config.epochs}: loss {summary.mean:.4f} +/- {summary.std:.4f} "
                f"lr {lr_at(epoch, self.config):g}"
            )
            self.progress.epoch += 1
            self.progress.batch = 0
            self.checkpoint("last.pt")
        return self._result()

    def _result(self) -> PretrainResult:
        return PretrainResult(
            learner=self.learner, loss_log=self.loss_log, config=self.config, data_shape=self.dataset.shape,
            dictionary=self.dictionary, progress=self.progress, checkpoints=list(self.checkpoints),
        )


def pretrain(dataset: LabeledDataset, config: PretrainConfig, checkpoint_dir: Optional[PathLike] = None,
             resume_from: Optional[PathLike] = None, stop_at_step: Optional[int] = None) -> PretrainResult:
    return Pretrainer(dataset, config, checkpoint_dir, resume_from).run(stop_at_step)
