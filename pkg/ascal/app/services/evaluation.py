import copy
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.metrics import confusion_matrix

from ..errors import DivergenceError, ProtocolError
from ..models.config import EvalConfig, FinetuneConfig, RepresentationKind
from ..models.results import Metrics
from ..models.skeleton import LabeledDataset, SkeletonSequence
from .encoder import (
    DTYPE, cae, cae_plus, compute_gradients, freeze, last_hidden, parameter_checksum,
    sequences_to_tensor, tap,
)
from .optimizer import build_sgd, lr_at, sgd_step
from .rng import EVAL, FINETUNE, RngStream
from .skeleton_service import balanced_subset

logger = logging.getLogger(__name__)

EXTRACT_CHUNK = 256


def _chunks(seqs: Sequence[SkeletonSequence]):
    for start in range(0, len(seqs), EXTRACT_CHUNK):
        yield sequences_to_tensor(seqs[start:start + EXTRACT_CHUNK])


def extract(kind, encoder_q: nn.Module, encoder_k: Optional[nn.Module],
            seqs: Sequence[SkeletonSequence]) -> torch.Tensor:
    """Features of the original (un-augmented) sequences; [N][d]"""
    kind = RepresentationKind(kind)
    if isinstance(seqs, SkeletonSequence):
        seqs = [seqs]
    needs_key = kind in (RepresentationKind.KEY_LAST, RepresentationKind.KEY, RepresentationKind.CAE_PLUS)
    if needs_key and encoder_k is None:
        raise ProtocolError(f"representation '{kind.value}' needs a key encoder; this model has none")

    parts = []
    with torch.no_grad():
        for x in _chunks(list(seqs)):
            if kind == RepresentationKind.QUERY_LAST:
                parts.append(last_hidden(encoder_q(x)))
            elif kind == RepresentationKind.KEY_LAST:
                parts.append(last_hidden(encoder_k(x)))
            elif kind == RepresentationKind.KEY:
                parts.append(tap(encoder_k(x)))
            elif kind == RepresentationKind.CAE:
                parts.append(cae(encoder_q, x))
            else:
                parts.append(cae_plus(encoder_q, encoder_k, x))
    return torch.cat(parts)


def init_classifier(in_dim: int, classes: int, seed: int) -> nn.Linear:
    classifier = nn.Linear(in_dim, classes, dtype=DTYPE)
    generator = RngStream(seed).split(EVAL, 0).torch_generator()
    bound = 1.0 / math.sqrt(in_dim)
    with torch.no_grad():
        classifier.weight.uniform_(-bound, bound, generator=generator)
        classifier.bias.zero_()
    return classifier


def _batches(size: int, batch_size: Optional[int], rng: RngStream) -> List[np.ndarray]:
    if batch_size is None or batch_size >= size:
        return [np.arange(size)]
    order = rng.permutation(size)
    return [order[i:i + batch_size] for i in range(0, size, batch_size)]


def train_linear(features: torch.Tensor, labels, config: EvalConfig, seed: Optional[int] = None,
                 classes: Optional[int] = None) -> nn.Linear:
    """Softmax regression on frozen features with Nesterov SGD under the eval schedule"""
    if features.requires_grad:
        raise ProtocolError("linear evaluation needs detached features from a frozen encoder")
    seed = config.seed if seed is None else seed
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    classes = classes or int(labels.max()) + 1
    classifier = init_classifier(features.shape[1], classes, seed)
    named = list(classifier.named_parameters())
    optimizer = build_sgd(named, config.lr, config.momentum, config.weight_decay, nesterov=True)
    rng = RngStream(seed).split(EVAL, 1)

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        for index in _batches(len(labels), config.batch_size, rng.split(epoch)):
            index = torch.from_numpy(index)
            loss = F.cross_entropy(classifier(features[index]), labels[index])
            if not torch.isfinite(loss):
                logger.error(f"Linear classifier diverged in epoch {epoch}")
                raise DivergenceError(f"non-finite classifier loss in epoch {epoch}")
            grads = compute_gradients(loss, named)
            sgd_step(optimizer, named, grads, lr)
    return classifier


def top_k(scores, labels, k: int) -> float:
    """Fraction of samples whose label is among the k highest scores.

    Ties rank the lower class index first.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ValueError(f"scores must be [N][c], got shape {scores.shape}")
    classes = scores.shape[1]
    if not 1 <= k <= classes:
        raise ValueError(f"k={k} outside [1, {classes}]")
    ranked = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float((ranked == labels[:, None]).any(axis=1).mean())


def compute_metrics(scores, labels, classes: Optional[int] = None) -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    classes = classes or scores.shape[1]
    predicted = np.argsort(-scores, axis=1, kind="stable")[:, 0]
    confusion = confusion_matrix(labels, predicted, labels=list(range(classes)))
    totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, np.diag(confusion) / totals, np.nan)
    return Metrics(
        top1=top_k(scores, labels, 1),
        top5=top_k(scores, labels, min(5, classes)),
        per_class=per_class.tolist(),
        confusion=confusion.tolist(),
        samples=len(labels),
    )


@dataclass
class EvaluationOutcome:
    metrics: Metrics
    classifier: nn.Linear
    train_features: torch.Tensor
    test_features: torch.Tensor


def _frozen_checksum(encoder_q, encoder_k) -> str:
    return parameter_checksum(encoder_q, encoder_k)


def _linear_protocol(encoder_q, encoder_k, train: LabeledDataset, test: LabeledDataset,
                     config: EvalConfig) -> EvaluationOutcome:
    before = _frozen_checksum(encoder_q, encoder_k)
    train_features = extract(config.representation, encoder_q, encoder_k, train.sequences)
    test_features = extract(config.representation, encoder_q, encoder_k, test.sequences)
    classifier = train_linear(train_features, train.labels, config, classes=train.shape.classes)
    with torch.no_grad():
        scores = classifier(test_features).numpy()
    metrics = compute_metrics(scores, test.labels, train.shape.classes)
    if _frozen_checksum(encoder_q, encoder_k) != before:
        raise ProtocolError("encoder parameters changed during linear evaluation")
    return EvaluationOutcome(metrics, classifier, train_features, test_features)


def linear_evaluation(pretrained, train: LabeledDataset, test: LabeledDataset,
                      config: EvalConfig) -> Metrics:
    """Train a linear classifier on frozen features and score the test split.

    `pretrained` is anything exposing encoder_q and encoder_k (encoder_k may be None).
    """
    outcome = _linear_protocol(pretrained.encoder_q, pretrained.encoder_k, train, test, config)
    logger.info(
        f"Linear evaluation ({config.representation.value}): top1 {outcome.metrics.top1:.4f} "
        f"top5 {outcome.metrics.top5:.4f} on {outcome.metrics.samples} test sequences"
    )
    return outcome.metrics


def finetune(encoder: nn.Module, classifier: nn.Linear, subset: LabeledDataset, config: FinetuneConfig) -> None:
    """Train encoder and classifier together on labeled sequences (CAE features)"""
    for param in list(encoder.parameters()) + list(classifier.parameters()):
        param.requires_grad_(True)
    named = [("encoder." + n, p) for n, p in encoder.named_parameters()]
    named += [("classifier." + n, p) for n, p in classifier.named_parameters()]
    optimizer = build_sgd(named, config.lr, config.sgd_momentum, config.weight_decay)
    rng = RngStream(config.seed).split(FINETUNE)
    labels = torch.as_tensor(subset.labels, dtype=torch.long)
    x_all = sequences_to_tensor(subset.sequences)

    for epoch in range(config.epochs):
        losses = []
        for index in _batches(len(subset), config.batch_size, rng.split(epoch)):
            index = torch.from_numpy(index)
            loss = F.cross_entropy(classifier(tap(encoder(x_all[index]))), labels[index])
            if not torch.isfinite(loss):
                logger.error(f"Fine-tuning diverged in epoch {epoch}")
                raise DivergenceError(f"non-finite fine-tuning loss in epoch {epoch}")
            grads = compute_gradients(loss, named)
            sgd_step(optimizer, named, grads, config.lr)
            losses.append(float(loss))
        logger.debug(f"Fine-tune epoch {epoch + 1}/{config.epochs}: loss {np.mean(losses):.4f}")


def semi_supervised(pretrained, train: LabeledDataset, test: LabeledDataset, fraction: float,
                    eval_config: EvalConfig, finetune_config: FinetuneConfig) -> Metrics:
    """Balanced labeled subset -> fine-tune everything -> frozen linear eval on the full train split"""
    subset = balanced_subset(train, fraction, finetune_config.seed)
    if len(subset) < 2:
        raise ValueError(f"labeled subset of {len(subset)} sequences is too small to fine-tune")

    encoder = copy.deepcopy(pretrained.encoder_q)
    classifier = init_classifier(encoder.hidden_size, train.shape.classes, finetune_config.seed)
    finetune(encoder, classifier, subset, finetune_config)
    logger.info(f"Fine-tuned on {len(subset)} labeled sequences (fraction {fraction})")

    freeze(encoder)
    encoder_k = pretrained.encoder_k
    if encoder_k is not None:
        encoder_k = copy.deepcopy(encoder_k)
        freeze(encoder_k)
    outcome = _linear_protocol(encoder, encoder_k, train, test, eval_config)
    logger.info(
        f"Semi-supervised ({fraction:g} labeled): top1 {outcome.metrics.top1:.4f} top5 {outcome.metrics.top5:.4f}"
    )
    return outcome.metrics
