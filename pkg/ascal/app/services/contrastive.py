"""InfoNCE, the key queue, the memory bank and the per-paradigm loss steps."""
import copy
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DivergenceError, ProtocolError, ShapeMismatchError
from ..models.config import ContrastiveConfig, Paradigm, PretrainConfig, QueueInit
from .encoder import DTYPE, build_encoder, freeze, represent
from .rng import RngStream

logger = logging.getLogger(__name__)


def _check_temperature(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")


def info_nce_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy with the positive in column 0.

    log_softmax subtracts the row max before exponentiating.
    """
    if not torch.isfinite(logits).all():
        raise DivergenceError("non-finite contrastive logits")
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = torch.zeros(logits.shape[0], dtype=torch.long)
    return F.cross_entropy(logits, labels)


def contrastive_logits(q: torch.Tensor, k_pos: torch.Tensor, negatives: Optional[torch.Tensor],
                       tau: float, normalize: bool = False) -> torch.Tensor:
    """[n][1 + K] logits; negatives are shared [K][E] or per anchor [n][K][E]"""
    _check_temperature(tau)
    if q.dim() == 1:
        q, k_pos = q.unsqueeze(0), k_pos.unsqueeze(0)
    if q.shape != k_pos.shape:
        raise ShapeMismatchError(f"query {tuple(q.shape)} vs positive key {tuple(k_pos.shape)}")
    dim = q.shape[-1]
    if negatives is None:
        negatives = q.new_zeros((0, dim))
    if negatives.shape[-1] != dim:
        raise ShapeMismatchError(f"negatives have dim {negatives.shape[-1]}, query has {dim}")

    if normalize:
        q = F.normalize(q, dim=-1)
        k_pos = F.normalize(k_pos, dim=-1)
        negatives = F.normalize(negatives, dim=-1) if negatives.shape[-2] else negatives

    positive = (q * k_pos).sum(dim=-1, keepdim=True)
    if negatives.dim() == 3:
        if negatives.shape[0] != q.shape[0]:
            raise ShapeMismatchError(f"{negatives.shape[0]} negative sets for {q.shape[0]} anchors")
        negative = torch.einsum("ne,nke->nk", q, negatives)
    else:
        negative = q @ negatives.T
    return torch.cat([positive, negative], dim=1) / tau


def info_nce(q: torch.Tensor, k_pos: torch.Tensor, negatives: Optional[torch.Tensor], tau: float,
             normalize: bool = False) -> torch.Tensor:
    """-log softmax of the positive logit among (positive, negatives), averaged over the batch"""
    return info_nce_from_logits(contrastive_logits(q, k_pos, negatives, tau, normalize))


def in_batch_info_nce(q: torch.Tensor, k: torch.Tensor, tau: float, normalize: bool = False) -> torch.Tensor:
    """Each anchor's positive is its own key; the other n-1 keys of the batch are negatives"""
    _check_temperature(tau)
    if q.shape != k.shape:
        raise ShapeMismatchError(f"query {tuple(q.shape)} vs key {tuple(k.shape)}")
    if q.shape[0] < 2:
        raise ValueError("in-batch negatives need at least 2 samples")
    if normalize:
        q, k = F.normalize(q, dim=-1), F.normalize(k, dim=-1)
    logits = q @ k.T / tau
    if not torch.isfinite(logits).all():
        raise DivergenceError("non-finite contrastive logits")
    return F.cross_entropy(logits, torch.arange(q.shape[0]))


class KeyQueue:
    """Bounded FIFO of key vectors, evicted one mini-batch at a time"""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self.storage = torch.zeros((capacity, dim), dtype=DTYPE)
        self.size = 0
        self.ptr = 0  # next slot to write; when full, also the oldest entry

    def __len__(self) -> int:
        return self.size

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def enqueue(self, keys: torch.Tensor) -> None:
        keys = keys.detach()
        if keys.dim() == 1:
            keys = keys.unsqueeze(0)
        if keys.shape[-1] != self.dim:
            raise ShapeMismatchError(f"key dim {keys.shape[-1]} != queue dim {self.dim}")
        batch = keys.shape[0]
        if batch > self.capacity:
            raise ValueError(f"batch of {batch} keys exceeds queue capacity {self.capacity}")
        slots = (self.ptr + torch.arange(batch)) % self.capacity
        self.storage[slots] = keys.to(DTYPE)
        self.ptr = (self.ptr + batch) % self.capacity
        self.size = min(self.size + batch, self.capacity)

    def current_negatives(self) -> torch.Tensor:
        """Stored keys, oldest first"""
        if not self.full:
            return self.storage[:self.size].clone()
        return torch.cat([self.storage[self.ptr:], self.storage[:self.ptr]])

    def fill_random(self, rng: RngStream) -> None:
        keys = torch.from_numpy(rng.normal(1.0, (self.capacity, self.dim)))
        self.storage = F.normalize(keys, dim=-1)
        self.size = self.capacity
        self.ptr = 0

    def state_dict(self) -> Dict[str, object]:
        return {"storage": self.storage.clone(), "size": self.size, "ptr": self.ptr}

    def load_state_dict(self, state: Dict[str, object]) -> None:
        storage = state["storage"]
        if tuple(storage.shape) != (self.capacity, self.dim):
            raise ShapeMismatchError(f"queue state {tuple(storage.shape)} vs ({self.capacity}, {self.dim})")
        self.storage = storage.clone().to(DTYPE)
        self.size = int(state["size"])
        self.ptr = int(state["ptr"])


class MemoryBank:
    """One representation slot per training sample, updated with per-sample momentum"""

    def __init__(self, slots: torch.Tensor, momentum: float = 0.5):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"bank momentum must lie in [0, 1), got {momentum}")
        self.slots = slots.to(DTYPE)
        self.momentum = momentum

    @classmethod
    def random(cls, size: int, dim: int, rng: RngStream, momentum: float = 0.5) -> "MemoryBank":
        slots = torch.from_numpy(rng.normal(1.0, (size, dim)))
        return cls(F.normalize(slots, dim=-1), momentum)

    def __len__(self) -> int:
        return self.slots.shape[0]

    def sample_negatives(self, anchors: List[int], count: int, rng: RngStream) -> np.ndarray:
        """[n][count] distinct slot indices per anchor, never the anchor itself"""
        size = len(self)
        if count > size - 1:
            raise ValueError(f"cannot draw {count} negatives from a bank of {size} slots")
        rows = []
        for anchor in anchors:
            drawn = rng.choice(size - 1, count)
            drawn[drawn >= anchor] += 1
            rows.append(drawn)
        return np.stack(rows)

    def positives(self, anchors: List[int]) -> torch.Tensor:
        return self.slots[torch.as_tensor(anchors)].clone()

    def gather(self, indices: np.ndarray) -> torch.Tensor:
        return self.slots[torch.from_numpy(indices)]

    @torch.no_grad()
    def update(self, anchors: List[int], fresh: torch.Tensor) -> None:
        index = torch.as_tensor(anchors)
        self.slots[index] = self.momentum * self.slots[index] + (1.0 - self.momentum) * fresh.detach()
        if not torch.isfinite(self.slots).all():
            raise DivergenceError("non-finite memory bank slot")

    def state_dict(self) -> Dict[str, object]:
        return {"slots": self.slots.clone(), "momentum": self.momentum}

    def load_state_dict(self, state: Dict[str, object]) -> None:
        if tuple(state["slots"].shape) != tuple(self.slots.shape):
            raise ShapeMismatchError(f"bank state {tuple(state['slots'].shape)} vs {tuple(self.slots.shape)}")
        self.slots = state["slots"].clone().to(DTYPE)
        self.momentum = float(state["momentum"])


class ContrastiveLearner(nn.Module):
    """Query encoder + head, and (except for the memory bank) a key encoder + head.

    In the queue paradigm the key path is frozen: its parameters never require
    gradients and are only moved by momentum updates.
    """

    def __init__(self, encoder_q: nn.Module, head_q: nn.Module, paradigm: Paradigm, use_tap: bool = True):
        super().__init__()
        self.paradigm = Paradigm(paradigm)
        self.use_tap = use_tap
        self.encoder_q = encoder_q
        self.head_q = head_q
        self.encoder_k: Optional[nn.Module] = None
        self.head_k: Optional[nn.Module] = None
        if self.paradigm != Paradigm.MEMORY_BANK:
            self.encoder_k = copy.deepcopy(encoder_q)
            self.head_k = copy.deepcopy(head_q)
        if self.paradigm == Paradigm.QUEUE:
            freeze(self.encoder_k, self.head_k)

    def query(self, x: torch.Tensor) -> torch.Tensor:
        return represent(self.encoder_q, self.head_q, x, self.use_tap)

    def key(self, x: torch.Tensor) -> torch.Tensor:
        if self.encoder_k is None:
            raise ProtocolError("memory-bank learners have no key encoder")
        if self.paradigm == Paradigm.QUEUE:
            with torch.no_grad():
                return represent(self.encoder_k, self.head_k, x, self.use_tap)
        return represent(self.encoder_k, self.head_k, x, self.use_tap)

    def query_parameters(self) -> Iterator[Tuple[str, nn.Parameter]]:
        yield from (("encoder_q." + n, p) for n, p in self.encoder_q.named_parameters())
        yield from (("head_q." + n, p) for n, p in self.head_q.named_parameters())

    def trainable_parameters(self) -> List[Tuple[str, nn.Parameter]]:
        """Parameters updated by SGD: the query side, plus the key side for end-to-end"""
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    @property
    def representation_dim(self) -> int:
        return self.head_q.out_dim


def build_learner(input_size: int, config: PretrainConfig, rng: RngStream) -> ContrastiveLearner:
    """Randomly initialize the query side and copy it to the key side"""
    encoder_q, head_q = build_encoder(input_size, config.encoder, rng)
    return ContrastiveLearner(encoder_q, head_q, config.contrastive.paradigm, config.encoder.use_tap)


def build_dictionary(learner: ContrastiveLearner, config: ContrastiveConfig, dataset_size: int,
                     rng: RngStream):
    """KeyQueue, MemoryBank, or None (end-to-end)"""
    dim = learner.representation_dim
    if config.paradigm == Paradigm.QUEUE:
        queue = KeyQueue(config.queue_size, dim)
        if config.queue_init == QueueInit.RANDOM:
            queue.fill_random(rng)
        return queue
    if config.paradigm == Paradigm.MEMORY_BANK:
        if config.queue_size > dataset_size - 1:
            raise ValueError(
                f"memory bank needs queue_size <= dataset size - 1 ({dataset_size - 1}), got {config.queue_size}"
            )
        return MemoryBank.random(dataset_size, dim, rng, config.bank_momentum)
    return None


@dataclass
class StepOutput:
    loss: torch.Tensor
    q: torch.Tensor
    k: Optional[torch.Tensor]
    negatives: int


def queue_step(learner: ContrastiveLearner, x_query: torch.Tensor, x_key: torch.Tensor,
               queue: KeyQueue, config: ContrastiveConfig) -> StepOutput:
    """Queue paradigm loss; keys are computed without gradient"""
    q = learner.query(x_query)
    k = learner.key(x_key)
    negatives = queue.current_negatives()
    loss = info_nce(q, k, negatives, config.temperature, config.normalize)
    return StepOutput(loss=loss, q=q, k=k, negatives=negatives.shape[0])


def end_to_end_step(learner: ContrastiveLearner, x_query: torch.Tensor, x_key: torch.Tensor,
                    config: ContrastiveConfig) -> StepOutput:
    """In-batch negatives; both encoders receive gradients"""
    if x_query.shape[0] < 2:
        raise ValueError("end-to-end step needs a batch of at least 2")
    q = learner.query(x_query)
    k = learner.key(x_key)
    loss = in_batch_info_nce(q, k, config.temperature, config.normalize)
    return StepOutput(loss=loss, q=q, k=k, negatives=q.shape[0] - 1)


def memory_bank_step(learner: ContrastiveLearner, x_query: torch.Tensor, anchors: List[int],
                     bank: MemoryBank, config: ContrastiveConfig, rng: RngStream) -> StepOutput:
    """Positive is the anchor's own slot; negatives are other samples' slots.

    The bank itself is updated by the caller after the optimizer step.
    """
    q = learner.query(x_query)
    positives = bank.positives(anchors)
    negatives = bank.gather(bank.sample_negatives(anchors, config.queue_size, rng))
    loss = info_nce(q, positives, negatives, config.temperature, config.normalize)
    return StepOutput(loss=loss, q=q, k=None, negatives=config.queue_size)
