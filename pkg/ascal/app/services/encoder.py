import hashlib
import logging
import math
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from ..errors import DivergenceError, ShapeMismatchError
from ..models.config import EncoderConfig, HeadKind
from ..models.skeleton import SkeletonSequence
from .rng import RngStream

logger = logging.getLogger(__name__)

DTYPE = torch.float64
# torch.nn.LSTM stacks gate rows as (input, forget, cell, output); checkpoints carry this tag
GATE_ORDER = "ifgo"


class SkeletonEncoder(nn.Module):
    """Stacked LSTM over flattened frames; returns top-layer hidden states for every step"""

    def __init__(self, input_size: int, hidden_size: int, layers: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.layers = layers
        self.lstm = nn.LSTM(input_size, hidden_size, num_layers=layers, batch_first=True, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_size:
            raise ShapeMismatchError(f"frame dim {x.shape[-1]} != encoder input size {self.input_size}")
        hidden, _ = self.lstm(x)  # zero initial hidden and cell states
        if not torch.isfinite(hidden).all():
            raise DivergenceError("non-finite hidden state in encoder forward pass")
        return hidden


class ProjectionHead(nn.Module):
    """None (identity), Linear, or Linear-ReLU-Linear map into the contrastive space"""

    def __init__(self, kind: HeadKind, in_dim: int, out_dim: int):
        super().__init__()
        self.kind = HeadKind(kind)
        self.in_dim = in_dim
        if self.kind == HeadKind.NONE:
            self.out_dim = in_dim
            self.net = nn.Identity()
        elif self.kind == HeadKind.LINEAR:
            self.out_dim = out_dim
            self.net = nn.Linear(in_dim, out_dim, dtype=DTYPE)
        else:
            self.out_dim = out_dim
            self.net = nn.Sequential(
                nn.Linear(in_dim, in_dim, dtype=DTYPE),
                nn.ReLU(),
                nn.Linear(in_dim, out_dim, dtype=DTYPE),
            )

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.net(v)


def _uniform_(tensor: torch.Tensor, bound: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)


def init_params(input_size: int, hidden_size: int, layers: int, rng: RngStream) -> SkeletonEncoder:
    """Weights ~ U[-1/sqrt(H), 1/sqrt(H)]; biases zero except the forget gate (1.0)"""
    if hidden_size < 1:
        raise ValueError(f"hidden_size must be >= 1, got {hidden_size}")
    encoder = SkeletonEncoder(input_size, hidden_size, layers)
    generator = rng.torch_generator()
    bound = 1.0 / math.sqrt(hidden_size)
    for name, param in encoder.lstm.named_parameters():
        if name.startswith("weight"):
            _uniform_(param, bound, generator)
        else:
            with torch.no_grad():
                param.zero_()
                # nn.LSTM keeps two bias vectors per layer; their sum is the gate bias
                if name.startswith("bias_ih"):
                    param[hidden_size:2 * hidden_size] = 1.0
    return encoder


def init_head(kind: HeadKind, in_dim: int, out_dim: int, rng: RngStream) -> ProjectionHead:
    head = ProjectionHead(kind, in_dim, out_dim)
    generator = rng.torch_generator()
    for module in head.modules():
        if isinstance(module, nn.Linear):
            _uniform_(module.weight, 1.0 / math.sqrt(module.in_features), generator)
            with torch.no_grad():
                module.bias.zero_()
    return head


def build_encoder(input_size: int, config: EncoderConfig, rng: RngStream):
    """Query encoder and head from one init stream"""
    encoder = init_params(input_size, config.hidden_size, config.layers, rng.split(0))
    head = init_head(config.head, config.hidden_size, config.head_dim, rng.split(1))
    return encoder, head


def sequences_to_tensor(seqs: Union[SkeletonSequence, Sequence[SkeletonSequence]]) -> torch.Tensor:
    """[B][T][M][J][3] -> [B][T][M*J*3], flattened in (actor, joint, axis) order"""
    if isinstance(seqs, SkeletonSequence):
        seqs = [seqs]
    stacked = np.stack([seq.coords for seq in seqs])
    return torch.from_numpy(stacked.reshape(stacked.shape[0], stacked.shape[1], -1).copy())


def tap(hidden: torch.Tensor) -> torch.Tensor:
    """Temporal average pooling over the step axis (-2), summed in ascending t"""
    steps = hidden.shape[-2]
    if steps == 0:
        raise ValueError("cannot pool an empty sequence of hidden states")
    return hidden.cumsum(dim=-2).select(-2, steps - 1) / steps


def last_hidden(hidden: torch.Tensor) -> torch.Tensor:
    return hidden.select(-2, hidden.shape[-2] - 1)


def project(head: ProjectionHead, v: torch.Tensor) -> torch.Tensor:
    if v.shape[-1] != head.in_dim:
        raise ShapeMismatchError(f"representation dim {v.shape[-1]} != head input {head.in_dim}")
    return head(v)


def represent(encoder: SkeletonEncoder, head: ProjectionHead, x: torch.Tensor, use_tap: bool = True) -> torch.Tensor:
    """forward -> TAP (or last state) -> projection"""
    hidden = encoder(x)
    pooled = tap(hidden) if use_tap else last_hidden(hidden)
    return project(head, pooled)


def _as_batch(seq) -> torch.Tensor:
    return seq if isinstance(seq, torch.Tensor) else sequences_to_tensor(seq)


def cae(encoder_q: SkeletonEncoder, seq) -> torch.Tensor:
    """Pooled query-encoder output on the original sequence(s); [B][E]"""
    with torch.no_grad():
        return tap(encoder_q(_as_batch(seq)))


def cae_plus(encoder_q: SkeletonEncoder, encoder_k: SkeletonEncoder, seq) -> torch.Tensor:
    """[CAE || pooled key-encoder output]; [B][2E]"""
    x = _as_batch(seq)
    with torch.no_grad():
        return torch.cat([tap(encoder_q(x)), tap(encoder_k(x))], dim=-1)


def _paired(target: nn.Module, source: nn.Module):
    target_params = list(target.named_parameters())
    source_params = list(source.named_parameters())
    if len(target_params) != len(source_params):
        raise ShapeMismatchError(f"{len(target_params)} vs {len(source_params)} parameter tensors")
    for (name_t, p_t), (name_s, p_s) in zip(target_params, source_params):
        if name_t != name_s or p_t.shape != p_s.shape:
            raise ShapeMismatchError(f"parameter {name_t}{tuple(p_t.shape)} vs {name_s}{tuple(p_s.shape)}")
        yield p_t, p_s


@torch.no_grad()
def momentum_update(target: nn.Module, source: nn.Module, m: float) -> None:
    """theta_k <- m * theta_k + (1 - m) * theta_q, in place on target only"""
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {m}")
    for p_k, p_q in _paired(target, source):
        p_k.mul_(m).add_(p_q, alpha=1.0 - m)


@torch.no_grad()
def copy_params(target: nn.Module, source: nn.Module) -> None:
    for p_k, p_q in _paired(target, source):
        p_k.copy_(p_q)


def compute_gradients(loss: torch.Tensor, named_params: Iterable) -> Dict[str, torch.Tensor]:
    """Exact gradients of a scalar loss by backpropagation through time.

    Parameters the loss does not depend on get zero gradients.
    """
    named_params = [(name, p) for name, p in named_params if p.requires_grad]
    if not named_params:
        return {}
    grads = torch.autograd.grad(loss, [p for _, p in named_params], allow_unused=True)
    result = {}
    for (name, param), grad in zip(named_params, grads):
        grad = torch.zeros_like(param) if grad is None else grad
        if not torch.isfinite(grad).all():
            raise DivergenceError(f"non-finite gradient for {name}")
        result[name] = grad
    return result


def parameter_checksum(*modules: nn.Module) -> str:
    """sha256 over every parameter's bytes, in registration order"""
    digest = hashlib.sha256()
    for module in modules:
        if module is None:
            continue
        for name, param in module.named_parameters():
            digest.update(name.encode())
            digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def freeze(*modules: nn.Module) -> None:
    for module in modules:
        if module is not None:
            for param in module.parameters():
                param.requires_grad_(False)


def trainable(named_params: Iterable) -> List:
    return [(name, p) for name, p in named_params if p.requires_grad]
