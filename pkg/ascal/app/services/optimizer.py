import bisect
import logging
from typing import Dict, Iterable, List, Sequence, Tuple

import torch
import torch.optim as optim

from ..errors import DivergenceError, ShapeMismatchError

logger = logging.getLogger(__name__)

NamedParams = Sequence[Tuple[str, torch.nn.Parameter]]


def _is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("bias")


def build_sgd(named_params: Iterable, lr: float, momentum: float, weight_decay: float,
              nesterov: bool = False) -> optim.SGD:
    """SGD with classical (or Nesterov) momentum; weight decay on weights only.

    torch's update is g' = g + wd * theta; v' = mu * v + g'; theta' = theta - lr * v'
    with v starting at zero, which is the pretraining rule.
    """
    decay: List[torch.nn.Parameter] = []
    no_decay: List[torch.nn.Parameter] = []
    for name, param in named_params:
        if not param.requires_grad:
            continue
        (no_decay if _is_bias(name) else decay).append(param)
    groups = [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    groups = [g for g in groups if g["params"]]
    return optim.SGD(groups, lr=lr, momentum=momentum, nesterov=nesterov and momentum > 0)


def sgd_step(optimizer: optim.SGD, named_params: NamedParams, grads: Dict[str, torch.Tensor],
             lr: float, clip_grad_norm: float | None = None, step: int | None = None) -> None:
    """Apply one update at learning rate `lr` from precomputed gradients"""
    params = []
    for name, param in named_params:
        if not param.requires_grad:
            continue
        if name not in grads:
            raise ShapeMismatchError(f"no gradient for parameter {name}")
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeMismatchError(f"gradient {name}{tuple(grad.shape)} vs parameter {tuple(param.shape)}")
        param.grad = grad.detach().clone()
        params.append(param)

    if clip_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(params, clip_grad_norm)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)

    for name, param in named_params:
        if not torch.isfinite(param).all():
            raise DivergenceError(f"non-finite update for {name}", step=step)


def lr_at(epoch: int, config) -> float:
    """Piecewise-constant schedule: base lr times gamma per milestone passed"""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    milestones = getattr(config, "lr_milestones", [])
    gamma = getattr(config, "lr_gamma", 1.0)
    return config.lr * gamma ** bisect.bisect_right(milestones, epoch)
