"""
Central finite-difference verification of backpropagated gradients.
"""
import logging
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import torch

from ..models.results import GradientCheckReport
from .encoder import compute_gradients
from .rng import RngStream

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-5


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def central_difference(loss_fn: Callable[[], torch.Tensor], param: torch.Tensor, index: int,
                       eps: float = 1e-5) -> float:
    """(f(x + eps) - f(x - eps)) / 2 eps for one flat entry of `param`"""
    flat = param.data.view(-1)
    original = flat[index].item()
    with torch.no_grad():
        flat[index] = original + eps
        f_plus = float(loss_fn())
        flat[index] = original - eps
        f_minus = float(loss_fn())
        flat[index] = original
    return (f_plus - f_minus) / (2 * eps)


def finite_difference_check(loss_fn: Callable[[], torch.Tensor], named_params: Sequence[Tuple[str, torch.Tensor]],
                            checked: int = 200, eps: float = 1e-5, seed: int = 0,
                            analytic: Optional[Dict[str, torch.Tensor]] = None) -> GradientCheckReport:
    """Compare analytic gradients against central differences at randomly drawn entries.

    `loss_fn` must rebuild the loss from the current parameter values on every call.
    """
    named_params = [(name, p) for name, p in named_params if p.requires_grad]
    if analytic is None:
        analytic = compute_gradients(loss_fn(), named_params)

    sizes = np.array([p.numel() for _, p in named_params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    count = min(checked, total)
    picked = RngStream(seed).split(0).choice(total, count)

    report = GradientCheckReport(checked=count, max_relative_error=0.0)
    for flat_index in picked:
        owner = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        name, param = named_params[owner]
        local = int(flat_index - offsets[owner])
        a = float(analytic[name].reshape(-1)[local])
        f = central_difference(loss_fn, param, local, eps)
        err = relative_error(a, f)
        if err >= report.max_relative_error:
            report = GradientCheckReport(
                checked=count, max_relative_error=err, worst_parameter=name,
                worst_index=local, analytic=a, numeric=f,
            )

    logger.info(
        f"Gradient check: {count} entries, max relative error {report.max_relative_error:.3e} "
        f"at {report.worst_parameter}[{report.worst_index}]"
    )
    return report
