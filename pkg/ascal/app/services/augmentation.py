"""Skeleton augmentation strategies and the query/key pair sampler.

Every strategy is a pure function of (sequence, stream). Draw order per call:
  rotation      axis, then the X, Y, Z angles
  shear         the six factors in row order (xy, xz, yx, yz, zx, zy)
  reverse       one coin
  noise         one block of normals for the valid frames
  blur          one coin, then sigma if the coin says blur
  joint_mask    V, L, the joint set, the frame set
  channel_mask  the axis
Coin draws compare a uniform [0, 1) value against 0.5.
Strategies take an optional `log` list; the sampled parameters are appended to it.
"""
import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..models.augmentation import (
    AXES, BLUR_SIGMA_RANGE, BLUR_TAPS, MAIN_ANGLE_MAX, MASK_FRAME_RANGE, MASK_JOINT_RANGE,
    MINOR_ANGLE_MAX, NOISE_STD, BlurKernel, MaskSample, RotationSample, ShearSample,
)
from ..models.config import AugmentationPipeline, Strategy
from ..models.skeleton import SkeletonSequence
from .rng import RngStream

logger = logging.getLogger(__name__)

ParamLog = Optional[List[Dict[str, object]]]


def _record(log: ParamLog, strategy: Strategy, **params) -> None:
    if log is not None:
        log.append({"strategy": strategy.value, **params})


def _linear_map(seq: SkeletonSequence, matrix: np.ndarray) -> SkeletonSequence:
    # v' = A v for every joint; row-vector storage means coords @ A^T
    return seq.with_coords(seq.coords @ matrix.T)


def sample_rotation(rng: RngStream) -> RotationSample:
    main = rng.integers(0, 3)
    angles = [
        rng.uniform(0.0, MAIN_ANGLE_MAX if axis == main else MINOR_ANGLE_MAX)
        for axis in range(3)
    ]
    return RotationSample(main_axis=AXES[main], alpha=angles[0], beta=angles[1], gamma=angles[2])


def apply_rotation(seq: SkeletonSequence, sample: RotationSample) -> SkeletonSequence:
    return _linear_map(seq, sample.matrix)


def rotation(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    sample = sample_rotation(rng)
    _record(log, Strategy.ROTATION, **sample.model_dump())
    return apply_rotation(seq, sample)


def sample_shear(rng: RngStream) -> ShearSample:
    xy, xz, yx, yz, zx, zy = rng.uniform(-1.0, 1.0, 6).tolist()
    return ShearSample(xy=xy, xz=xz, yx=yx, yz=yz, zx=zx, zy=zy)


def apply_shear(seq: SkeletonSequence, sample: ShearSample) -> SkeletonSequence:
    return _linear_map(seq, sample.matrix)


def shear(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    sample = sample_shear(rng)
    _record(log, Strategy.SHEAR, **sample.model_dump())
    return apply_shear(seq, sample)


def reverse_frames(seq: SkeletonSequence) -> SkeletonSequence:
    """Reverse the valid frames; padding stays at the tail"""
    coords = seq.coords.copy()
    valid = seq.valid_frames
    coords[:valid] = coords[:valid][::-1]
    return seq.with_coords(coords)


def reverse(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    flipped = rng.random() < 0.5
    _record(log, Strategy.REVERSE, reversed=flipped)
    return reverse_frames(seq) if flipped else seq


def gaussian_noise(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    coords = seq.coords.copy()
    valid = seq.valid_frames
    coords[:valid] += rng.normal(NOISE_STD, coords[:valid].shape)
    _record(log, Strategy.GAUSSIAN_NOISE, std=NOISE_STD)
    return seq.with_coords(coords)


def blur_sequence(seq: SkeletonSequence, kernel: BlurKernel) -> SkeletonSequence:
    """Convolve every joint channel along time with the normalized kernel.

    Only the valid window is filtered; its edges are extended by replication.
    """
    valid = seq.valid_frames
    if valid == 0:
        return seq
    half = BLUR_TAPS // 2
    window = seq.coords[:valid]
    padded = np.pad(window, ((half, half), (0, 0), (0, 0), (0, 0)), mode="edge")
    # windows: [valid, M, J, 3, taps]; the kernel is symmetric so correlation == convolution
    windows = sliding_window_view(padded, BLUR_TAPS, axis=0)
    coords = seq.coords.copy()
    coords[:valid] = windows @ kernel.weights
    return seq.with_coords(coords)


def gaussian_blur(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    if rng.random() >= 0.5:
        _record(log, Strategy.GAUSSIAN_BLUR, blurred=False)
        return seq
    kernel = BlurKernel(sigma=rng.uniform(*BLUR_SIGMA_RANGE))
    _record(log, Strategy.GAUSSIAN_BLUR, blurred=True, sigma=kernel.sigma)
    return blur_sequence(seq, kernel)


def sample_joint_mask(seq: SkeletonSequence, rng: RngStream) -> MaskSample:
    joint_count = rng.integers(MASK_JOINT_RANGE[0], MASK_JOINT_RANGE[1] + 1)
    frame_count = rng.integers(MASK_FRAME_RANGE[0], MASK_FRAME_RANGE[1] + 1)
    # the sampled ranges assume J=25, T=150; clamp for smaller layouts
    clamped = (min(max(seq.J - 1, 1), joint_count), min(seq.valid_frames, frame_count))
    if clamped != (joint_count, frame_count):
        logger.debug(f"Joint mask clamped from {joint_count}x{frame_count} to {clamped[0]}x{clamped[1]}")
    joint_count, frame_count = clamped
    joints = sorted(rng.choice(seq.J, joint_count).tolist())
    frames = sorted(rng.choice(seq.valid_frames, frame_count).tolist()) if frame_count else []
    return MaskSample(joints=joints, frames=frames)


def apply_joint_mask(seq: SkeletonSequence, mask: MaskSample) -> SkeletonSequence:
    coords = seq.coords.copy()
    if mask.frames and mask.joints:
        frames = np.asarray(mask.frames)[:, None]
        joints = np.asarray(mask.joints)[None, :]
        coords[frames, :, joints, :] = 0.0
    return seq.with_coords(coords)


def joint_mask(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    mask = sample_joint_mask(seq, rng)
    _record(log, Strategy.JOINT_MASK, joints=mask.joints, frames=mask.frames)
    return apply_joint_mask(seq, mask)


def apply_channel_mask(seq: SkeletonSequence, axis: str) -> SkeletonSequence:
    coords = seq.coords.copy()
    coords[..., AXES.index(axis)] = 0.0
    return seq.with_coords(coords)


def channel_mask(seq: SkeletonSequence, rng: RngStream, log: ParamLog = None) -> SkeletonSequence:
    axis = AXES[rng.integers(0, 3)]
    _record(log, Strategy.CHANNEL_MASK, axis=axis)
    return apply_channel_mask(seq, axis)


STRATEGIES: Dict[Strategy, Callable[..., SkeletonSequence]] = {
    Strategy.ROTATION: rotation,
    Strategy.SHEAR: shear,
    Strategy.REVERSE: reverse,
    Strategy.GAUSSIAN_NOISE: gaussian_noise,
    Strategy.GAUSSIAN_BLUR: gaussian_blur,
    Strategy.JOINT_MASK: joint_mask,
    Strategy.CHANNEL_MASK: channel_mask,
}


def apply_pipeline(seq: SkeletonSequence, pipeline: AugmentationPipeline, rng: RngStream,
                   log: ParamLog = None) -> SkeletonSequence:
    for strategy in pipeline.strategies:
        seq = STRATEGIES[strategy](seq, rng, log)
    return seq


def augment_pair(seq: SkeletonSequence, pipeline: AugmentationPipeline, rng: RngStream,
                 logs: Optional[Tuple[list, list]] = None) -> Tuple[SkeletonSequence, SkeletonSequence]:
    """Two independent realizations of the same pipeline: (query view, key view)"""
    query_log, key_log = logs if logs is not None else (None, None)
    query = apply_pipeline(seq, pipeline, rng.split(0), query_log)
    key = apply_pipeline(seq, pipeline, rng.split(1), key_log)
    return query, key


def composition_grid(strategies: List[Strategy]) -> List[AugmentationPipeline]:
    """Every ordered pair of strategies, repeats included"""
    return [AugmentationPipeline(strategies=[first, second]) for first in strategies for second in strategies]
