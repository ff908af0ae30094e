import logging
import math
from typing import Dict, List

import numpy as np

from ..models.skeleton import DataShape, LabeledDataset, SkeletonSequence, SyntheticSpec
from .rng import SUBSET, SYNTH, RngStream

logger = logging.getLogger(__name__)


def normalize_center(seq: SkeletonSequence, center_joint: int) -> SkeletonSequence:
    """Subtract actor 0's center joint, frame by frame, from every actor's joints"""
    if not 0 <= center_joint < seq.J:
        raise IndexError(f"center_joint {center_joint} out of range for J={seq.J}")
    coords = seq.coords.copy()
    valid = seq.valid_frames
    reference = coords[:valid, 0:1, center_joint:center_joint + 1, :]
    coords[:valid] = coords[:valid] - reference
    return seq.with_coords(coords)


def normalize_dataset(ds: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(
        sequences=[normalize_center(seq, ds.shape.center_joint) for seq in ds.sequences],
        labels=list(ds.labels),
        shape=ds.shape,
    )


def subsample_frames(seq: SkeletonSequence, frames: int) -> SkeletonSequence:
    """Uniform-stride subsampling of the valid frames down to `frames`"""
    if seq.valid_frames <= frames:
        return seq
    index = np.linspace(0, seq.valid_frames - 1, frames).astype(int)
    return SkeletonSequence(coords=seq.coords[index], valid_frames=frames)


def pad_to_shape(seq: SkeletonSequence, shape: DataShape, truncate: bool = False) -> SkeletonSequence:
    """Zero-pad frames and actors up to `shape`.

    Longer sequences are an error unless `truncate` is set, in which case frames
    are subsampled and actors past shape.M dropped (file order is kept).
    """
    if seq.J != shape.J:
        raise ValueError(f"joint count {seq.J} does not match target J={shape.J}")
    if seq.valid_frames > shape.T or seq.M > shape.M:
        if not truncate:
            raise ValueError(
                f"sequence ({seq.valid_frames} frames, {seq.M} actors) exceeds target "
                f"T={shape.T}, M={shape.M}; pass truncate=True to subsample"
            )
        seq = subsample_frames(seq, shape.T)
        seq = SkeletonSequence(coords=seq.coords[:, :shape.M], valid_frames=seq.valid_frames)

    valid = seq.valid_frames
    coords = np.zeros((shape.T, shape.M, shape.J, 3), dtype=np.float64)
    coords[:valid, :seq.M] = seq.coords[:valid]
    return SkeletonSequence(coords=coords, valid_frames=valid)


def balanced_subset(ds: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Per class, ceil(fraction * class size) samples drawn without replacement"""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    rng = RngStream(seed).split(SUBSET)
    labels = ds.label_array()
    picked: List[int] = []
    for cls in range(ds.shape.classes):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            continue
        # rounding guards against 0.1 * 100 landing a hair above 10
        count = math.ceil(round(fraction * members.size, 9))
        if count < 1:
            raise ValueError(f"fraction {fraction} leaves class {cls} without samples")
        picked.extend(members[rng.choice(members.size, count)].tolist())
    order = rng.permutation(len(picked))
    subset = ds.subset([picked[i] for i in order])
    logger.info(f"Balanced subset: fraction={fraction}, {len(subset)} of {len(ds)} sequences")
    return subset


# Per-sequence performer variation, in units of noise_std
TEMPO_JITTER = 5.0
AMPLITUDE_JITTER = 5.0
PHASE_JITTER = 50.0


def _class_program(k: int, spec: SyntheticSpec) -> Dict[str, object]:
    """Motion program for class k: moving joints, frequency, phase, axes"""
    shape = spec.shape
    movable = [j for j in range(shape.J) if j != shape.center_joint]
    return {
        "joints": movable[k::spec.class_count],
        "frequency": 1.0 + 0.75 * k,
        "phase": math.pi * k / spec.class_count,
        "axis": k % 3,
    }


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Deterministic, class-balanced toy actions.

    Every class shares one rest pose; class k drives its own joint subset with a
    sinusoid of class-specific frequency and phase. Each sequence varies the
    tempo, amplitude and start phase of its class program, and additive noise is
    laid on top. All of it scales with noise_std, so noise_std=0 yields identical
    sequences within a class.
    """
    shape = spec.shape
    root = RngStream(spec.seed).split(SYNTH)
    rest = root.split(0).normal(0.3, (shape.M, shape.J, 3))
    rest[:, shape.center_joint] = 0.0
    rest += np.arange(shape.M)[:, None, None] * np.array([1.0, 0.0, 0.0])
    t = np.arange(shape.T, dtype=np.float64) / shape.T

    sequences: List[SkeletonSequence] = []
    labels: List[int] = []
    for k in range(spec.class_count):
        program = _class_program(k, spec)
        for i in range(spec.sequences_per_class):
            rng = root.split(1, k, i)
            tempo = 1.0 + TEMPO_JITTER * spec.noise_std * rng.normal()
            amplitude = 1.0 + AMPLITUDE_JITTER * spec.noise_std * rng.normal()
            phase = program["phase"] + PHASE_JITTER * spec.noise_std * rng.normal()
            coords = np.broadcast_to(rest, (shape.T, shape.M, shape.J, 3)).copy()
            angle = 2.0 * math.pi * program["frequency"] * tempo * t + phase
            wave = 0.3 * amplitude * np.sin(angle)
            sway = 0.15 * amplitude * np.cos(angle)
            axis = program["axis"]
            for j in program["joints"]:
                coords[:, :, j, axis] += wave[:, None]
                coords[:, :, j, (axis + 1) % 3] += sway[:, None]
            if spec.noise_std > 0:
                coords += rng.normal(spec.noise_std, coords.shape)
            sequences.append(SkeletonSequence(coords=coords, valid_frames=shape.T))
            labels.append(k)

    logger.info(
        f"Generated synthetic dataset: {spec.class_count} classes x {spec.sequences_per_class} "
        f"sequences, shape T={shape.T} M={shape.M} J={shape.J}, noise_std={spec.noise_std}"
    )
    return LabeledDataset(sequences=sequences, labels=labels, shape=shape)
