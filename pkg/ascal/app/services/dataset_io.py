import json
import logging
import os
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from ..errors import DatasetFormatError, DatasetShapeError, EmptyDatasetError
from ..models.skeleton import DataShape, LabeledDataset, SkeletonSequence
from .skeleton_service import pad_to_shape

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _parse_line(line: str, number: int) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"invalid JSON: {e.msg}", line=number)
    if not isinstance(record, dict):
        raise DatasetFormatError("record must be a JSON object", line=number)
    return record


def _read_header(record: dict, number: int) -> DataShape:
    meta = record.get("meta")
    if not isinstance(meta, dict):
        raise DatasetFormatError("first line must be a {\"meta\": {...}} header", line=number)
    try:
        return DataShape(
            T=meta["T"], M=meta["M"], J=meta["J"],
            center_joint=meta.get("center_joint", 0), classes=meta["classes"],
        )
    except KeyError as e:
        raise DatasetFormatError(f"header missing field {e}", line=number)
    except ValidationError as e:
        raise DatasetFormatError(f"invalid header: {e.errors()[0]['msg']}", line=number)


def load_dataset(path: PathLike, truncate: bool = False) -> LabeledDataset:
    """Read the JSON-Lines dataset format, padding (or subsampling) to the header shape"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")

    shape = None
    sequences = []
    labels = []
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            record = _parse_line(line, number)
            if shape is None:
                shape = _read_header(record, number)
                continue
            if "label" not in record or "frames" not in record:
                raise DatasetFormatError("record needs 'label' and 'frames'", line=number)
            label = record["label"]
            if not isinstance(label, int) or isinstance(label, bool):
                raise DatasetFormatError(f"label must be an integer, got {label!r}", line=number)
            if not 0 <= label < shape.classes:
                raise DatasetShapeError(f"line {number}: label {label} outside [0, {shape.classes})")
            try:
                frames = np.asarray(record["frames"], dtype=np.float64)
            except (TypeError, ValueError) as e:
                raise DatasetFormatError(f"frames are not a numeric [T][M][J][3] array: {e}", line=number)
            if frames.ndim != 4 or frames.shape[-1] != 3 or frames.shape[0] < 1:
                raise DatasetShapeError(f"line {number}: frames have shape {frames.shape}, expected [T][M][J][3]")
            if frames.shape[2] != shape.J:
                raise DatasetShapeError(f"line {number}: {frames.shape[2]} joints, header declares J={shape.J}")
            try:
                seq = SkeletonSequence(coords=frames, valid_frames=frames.shape[0])
                seq = pad_to_shape(seq, shape, truncate=truncate)
            except (ValidationError, ValueError) as e:
                raise DatasetShapeError(f"line {number}: {e}")
            sequences.append(seq)
            labels.append(label)

    if shape is None or not sequences:
        raise EmptyDatasetError(f"no sequences in {path}")
    logger.info(f"Loaded {len(sequences)} sequences from {path} (T={shape.T}, M={shape.M}, J={shape.J})")
    return LabeledDataset(sequences=sequences, labels=labels, shape=shape)


def save_dataset(ds: LabeledDataset, path: PathLike) -> None:
    """Write the header line then one record per sequence (valid frames only)"""
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    meta = {
        "T": ds.shape.T, "M": ds.shape.M, "J": ds.shape.J,
        "center_joint": ds.shape.center_joint, "classes": ds.shape.classes,
    }
    with open(path, "w") as f:
        f.write(json.dumps({"meta": meta}) + "\n")
        for seq, label in zip(ds.sequences, ds.labels):
            # json writes floats with repr, which round-trips float64 exactly
            frames = seq.coords[:seq.valid_frames].tolist()
            f.write(json.dumps({"label": int(label), "frames": frames}) + "\n")
    logger.info(f"Saved {len(ds)} sequences to {path}")
