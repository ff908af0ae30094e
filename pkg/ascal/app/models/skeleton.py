from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class DataShape(BaseModel):
    """Tensor layout shared by every sequence of a dataset"""
    model_config = ConfigDict(frozen=True)

    T: int = Field(..., ge=1, description="Frame count")
    M: int = Field(..., ge=1, description="Actor count")
    J: int = Field(..., ge=1, description="Joint count")
    center_joint: int = Field(0, ge=0, description="Joint subtracted during normalization")
    classes: int = Field(..., ge=1, description="Number of action classes")

    @model_validator(mode="after")
    def _center_in_range(self) -> "DataShape":
        if self.center_joint >= self.J:
            raise ValueError(f"center_joint {self.center_joint} out of range for J={self.J}")
        return self

    @property
    def frame_dim(self) -> int:
        """Flattened per-frame feature size fed to the encoder"""
        return self.M * self.J * 3


class SkeletonSequence(BaseModel):
    """T x M x J x 3 coordinates in meters; frames at index >= valid_frames are zero padding"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coords: np.ndarray = Field(..., description="Coordinates, float64, shape [T][M][J][3]")
    valid_frames: int = Field(..., ge=0, description="Length before zero padding")

    @field_validator("coords", mode="before")
    @classmethod
    def _as_float_array(cls, value) -> np.ndarray:
        array = np.array(value, dtype=np.float64)
        if array.ndim != 4 or array.shape[-1] != 3:
            raise ValueError(f"coords must have shape [T][M][J][3], got {array.shape}")
        if min(array.shape[:3]) < 1:
            raise ValueError(f"coords has an empty axis: {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("coords contain non-finite values")
        array.flags.writeable = False
        return array

    @model_validator(mode="after")
    def _padding_is_zero(self) -> "SkeletonSequence":
        if self.valid_frames > self.T:
            raise ValueError(f"valid_frames {self.valid_frames} exceeds T={self.T}")
        if np.any(self.coords[self.valid_frames:] != 0.0):
            raise ValueError("frames past valid_frames must be zero")
        return self

    @property
    def T(self) -> int:
        return self.coords.shape[0]

    @property
    def M(self) -> int:
        return self.coords.shape[1]

    @property
    def J(self) -> int:
        return self.coords.shape[2]

    def with_coords(self, coords: np.ndarray) -> "SkeletonSequence":
        """Same valid length, new coordinates"""
        return SkeletonSequence(coords=coords, valid_frames=self.valid_frames)

    def matches(self, shape: DataShape) -> bool:
        return (self.T, self.M, self.J) == (shape.T, shape.M, shape.J)


class LabeledDataset(BaseModel):
    """Immutable collection of labeled sequences sharing one DataShape"""
    model_config = ConfigDict(frozen=True)

    sequences: List[SkeletonSequence] = Field(..., description="Sequences in file order")
    labels: List[int] = Field(..., description="Class id per sequence")
    shape: DataShape = Field(..., description="Common tensor layout")

    @model_validator(mode="after")
    def _consistent(self) -> "LabeledDataset":
        if len(self.sequences) != len(self.labels):
            raise ValueError(f"{len(self.sequences)} sequences but {len(self.labels)} labels")
        if not self.sequences:
            raise ValueError("dataset must contain at least one sequence")
        for index, (seq, label) in enumerate(zip(self.sequences, self.labels)):
            if not 0 <= label < self.shape.classes:
                raise ValueError(f"sequence {index}: label {label} outside [0, {self.shape.classes})")
            if not seq.matches(self.shape):
                raise ValueError(f"sequence {index}: shape {seq.coords.shape} does not match {self.shape}")
        return self

    def __len__(self) -> int:
        return len(self.sequences)

    def stacked(self) -> np.ndarray:
        """All coordinates as one [N][T][M][J][3] array"""
        return np.stack([seq.coords for seq in self.sequences])

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(
            sequences=[self.sequences[i] for i in indices],
            labels=[self.labels[i] for i in indices],
            shape=self.shape,
        )

    def class_counts(self) -> List[int]:
        return np.bincount(self.label_array(), minlength=self.shape.classes).tolist()


class SyntheticSpec(BaseModel):
    """Parameters of the deterministic synthetic motion generator"""
    class_count: int = Field(4, ge=2, description="Number of motion programs")
    sequences_per_class: int = Field(100, ge=1, description="Sequences generated per class")
    shape: DataShape = Field(..., description="Layout of generated sequences")
    noise_std: float = Field(0.02, ge=0.0, description="Additive coordinate noise std (meters)")
    seed: int = Field(0, description="Generator seed")

    @model_validator(mode="before")
    @classmethod
    def _default_shape(cls, data):
        # desk-scale layout unless given; class count follows class_count
        if isinstance(data, dict) and data.get("shape") is None:
            data = dict(data)
            data["shape"] = {"T": 40, "M": 1, "J": 15, "center_joint": 0,
                             "classes": data.get("class_count", 4)}
        return data

    @model_validator(mode="after")
    def _classes_match(self) -> "SyntheticSpec":
        if self.shape.classes != self.class_count:
            raise ValueError(
                f"shape.classes={self.shape.classes} must equal class_count={self.class_count}"
            )
        # each class needs at least one movable joint of its own
        if self.class_count > self.shape.J - 1:
            raise ValueError(
                f"class_count={self.class_count} needs at least {self.class_count + 1} joints, "
                f"layout has J={self.shape.J}"
            )
        return self
