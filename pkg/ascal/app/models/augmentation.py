import math
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

AXES = ("X", "Y", "Z")
MAIN_ANGLE_MAX = math.pi / 6
MINOR_ANGLE_MAX = math.pi / 180
BLUR_TAPS = 15
BLUR_SIGMA_RANGE = (0.1, 2.0)
NOISE_STD = 0.05
MASK_JOINT_RANGE = (5, 15)
MASK_FRAME_RANGE = (50, 100)


def rotation_x(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(beta: float) -> np.ndarray:
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(gamma: float) -> np.ndarray:
    c, s = math.cos(gamma), math.sin(gamma)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class RotationSample(BaseModel):
    """Euler angles about X, Y, Z; the main axis gets the large angle"""
    main_axis: Literal["X", "Y", "Z"] = Field(..., description="Axis with angle in [0, pi/6]")
    alpha: float = Field(..., description="Angle about X (radians)")
    beta: float = Field(..., description="Angle about Y (radians)")
    gamma: float = Field(..., description="Angle about Z (radians)")

    def angles(self) -> List[float]:
        return [self.alpha, self.beta, self.gamma]

    @model_validator(mode="after")
    def _ranges(self) -> "RotationSample":
        main = AXES.index(self.main_axis)
        for index, angle in enumerate(self.angles()):
            limit = MAIN_ANGLE_MAX if index == main else MINOR_ANGLE_MAX
            if not 0.0 <= angle <= limit:
                raise ValueError(f"angle about {AXES[index]} = {angle} outside [0, {limit}]")
        return self

    @property
    def matrix(self) -> np.ndarray:
        """R = R_Z(gamma) R_Y(beta) R_X(alpha), acting on column vectors"""
        return rotation_z(self.gamma) @ rotation_y(self.beta) @ rotation_x(self.alpha)


class ShearSample(BaseModel):
    """Shear factors s_A^B in [-1, 1]; s_X^Y sits at row X, column Y"""
    xy: float = Field(0.0, ge=-1.0, le=1.0)
    xz: float = Field(0.0, ge=-1.0, le=1.0)
    yx: float = Field(0.0, ge=-1.0, le=1.0)
    yz: float = Field(0.0, ge=-1.0, le=1.0)
    zx: float = Field(0.0, ge=-1.0, le=1.0)
    zy: float = Field(0.0, ge=-1.0, le=1.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [1.0, self.xy, self.xz],
            [self.yx, 1.0, self.yz],
            [self.zx, self.zy, 1.0],
        ])


class BlurKernel(BaseModel):
    """15-tap temporal Gaussian, G(t) = exp(-t^2 / (2 sigma^2)) for t in -7..7"""
    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., ge=BLUR_SIGMA_RANGE[0], le=BLUR_SIGMA_RANGE[1])

    @property
    def offsets(self) -> np.ndarray:
        half = BLUR_TAPS // 2
        return np.arange(-half, half + 1, dtype=np.float64)

    @property
    def raw_weights(self) -> np.ndarray:
        return np.exp(-self.offsets ** 2 / (2.0 * self.sigma ** 2))

    @property
    def weights(self) -> np.ndarray:
        raw = self.raw_weights
        return raw / raw.sum()


class MaskSample(BaseModel):
    """Joint mask (joints x frames) or channel mask (one axis)"""
    joints: List[int] = Field(default_factory=list, description="Masked joint indices")
    frames: List[int] = Field(default_factory=list, description="Masked frame indices")
    axis: Literal["X", "Y", "Z", None] = Field(None, description="Masked coordinate axis")

    @field_validator("joints", "frames")
    @classmethod
    def _distinct(cls, value: List[int]) -> List[int]:
        if len(set(value)) != len(value):
            raise ValueError("mask indices must be drawn without replacement")
        return value
