from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .skeleton import DataShape, SyntheticSpec


class Strategy(str, Enum):
    ROTATION = "rotation"
    SHEAR = "shear"
    REVERSE = "reverse"
    GAUSSIAN_NOISE = "noise"
    GAUSSIAN_BLUR = "blur"
    JOINT_MASK = "joint_mask"
    CHANNEL_MASK = "channel_mask"


STRATEGY_ALIASES = {
    "rotate": Strategy.ROTATION,
    "gn": Strategy.GAUSSIAN_NOISE,
    "gaussian_noise": Strategy.GAUSSIAN_NOISE,
    "gb": Strategy.GAUSSIAN_BLUR,
    "gaussian_blur": Strategy.GAUSSIAN_BLUR,
    "jm": Strategy.JOINT_MASK,
    "cm": Strategy.CHANNEL_MASK,
}


def parse_strategy(name: str) -> Strategy:
    """Resolve a strategy name or its abbreviation"""
    key = name.strip().lower().replace("-", "_")
    if key in STRATEGY_ALIASES:
        return STRATEGY_ALIASES[key]
    try:
        return Strategy(key)
    except ValueError:
        valid = sorted([s.value for s in Strategy] + list(STRATEGY_ALIASES))
        raise ValueError(f"unknown augmentation strategy '{name}' (expected one of {valid})")


class Paradigm(str, Enum):
    QUEUE = "queue"
    END_TO_END = "end_to_end"
    MEMORY_BANK = "memory_bank"


class HeadKind(str, Enum):
    NONE = "none"
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class RepresentationKind(str, Enum):
    QUERY_LAST = "h_q"      # final hidden state of the query encoder
    KEY_LAST = "h_k"        # final hidden state of the key encoder
    KEY = "k"               # pooled key encoder output
    CAE = "cae"
    CAE_PLUS = "cae_plus"


class QueueInit(str, Enum):
    EMPTY = "empty"
    RANDOM = "random"


class AugmentationPipeline(BaseModel):
    """Ordered augmentation strategies applied identically (but independently sampled) to query and key"""
    strategies: List[Strategy] = Field(
        default_factory=lambda: [Strategy.REVERSE, Strategy.SHEAR],
        description="Strategies applied in order",
    )
    identity: bool = Field(False, description="Explicit no-op pipeline")

    @field_validator("strategies", mode="before")
    @classmethod
    def _parse_names(cls, value):
        if isinstance(value, str):
            value = [part for part in value.split(",") if part.strip()]
        return [item if isinstance(item, Strategy) else parse_strategy(item) for item in value]

    @model_validator(mode="after")
    def _non_empty(self) -> "AugmentationPipeline":
        if not self.strategies and not self.identity:
            raise ValueError("augmentation pipeline is empty; use AugmentationPipeline.identity_pipeline()")
        if self.strategies and self.identity:
            raise ValueError("identity pipeline cannot list strategies")
        return self

    @classmethod
    def identity_pipeline(cls) -> "AugmentationPipeline":
        return cls(strategies=[], identity=True)

    @classmethod
    def parse(cls, text: str) -> "AugmentationPipeline":
        """Comma-separated names; 'identity' or 'none' gives the no-op pipeline"""
        if text.strip().lower() in ("", "identity", "none"):
            return cls.identity_pipeline()
        return cls(strategies=text)

    def label(self) -> str:
        return "identity" if self.identity else ",".join(s.value for s in self.strategies)


class EncoderConfig(BaseModel):
    hidden_size: int = Field(256, ge=1, description="LSTM hidden units H (= representation dim E)")
    layers: int = Field(2, ge=1, description="Stacked LSTM layers")
    head: HeadKind = Field(HeadKind.NONE, description="Projection head attached to both encoders")
    head_dim: int = Field(128, description="Projection output dimension")
    use_tap: bool = Field(True, description="Pool hidden states over time; otherwise use the last one")

    @field_validator("head_dim")
    @classmethod
    def _head_dim(cls, value: int) -> int:
        if value not in (64, 128, 256, 512):
            raise ValueError(f"head_dim must be one of 64, 128, 256, 512, got {value}")
        return value


class ContrastiveConfig(BaseModel):
    temperature: float = Field(0.06, gt=0.0, description="Softmax temperature tau")
    momentum: float = Field(0.999, ge=0.0, lt=1.0, description="Key encoder momentum m")
    queue_size: int = Field(16384, ge=1, description="Dictionary size K")
    batch_size: int = Field(32, ge=1, description="Mini-batch size n")
    paradigm: Paradigm = Field(Paradigm.QUEUE, description="Dictionary paradigm")
    normalize: bool = Field(False, description="L2-normalize q and k before dot products")
    queue_init: QueueInit = Field(QueueInit.EMPTY, description="Initial queue contents")
    bank_momentum: float = Field(0.5, ge=0.0, lt=1.0, description="Per-sample memory bank momentum")

    @model_validator(mode="after")
    def _batch_fits(self) -> "ContrastiveConfig":
        if self.paradigm == Paradigm.QUEUE and self.batch_size > self.queue_size:
            raise ValueError(f"batch_size {self.batch_size} exceeds queue_size {self.queue_size}")
        if self.paradigm == Paradigm.END_TO_END and self.batch_size < 2:
            raise ValueError("end-to-end paradigm needs batch_size >= 2 for in-batch negatives")
        return self


class PretrainConfig(BaseModel):
    epochs: int = Field(60, ge=1)
    lr: float = Field(0.01, gt=0.0, description="Initial learning rate")
    lr_milestones: List[int] = Field(default_factory=lambda: [30], description="Epochs where lr decays")
    lr_gamma: float = Field(0.1, gt=0.0, description="Decay factor at each milestone")
    sgd_momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(1e-4, ge=0.0, description="Applied to weights, not biases")
    clip_grad_norm: Optional[float] = Field(None, gt=0.0, description="Off unless set")
    checkpoint_every: Optional[int] = Field(None, ge=1, description="Steps between checkpoints")
    seed: int = Field(0)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    contrastive: ContrastiveConfig = Field(default_factory=ContrastiveConfig)
    augmentations: AugmentationPipeline = Field(default_factory=AugmentationPipeline)

    @field_validator("lr_milestones")
    @classmethod
    def _increasing(cls, value: List[int]) -> List[int]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("lr_milestones must be strictly increasing")
        return value

    @property
    def batch_size(self) -> int:
        return self.contrastive.batch_size


class EvalConfig(BaseModel):
    epochs: int = Field(90, ge=1)
    lr: float = Field(1.0, gt=0.0)
    lr_milestones: List[int] = Field(default_factory=lambda: [15, 35, 60, 75])
    lr_gamma: float = Field(0.5, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0, description="Nesterov momentum")
    weight_decay: float = Field(0.0, ge=0.0)
    batch_size: Optional[int] = Field(32, ge=1, description="None trains full-batch")
    representation: RepresentationKind = Field(RepresentationKind.CAE)
    seed: int = Field(0)

    @field_validator("lr_milestones")
    @classmethod
    def _increasing(cls, value: List[int]) -> List[int]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("lr_milestones must be strictly increasing")
        return value


class FinetuneConfig(BaseModel):
    """Semi-supervised phase 2: all parameters trained on the labeled subset"""
    fraction: float = Field(0.1, gt=0.0, le=1.0)
    epochs: int = Field(30, ge=1)
    lr: float = Field(0.001, gt=0.0)
    sgd_momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    batch_size: int = Field(32, ge=1)
    seed: int = Field(0)


# Benchmark defaults. "synthetic" is the desk-scale setup; small LSTMs there saturate
# under raw dot products at tau=0.06, so it compares unit vectors and clips gradients.
DATASET_PRESETS: Dict[str, Dict[str, Any]] = {
    "ntu60": {"T": 150, "M": 2, "J": 25, "queue_size": 16384, "layers": 2, "hidden_size": 256, "batch_size": 32},
    "ntu120": {"T": 150, "M": 2, "J": 25, "queue_size": 16384, "layers": 2, "hidden_size": 256, "batch_size": 32},
    "sbu": {"T": 40, "M": 2, "J": 15, "queue_size": 200, "layers": 1, "hidden_size": 256, "batch_size": 32},
    "uwa3d": {"T": 60, "M": 1, "J": 15, "queue_size": 500, "layers": 1, "hidden_size": 256, "batch_size": 32},
    "synthetic": {"T": 40, "M": 1, "J": 15, "queue_size": 256, "layers": 2, "hidden_size": 64, "batch_size": 16,
                  "normalize": True, "clip_grad_norm": 1.0},
}


class InputFile(BaseModel):
    """A file a run read, pinned by content"""
    path: str = Field(..., description="Path as given on the command line")
    sha256: str = Field(..., description="Hex digest of the file bytes")


class RunConfig(BaseModel):
    """Everything needed to reproduce one command invocation"""
    preset: Optional[str] = Field(None, description="Key of DATASET_PRESETS")
    seed: int = Field(0)
    workers: int = Field(1, ge=1, description="Cap on intra-op threads")
    truncate: bool = Field(False, description="Subsample sequences longer than the header T")
    synthetic: Optional[SyntheticSpec] = Field(None)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    inputs: Dict[str, InputFile] = Field(default_factory=dict, description="Data and checkpoint files, by flag")

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data):
        if not isinstance(data, dict) or not data.get("preset"):
            return data
        name = data["preset"]
        if name not in DATASET_PRESETS:
            raise ValueError(f"unknown preset '{name}' (expected one of {sorted(DATASET_PRESETS)})")
        preset = DATASET_PRESETS[name]
        data = deep_merge({
            "pretrain": {
                "clip_grad_norm": preset.get("clip_grad_norm"),
                "encoder": {"layers": preset["layers"], "hidden_size": preset["hidden_size"]},
                "contrastive": {"queue_size": preset["queue_size"], "batch_size": preset["batch_size"],
                                "normalize": preset.get("normalize", False)},
            },
        }, data)
        if name == "synthetic" and "synthetic" not in data:
            data["synthetic"] = {"shape": {"T": preset["T"], "M": preset["M"], "J": preset["J"],
                                           "center_joint": 0, "classes": 4}}
        return data

    @model_validator(mode="after")
    def _propagate_seed(self) -> "RunConfig":
        # one run seed drives every stage unless a section pins its own
        for section in (self.pretrain, self.evaluation, self.finetune):
            if "seed" not in section.model_fields_set:
                section.seed = self.seed
        return self


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively overlay override onto base, returning a new dict"""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def set_dotted(data: Dict[str, Any], path: str, value: Any) -> Dict[str, Any]:
    """Return a copy of a nested config dict with one dotted path replaced"""
    keys = path.split(".")
    override: Dict[str, Any] = {keys[-1]: value}
    for key in reversed(keys[:-1]):
        override = {key: override}
    return deep_merge(data, override)
