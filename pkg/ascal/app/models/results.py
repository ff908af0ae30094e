import csv
from pathlib import Path
from typing import ClassVar, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator


class LossRecord(BaseModel):
    epoch: int = Field(..., description="Zero-based epoch")
    step: int = Field(..., description="Global step counter")
    loss: float = Field(..., description="Mean batch loss")
    lr: float = Field(..., description="Learning rate used for the step")
    queue_fill: int = Field(..., description="Negatives available to the step")
    warmup: bool = Field(False, description="Dictionary not yet full")


class EpochSummary(BaseModel):
    epoch: int
    mean: float
    std: float
    steps: int


class LossLog(BaseModel):
    """Per-step pretraining losses in step order"""
    records: List[LossRecord] = Field(default_factory=list)

    CSV_FIELDS: ClassVar[Tuple[str, ...]] = ("epoch", "step", "loss", "lr", "queue_fill")

    def append(self, record: LossRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"step {record.step} does not advance past {self.records[-1].step}")
        self.records.append(record)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records], dtype=np.float64)

    def epoch_summaries(self) -> List[EpochSummary]:
        summaries = []
        for epoch in sorted({r.epoch for r in self.records}):
            values = np.array([r.loss for r in self.records if r.epoch == epoch])
            summaries.append(EpochSummary(epoch=epoch, mean=float(values.mean()),
                                          std=float(values.std()), steps=len(values)))
        return summaries

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.CSV_FIELDS)
            for r in self.records:
                writer.writerow([r.epoch, r.step, repr(r.loss), repr(r.lr), r.queue_fill])

    def write_epoch_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "mean", "std", "steps"])
            for s in self.epoch_summaries():
                writer.writerow([s.epoch, repr(s.mean), repr(s.std), s.steps])


class Metrics(BaseModel):
    """Classification quality on one split"""
    top1: float = Field(..., ge=0.0, le=1.0)
    top5: float = Field(..., ge=0.0, le=1.0, description="Top-min(5, c) accuracy")
    per_class: List[float] = Field(default_factory=list, description="Recall per class (nan if absent)")
    confusion: List[List[int]] = Field(default_factory=list, description="Rows true, columns predicted")
    samples: int = Field(0)

    @model_validator(mode="after")
    def _ordered(self) -> "Metrics":
        if self.top5 < self.top1:
            raise ValueError(f"top5 {self.top5} below top1 {self.top1}")
        return self

    def row(self) -> Dict[str, float]:
        return {"top1": self.top1, "top5": self.top5, "samples": self.samples}


class GradientCheckReport(BaseModel):
    checked: int
    max_relative_error: float
    worst_parameter: Optional[str] = None
    worst_index: Optional[int] = None
    analytic: Optional[float] = None
    numeric: Optional[float] = None
