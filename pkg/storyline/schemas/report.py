"""
Schemas for training history, prediction instances and evaluation reports.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=0, description="0 is the pre-training evaluation")
    train_nll: Optional[float] = Field(None, description="Mean per-album training NLL")
    validation_score: Optional[float] = Field(None, description="Mean best-of-K story log-likelihood")
    learning_rate: float


class TrainingHistory(BaseModel):
    epochs: List[EpochRecord] = Field(default_factory=list)
    skipped_albums: int = Field(0, description="Training albums shorter than N")
    stopped_early: bool = False


class PredictionInstance(BaseModel):
    """
    A 5-way forced choice: given one image, pick the true next image among candidates.

    Indices are 0-based album positions; ``candidates`` holds the true next image and
    the distractors in a shuffled order.
    """

    instance_id: int
    album_id: str
    given: int
    target: int
    distractors: Tuple[int, ...]
    candidates: Tuple[int, ...]
    horizon: Literal["long", "short"]


class StorylineMetrics(BaseModel):
    coverage: float = Field(..., ge=0, le=1)
    order_accuracy: float = Field(..., ge=0, le=1)


class EvalReport(BaseModel):
    """Result of one method on one task, with the config that produced it."""

    method: str
    task: str
    metrics: Dict[str, float]
    counts: Dict[str, int]
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: int = 0
