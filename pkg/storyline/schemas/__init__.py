"""
Pydantic schemas for configuration, manifests and reports.
"""

from storyline.schemas.config import (
    RunConfig,
    SyntheticSpec,
    TrainConfig,
)

from storyline.schemas.manifest import (
    Manifest,
    ManifestAlbum,
    ManifestItem,
)

from storyline.schemas.report import (
    EpochRecord,
    EvalReport,
    PredictionInstance,
    StorylineMetrics,
    TrainingHistory,
)

__all__ = [
    # Config
    "RunConfig",
    "SyntheticSpec",
    "TrainConfig",
    # Manifest
    "Manifest",
    "ManifestAlbum",
    "ManifestItem",
    # Reports
    "EpochRecord",
    "EvalReport",
    "PredictionInstance",
    "StorylineMetrics",
    "TrainingHistory",
]
