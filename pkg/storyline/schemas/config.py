"""
Configuration schemas: optimizer settings, synthetic generator settings and the
flat run configuration consumed by every command.
"""

import logging
import os
from typing import Any, Dict, List, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from storyline.exceptions import InputValidationError
from storyline.models.story import StoryMode, StoryPrior, StoryRanking

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Optimizer and schedule settings for BPTT training."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(0.05, gt=0, description="Starting learning rate")
    momentum: float = Field(0.9, ge=0, lt=1, description="Momentum coefficient")
    weight_decay: float = Field(1e-7, ge=0, description="L2 weight decay (lambda)")
    hidden_size: int = Field(50, ge=1, description="Hidden recurrent layer size H")
    grad_clip: float = Field(5.0, gt=0, description="Elementwise gradient clamp")
    plateau_patience: int = Field(3, ge=1, description="Epochs without improvement before decay")
    lr_decay_factor: float = Field(0.5, gt=0, lt=1, description="Learning-rate decay on plateau")
    min_learning_rate: float = Field(1e-5, gt=0, description="Training stops below this rate")
    max_epochs: int = Field(20, ge=0, description="Maximum number of EM epochs")
    validation_samples: int = Field(25, ge=1, description="Best-of-K samples for the validation score")
    estep_proposals: int = Field(
        10, ge=1, description="Sequential draws resampled into one posterior draw per E-step (1 = plain sequential)"
    )
    seed: int = Field(0, description="Seed for initialization, shuffling and sampling")


class SyntheticSpec(BaseModel):
    """Parameters of the planted-storyline generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    concept: str = Field("synthetic", description="Concept name written to the manifest")
    num_states: int = Field(10, ge=1, description="Number of latent storyline states L")
    prototype_noise: float = Field(0.0, ge=0, description="Per-album perturbation of state prototypes")
    emission_noise: float = Field(0.1, ge=0, description="Gaussian noise added to each emitted row")
    repeats_min: int = Field(5, ge=1, description="Minimum repetitions per state")
    repeats_max: int = Field(20, ge=1, description="Maximum repetitions per state")
    distractor_prob: float = Field(0.2, ge=0, lt=1, description="Probability of a distractor slot")
    num_albums: int = Field(200, ge=1, description="Number of albums to generate")
    dimension: int = Field(32, ge=1, description="Feature dimension D")
    seed: int = Field(0, description="Generator seed")

    @model_validator(mode="after")
    def check_repeats(self):
        if self.repeats_min > self.repeats_max:
            raise ValueError(
                f"repeats_min ({self.repeats_min}) must not exceed repeats_max ({self.repeats_max})"
            )
        return self


class RunConfig(BaseModel):
    """
    Flat configuration for one command invocation.

    Loaded from a ``key=value`` file and overridden by command-line flags; unknown keys
    are rejected. The validated config is echoed into every output file.
    """

    model_config = ConfigDict(extra="forbid")

    seed: int = 0

    # training
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-7
    hidden_size: int = 50
    grad_clip: float = 5.0
    plateau_patience: int = 3
    lr_decay_factor: float = 0.5
    min_learning_rate: float = 1e-5
    max_epochs: int = 20
    validation_samples: int = 25
    estep_proposals: int = 10
    split_ratio: float = Field(0.9, gt=0, lt=1)
    normalize: bool = False

    # synthetic generator
    concept: str = "synthetic"
    num_states: int = 10
    prototype_noise: float = 0.0
    emission_noise: float = 0.1
    repeats_min: int = 5
    repeats_max: int = 20
    distractor_prob: float = 0.2
    num_albums: int = 200
    dimension: int = 32

    # model and inference
    n: int = Field(10, ge=2, description="Storyline length N")
    mode: StoryMode = StoryMode.SKIP
    prior: StoryPrior = StoryPrior.SUBSET
    samples: int = Field(500, ge=1)
    rank_by: StoryRanking = StoryRanking.GAIN
    threads: int = Field(1, ge=1)

    # evaluation
    method: Literal["srnn", "nn", "fi", "random", "cluster_rnn"] = "srnn"
    horizon: Literal["long", "short"] = "long"
    summary_length: Optional[int] = Field(None, ge=2)
    n_values: List[int] = Field(default_factory=lambda: [5, 10, 20])
    cluster_k: int = Field(100, ge=1)
    kmeans_iters: int = Field(100, ge=1)
    top_m: int = Field(10, ge=1)
    compare: List[str] = Field(default_factory=list, description="Extra model files evaluated alongside --model")

    # paths
    data: Optional[str] = None
    model: Optional[str] = None
    out: str = "out"
    truth: Optional[str] = None
    stories: Optional[str] = None
    album: Optional[str] = None

    @field_validator("n_values", "compare", mode="before")
    @classmethod
    def split_lists(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("data", "model", "truth", "stories", "album", mode="before")
    @classmethod
    def empty_as_none(cls, value):
        if isinstance(value, str) and not value.strip():
            return None
        return value

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in TrainConfig.model_fields})

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**{name: getattr(self, name) for name in SyntheticSpec.model_fields})

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_sources(cls, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Build a validated config from an optional key-value file plus flag overrides.

        Raises:
            InputValidationError: unknown keys or invalid values, naming the field
        """
        values: Dict[str, Any] = {}
        if config_path:
            if not os.path.isfile(config_path):
                raise InputValidationError(f"Config file not found: {config_path}")
            raw = dotenv_values(config_path)
            for key, value in raw.items():
                if value is None:
                    continue
                values[key.strip().lower().replace("-", "_")] = value
            logger.info(f"Loaded {len(values)} config keys from {config_path}")

        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value

        try:
            config = cls(**values)
            # Nested models carry the range checks for training and generator fields
            config.train_config()
            config.synthetic_spec()
            return config
        except ValidationError as e:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
            )
            raise InputValidationError(f"Invalid configuration: {problems}")
