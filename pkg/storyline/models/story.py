# S-RNN model and sampled storylines
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

from storyline.models.rnn import RnnParams


class StoryMode(str, Enum):
    """
    Training variant: full skipping, no skipping (S-RNN-), k-means++ subsets (D-RNN),
    or full skipping on albums whose image order was shuffled away.
    """

    SKIP = "skip"
    NOSKIP = "noskip"
    DIVERSE = "diverse"
    SHUFFLED = "shuffled"


class StoryPrior(str, Enum):
    """
    Prior over skip indices: every ordered subset equally likely, or the index-by-index
    prior that picks z_1 and each later index uniformly from its feasible window.
    """

    SUBSET = "subset"
    SEQUENTIAL = "sequential"


class StoryRanking(str, Enum):
    """Key for picking the best of K sampled stories."""

    GAIN = "gain"
    LOGLIK = "loglik"


@dataclass(frozen=True)
class SrnnModel:
    params: RnnParams
    story_length: int = 10
    mode: StoryMode = StoryMode.SKIP
    concept: str = ""
    prior: StoryPrior = StoryPrior.SUBSET

    def with_params(self, params: RnnParams) -> "SrnnModel":
        return SrnnModel(params, self.story_length, self.mode, self.concept, self.prior)

    def to_dict(self):
        return {
            "concept": self.concept,
            "story_length": self.story_length,
            "mode": self.mode.value,
            "prior": self.prior.value,
            "input_dim": self.params.input_dim,
            "hidden_size": self.params.hidden_size,
        }


@dataclass(frozen=True)
class StorySample:
    """
    A sampled storyline; ``indices`` are 0-based and strictly increasing.

    ``score`` is the value the story was ranked by (gain over a uniform guess or the
    log-likelihood); it falls back to the log-likelihood for files that predate it.
    """

    album_id: str
    indices: Tuple[int, ...]
    loglik: float
    score: Optional[float] = None

    def __post_init__(self):
        if self.score is None:
            object.__setattr__(self, "score", self.loglik)

    def to_dict(self):
        return {
            "album": self.album_id,
            "indices": [i + 1 for i in self.indices],
            "loglik": self.loglik,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data) -> "StorySample":
        return cls(
            album_id=str(data["album"]),
            indices=tuple(int(i) - 1 for i in data["indices"]),
            loglik=float(data["loglik"]),
            score=float(data["score"]) if data.get("score") is not None else None,
        )
