# Album, dataset and planted-truth models
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from storyline.exceptions import DimensionMismatchError, InputValidationError


@dataclass(frozen=True)
class Album:
    """A timestamp-ordered photo stream; one feature row per image."""

    album_id: str
    image_ids: Tuple[str, ...]
    timestamps: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise InputValidationError(f"Album {self.album_id} must contain at least one feature row")
        count = self.features.shape[0]
        if len(self.image_ids) != count or self.timestamps.shape[0] != count:
            raise InputValidationError(
                f"Album {self.album_id}: {len(self.image_ids)} ids, {self.timestamps.shape[0]} "
                f"timestamps and {count} feature rows"
            )

    @property
    def length(self) -> int:
        return int(self.features.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    def with_features(self, features: np.ndarray) -> "Album":
        return Album(self.album_id, self.image_ids, self.timestamps, features)

    def permuted(self, order) -> "Album":
        """Images and features rearranged by ``order``; timestamps keep their slots."""
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.length)):
            raise InputValidationError(f"Order for album {self.album_id} is not a permutation of {self.length} images")
        return Album(self.album_id, tuple(self.image_ids[i] for i in order), self.timestamps, self.features[order])

    def to_dict(self):
        return {
            "album_id": self.album_id,
            "length": self.length,
            "dimension": self.dimension,
            "first_timestamp": int(self.timestamps[0]),
            "last_timestamp": int(self.timestamps[-1]),
        }


@dataclass(frozen=True)
class Dataset:
    """All albums of one concept, sharing a feature dimension."""

    concept: str
    albums: Tuple[Album, ...]

    def __post_init__(self):
        seen = set()
        dims = {album.dimension for album in self.albums}
        if len(dims) > 1:
            raise DimensionMismatchError(f"Albums of concept {self.concept} have dimensions {sorted(dims)}")
        for album in self.albums:
            if album.album_id in seen:
                raise InputValidationError(f"Duplicate album id {album.album_id}")
            seen.add(album.album_id)

    @property
    def dimension(self) -> int:
        return self.albums[0].dimension if self.albums else 0

    def __len__(self):
        return len(self.albums)

    def albums_by_id(self) -> Dict[str, Album]:
        return {album.album_id: album for album in self.albums}

    def stacked_features(self) -> np.ndarray:
        return np.vstack([album.features for album in self.albums])

    def to_dict(self):
        return {
            "concept": self.concept,
            "albums": len(self.albums),
            "dimension": self.dimension,
            "images": int(sum(album.length for album in self.albums)),
        }


@dataclass
class PlantedTruth:
    """
    Ground truth planted by the synthetic generator.

    ``labels[album_id][t]`` is the latent state of image t (1..L, 0 for distractors);
    ``summaries[album_id]`` holds one 0-based representative index per appearing state.
    """

    num_states: int
    labels: Dict[str, List[int]] = field(default_factory=dict)
    summaries: Dict[str, List[int]] = field(default_factory=dict)

    def summary(self, album_id: str, length: Optional[int] = None) -> List[int]:
        """The album summary, optionally thinned to ``length`` evenly spaced entries."""
        full = self.summaries[album_id]
        if length is None or length >= len(full):
            return list(full)
        positions = np.unique(np.round(np.linspace(0, len(full) - 1, length)).astype(int))
        return [full[p] for p in positions]

    def to_dict(self):
        return {
            "num_states": self.num_states,
            "albums": {
                album_id: {
                    "labels": list(self.labels[album_id]),
                    "summary": [i + 1 for i in self.summaries[album_id]],
                }
                for album_id in self.labels
            },
        }

    @classmethod
    def from_dict(cls, data) -> "PlantedTruth":
        truth = cls(num_states=int(data["num_states"]))
        for album_id, entry in data["albums"].items():
            truth.labels[album_id] = [int(label) for label in entry["labels"]]
            truth.summaries[album_id] = [int(i) - 1 for i in entry["summary"]]
        return truth
