# Planted-storyline concept generator
import logging
from typing import List, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from storyline.models.album import Album, Dataset, PlantedTruth
from storyline.schemas.config import SyntheticSpec
from storyline.services.numerics import RngStream, StreamId

logger = logging.getLogger(__name__)

BASE_TIMESTAMP = 1_400_000_000
ALBUM_SPACING_SECONDS = 7 * 24 * 3600
MAX_GAP_SECONDS = 900


def _unit(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=-1, keepdims=True)


def _medoid(features: np.ndarray, members: np.ndarray) -> int:
    """Member with the smallest total Euclidean distance to the others (lowest index on ties)."""
    block = features[members]
    totals = cdist(block, block).sum(axis=1)
    return int(members[int(np.argmin(totals))])


def gen_synthetic(spec: SyntheticSpec) -> Tuple[Dataset, PlantedTruth]:
    """
    Generate a concept whose albums share a planted latent storyline.

    Each album visits states 1..L in order, emitting a random number of noisy copies of
    the state prototype, with distractor rows interleaved before any emitted row with
    probability ``distractor_prob`` (i.i.d. per slot). The planted summary holds the
    medoid image of every state run.

    Args:
        spec: validated generator parameters

    Returns:
        Tuple of the dataset and its planted truth
    """
    rng = RngStream(spec.seed, StreamId.GENERATE)
    prototypes = _unit(rng.child(0).normal(1.0, size=(spec.num_states, spec.dimension)))

    albums: List[Album] = []
    truth = PlantedTruth(num_states=spec.num_states)

    for index in range(spec.num_albums):
        album_rng = rng.child(index + 1)
        album_id = f"album_{index:05d}"

        states = prototypes
        if spec.prototype_noise > 0:
            states = prototypes + album_rng.normal(spec.prototype_noise, size=prototypes.shape)

        rows: List[np.ndarray] = []
        labels: List[int] = []
        for state in range(spec.num_states):
            repeats = album_rng.integers(spec.repeats_min, spec.repeats_max)
            for _ in range(repeats):
                while spec.distractor_prob > 0 and album_rng.random() < spec.distractor_prob:
                    rows.append(_unit(album_rng.normal(1.0, size=spec.dimension)))
                    labels.append(0)
                row = states[state]
                if spec.emission_noise > 0:
                    row = row + album_rng.normal(spec.emission_noise, size=spec.dimension)
                rows.append(row)
                labels.append(state + 1)

        # Round through float32 so the in-memory album matches its SRNF file
        features = np.asarray(rows, dtype=np.float32).astype(np.float64)
        gaps = np.array([album_rng.integers(1, MAX_GAP_SECONDS) for _ in rows], dtype=np.int64)
        timestamps = BASE_TIMESTAMP + index * ALBUM_SPACING_SECONDS + np.cumsum(gaps)

        albums.append(
            Album(
                album_id=album_id,
                image_ids=tuple(f"{album_id}_img_{t:05d}" for t in range(len(rows))),
                timestamps=timestamps,
                features=features,
            )
        )

        label_array = np.asarray(labels)
        truth.labels[album_id] = labels
        truth.summaries[album_id] = [
            _medoid(features, np.flatnonzero(label_array == state))
            for state in range(1, spec.num_states + 1)
            if np.any(label_array == state)
        ]

    dataset = Dataset(concept=spec.concept, albums=tuple(albums))
    logger.info(
        f"Generated {spec.num_albums} albums ({sum(a.length for a in albums)} images, "
        f"L={spec.num_states}, D={spec.dimension})"
    )
    return dataset, truth
