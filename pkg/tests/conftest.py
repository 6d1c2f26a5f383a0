"""
Pytest configuration and fixtures for storyline tests.

Every fixture is built from explicit seeds, so tests are deterministic and need no
files outside pytest's tmp_path.
"""
import math
import os
import sys

# Load .env BEFORE any storyline imports
from dotenv import load_dotenv
load_dotenv()

# Add parent directory to path for imports
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from typing import Dict, Tuple

import numpy as np
import pytest

from storyline.models.album import Album, Dataset, PlantedTruth
from storyline.models.rnn import RnnParams
from storyline.models.story import SrnnModel, StoryPrior
from storyline.schemas.config import SyntheticSpec, TrainConfig
from storyline.services.dataset_service import save_truth, write_dataset
from storyline.services.numerics import RngStream, stable_log_softmax
from storyline.services.rnn_core import forward_step, init_params
from storyline.services.srnn_service import feasible_range
from storyline.services.synthetic_generator import gen_synthetic


def make_album(features, album_id: str = "album_test") -> Album:
    """Album with sequential timestamps around the given feature rows."""
    features = np.asarray(features, dtype=np.float64)
    count = features.shape[0]
    return Album(
        album_id=album_id,
        image_ids=tuple(f"{album_id}_img_{t:05d}" for t in range(count)),
        timestamps=np.arange(count, dtype=np.int64) + 1_400_000_000,
        features=features,
    )


def random_album(length: int, dimension: int, seed: int, album_id: str = "album_test") -> Album:
    return make_album(RngStream(seed, 99).normal(1.0, size=(length, dimension)), album_id)


def random_model(dimension: int, hidden: int, story_length: int, seed: int, scale: float = 0.5) -> SrnnModel:
    """A model with weights large enough to give clearly non-uniform predictions."""
    rng = RngStream(seed, 98)
    params = RnnParams(
        w_in=rng.uniform(-scale, scale, size=(hidden, dimension)),
        w_rec=rng.uniform(-scale, scale, size=(hidden, hidden)),
        w_out=rng.uniform(-scale, scale, size=(dimension, hidden)),
    )
    return SrnnModel(params=params, story_length=story_length)


@pytest.fixture
def tiny_spec() -> SyntheticSpec:
    """Three-state concept with short albums."""
    return SyntheticSpec(
        num_states=3,
        repeats_min=2,
        repeats_max=3,
        distractor_prob=0.1,
        emission_noise=0.05,
        num_albums=8,
        dimension=8,
        seed=11,
    )


@pytest.fixture
def tiny_concept(tiny_spec) -> Tuple[Dataset, PlantedTruth]:
    return gen_synthetic(tiny_spec)


@pytest.fixture
def repetitive_concept() -> Tuple[Dataset, PlantedTruth]:
    """Ten states with long runs of near-duplicates, no distractors."""
    spec = SyntheticSpec(
        num_states=10,
        repeats_min=5,
        repeats_max=8,
        distractor_prob=0.0,
        emission_noise=0.05,
        num_albums=5,
        dimension=16,
        seed=5,
    )
    return gen_synthetic(spec)


@pytest.fixture
def tiny_model(tiny_concept) -> SrnnModel:
    ds, _ = tiny_concept
    return SrnnModel(params=init_params(ds.dimension, 6, RngStream(3)), story_length=3, concept=ds.concept)


@pytest.fixture
def fast_train_config() -> TrainConfig:
    return TrainConfig(hidden_size=6, max_epochs=2, validation_samples=3, seed=0)


@pytest.fixture
def dataset_dir(tmp_path, tiny_concept) -> Dict[str, str]:
    """The tiny concept written to disk: manifest, features and truth."""
    ds, truth = tiny_concept
    data_dir = tmp_path / "data"
    manifest = write_dataset(ds, str(data_dir))
    truth_path = str(data_dir / "truth.json")
    save_truth(truth, truth_path)
    return {"dir": str(data_dir), "manifest": manifest, "truth": truth_path}


def sequential_draw_logprob(model: SrnnModel, album: Album, z) -> float:
    """
    Log-probability that one sequential draw yields z, by direct unrolling.

    Under the subset prior z_1 follows C(T - 1 - z_1, N - 1) / C(T, N) and each later pick
    is a softmax over the feasible window of the model log-probability plus
    log C(T - 1 - j, picks left). The sequential prior drops the binomial terms.
    """
    length, story_length = album.length, len(z)
    params = model.params
    subset = model.prior == StoryPrior.SUBSET

    def log_count(j, left):
        return math.log(math.comb(length - 1 - j, left)) if subset else 0.0

    starts = [log_count(j, story_length - 1) for j in range(length - story_length + 1)]
    logp = stable_log_softmax(np.array(starts))[z[0]]
    h = np.zeros(params.hidden_size)
    for picks_made in range(1, story_length):
        current = z[picks_made - 1]
        step = forward_step(params, album.features[current], h)
        h = step.h
        log_probs = stable_log_softmax(album.features[current + 1:] @ step.y)
        lo, hi = feasible_range(current, picks_made, story_length, length)
        left = story_length - picks_made - 1
        joint = [log_probs[j - current - 1] + log_count(j, left) for j in range(lo, hi + 1)]
        logp += stable_log_softmax(np.array(joint))[z[picks_made] - lo]
    return float(logp)
