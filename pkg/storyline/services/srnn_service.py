# Skipping RNN: latent story sampling and stochastic-EM training
import concurrent.futures
import itertools
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp
from sklearn.cluster import kmeans_plusplus

from storyline.exceptions import (
    AlbumTooShortError,
    CombinatorialLimitError,
    InfeasibleRangeError,
    InputValidationError,
    InsufficientDataError,
)
from storyline.models.album import Album, Dataset
from storyline.models.rnn import MomentumState
from storyline.models.story import SrnnModel, StoryMode, StoryPrior, StoryRanking, StorySample
from storyline.schemas.config import TrainConfig
from storyline.schemas.report import EpochRecord, TrainingHistory
from storyline.services.numerics import RngStream, sample_categorical, stable_log_softmax, stable_softmax
from storyline.services.rnn_core import (
    LearningRateSchedule,
    check_story_indices,
    forward_step,
    loss_and_grads,
    sequence_nll,
    sgd_update,
    story_sequence,
)

logger = logging.getLogger(__name__)

MAX_ENUMERATED_STORIES = 100_000

# Child stream ids used by train()
_DIVERSE_STREAM = 0
_VALIDATION_STREAM = 1
_EPOCH_STREAM = 2
_SHUFFLE_STREAM = 3


class StoryDraw(NamedTuple):
    """One sequential draw of skip indices with the quantities needed to rank or reweight it."""

    indices: Tuple[int, ...]
    # log P(x_z | z; M)
    loglik: float
    # loglik minus the log-likelihood of a uniform guess over the same future images
    gain: float
    # log of P(z | x; M) / q(z) up to a per-album constant, q being the sequential proposal
    log_weight: float


def feasible_range(current: int, picks_made: int, story_length: int, length: int) -> Tuple[int, int]:
    """
    Inclusive 0-based range for the next pick so that the story can still be completed.

    Args:
        current: index of the latest pick z_n
        picks_made: n, the number of indices chosen so far (1 <= n < N)
        story_length: N
        length: album length T

    Raises:
        InfeasibleRangeError: if no index can follow ``current``
    """
    if not 1 <= picks_made < story_length:
        raise InputValidationError(f"picks_made must be in [1, {story_length}), got {picks_made}")
    if not 0 <= current < length:
        raise InputValidationError(f"Index {current} out of bounds for album of length {length}")
    lo = current + 1
    hi = length - story_length + picks_made
    if lo > hi:
        raise InfeasibleRangeError(
            f"No feasible next index after {current} with {story_length - picks_made} picks left (T={length})"
        )
    return lo, hi


def prior_log_weights(
    lo: int, hi: int, picks_left: int, length: int, prior: StoryPrior = StoryPrior.SUBSET
) -> np.ndarray:
    """
    Unnormalized log prior of each candidate in [lo, hi].

    Under the subset prior every ordered subset of size N is equally likely, so a
    candidate j is weighted by the number of ways to place the ``picks_left`` remaining
    picks after it, C(T - 1 - j, picks_left). The sequential prior is flat over the window.
    """
    if prior == StoryPrior.SEQUENTIAL:
        return np.zeros(hi - lo + 1)
    after = length - 1 - np.arange(lo, hi + 1, dtype=np.float64)
    return gammaln(after + 1) - gammaln(picks_left + 1) - gammaln(after - picks_left + 1)


def story_log_prior(z: Sequence[int], length: int, prior: StoryPrior = StoryPrior.SUBSET) -> float:
    """
    Log-probability of z: -log C(T, N) under the subset prior, or the product of
    1 / window size over the picks under the sequential prior.
    """
    z = check_story_indices(z, length)
    story_length = len(z)
    if prior == StoryPrior.SUBSET:
        return -math.log(math.comb(length, story_length))
    logp = -math.log(length - story_length + 1)
    for picks_made, current in enumerate(z[:-1], start=1):
        logp -= math.log(length - story_length + picks_made - current)
    return logp


def _require_length(album: Album, story_length: int):
    if album.length < story_length:
        raise AlbumTooShortError(
            f"Album {album.album_id} has {album.length} images, fewer than the story length {story_length}"
        )


def draw_story(model: SrnnModel, album: Album, rng: RngStream) -> StoryDraw:
    """
    Sequentially sample z from the model term times the model's prior.

    z_1 follows the prior marginal; each later pick j in the feasible window is drawn
    with probability proportional to P(x_j | prefix; M) P(z_{n+1} = j | z_n), carrying
    the hidden state along the sampled path. With a zero-weight model the draw is a
    draw from the prior.

    Raises:
        AlbumTooShortError: if T < N
    """
    _require_length(album, model.story_length)
    features = album.features
    story_length, length = model.story_length, album.length
    params, prior = model.params, model.prior

    first = prior_log_weights(0, length - story_length, story_length - 1, length, prior)
    z = [sample_categorical(stable_softmax(first), rng)]
    h = np.zeros(params.hidden_size)
    loglik = gain = log_weight = 0.0
    for picks_made in range(1, story_length):
        current = z[-1]
        step = forward_step(params, features[current], h)
        h = step.h
        log_probs = stable_log_softmax(features[current + 1:] @ step.y)
        lo, hi = feasible_range(current, picks_made, story_length, length)
        window = log_probs[lo - current - 1:hi - current]
        log_prior = stable_log_softmax(prior_log_weights(lo, hi, story_length - picks_made - 1, length, prior))
        joint = window + log_prior
        choice = lo + sample_categorical(stable_softmax(joint), rng)

        picked = float(log_probs[choice - current - 1])
        loglik += picked
        gain += picked + math.log(log_probs.size)
        log_weight += float(logsumexp(joint))
        z.append(choice)
    return StoryDraw(tuple(z), loglik, gain, log_weight)


def estep_sample_z(model: SrnnModel, album: Album, rng: RngStream) -> Tuple[int, ...]:
    """
    Draw skip indices one pick at a time (see ``draw_story``).

    Raises:
        AlbumTooShortError: if T < N
    """
    return draw_story(model, album, rng).indices


def posterior_sample_z(model: SrnnModel, album: Album, rng: RngStream, proposals: int) -> Tuple[int, ...]:
    """
    Draw skip indices from P(z | x; M) by importance resampling of sequential draws.

    The sequential sampler normalizes the model term inside each window and so ignores
    how much probability the rest of the story can still collect. ``proposals`` draws
    are reweighted by the ratio between the posterior and the sequential proposal and
    one of them is kept; a single proposal is the plain sequential sample.

    Raises:
        InputValidationError: if ``proposals`` < 1
        AlbumTooShortError: if T < N
    """
    if proposals < 1:
        raise InputValidationError(f"Proposal count must be positive, got {proposals}")
    draws = [draw_story(model, album, rng) for _ in range(proposals)]
    if proposals == 1:
        return draws[0].indices
    weights = stable_softmax(np.array([draw.log_weight for draw in draws]))
    return draws[sample_categorical(weights, rng)].indices


def sample_storylines(
    model: SrnnModel,
    album: Album,
    count: int,
    rng: RngStream,
    rank_by: StoryRanking = StoryRanking.GAIN,
) -> StorySample:
    """
    Best of ``count`` sampled stories.

    Stories are ranked by their gain over a uniform guess (see ``story_gain``), or by raw
    log-likelihood with ``rank_by=loglik``. Ties are broken by the lexicographically
    smallest index tuple. Draws consume the stream sequentially, so the first k draws
    of a larger count are the draws of count=k.
    """
    if count < 1:
        raise InputValidationError(f"Sample count must be positive, got {count}")
    _require_length(album, model.story_length)

    def key(draw: StoryDraw) -> float:
        return draw.gain if rank_by == StoryRanking.GAIN else draw.loglik

    best: Optional[StoryDraw] = None
    for _ in range(count):
        draw = draw_story(model, album, rng)
        if best is None or key(draw) > key(best) or (key(draw) == key(best) and draw.indices < best.indices):
            best = draw
    return StorySample(album_id=album.album_id, indices=best.indices, loglik=best.loglik, score=key(best))


def sample_dataset_storylines(
    model: SrnnModel,
    ds: Dataset,
    count: int,
    rng: RngStream,
    threads: int = 1,
    rank_by: StoryRanking = StoryRanking.GAIN,
) -> List[StorySample]:
    """
    Best-of-count story for every album with T >= N.

    Album i always uses the stream ``rng.child(i)``, so results do not depend on
    ``threads``; output keeps dataset order.
    """
    jobs = []
    for index, album in enumerate(ds.albums):
        if album.length < model.story_length:
            logger.warning(f"Skipping album {album.album_id}: {album.length} images < N={model.story_length}")
            continue
        jobs.append((album, rng.child(index)))

    def run(job):
        album, stream = job
        return sample_storylines(model, album, count, stream, rank_by)

    if threads <= 1:
        return [run(job) for job in jobs]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def story_loglik(model: SrnnModel, album: Album, z: Sequence[int]) -> float:
    return -sequence_nll(model.params, album, z)


def story_gain(model: SrnnModel, album: Album, z: Sequence[int]) -> float:
    """Story log-likelihood relative to a uniform guess over each step's future images."""
    z = check_story_indices(z, album.length)
    return story_loglik(model, album, z) + sum(math.log(album.length - current - 1) for current in z[:-1])


def marginal_loglik_bruteforce(model: SrnnModel, album: Album, story_length: Optional[int] = None) -> float:
    """
    log sum_z P(x_z | z; M) P(z) by exhaustive enumeration of ordered subsets.

    Raises:
        CombinatorialLimitError: if C(T, N) exceeds 100000
    """
    story_length = story_length or model.story_length
    _require_length(album, story_length)
    total = math.comb(album.length, story_length)
    if total > MAX_ENUMERATED_STORIES:
        raise CombinatorialLimitError(
            f"C({album.length}, {story_length}) = {total} subsets exceeds {MAX_ENUMERATED_STORIES}"
        )
    terms = [
        story_loglik(model, album, z) + story_log_prior(z, album.length, model.prior)
        for z in itertools.combinations(range(album.length), story_length)
    ]
    return float(logsumexp(terms))


def diverse_subset(album: Album, k: int, rng: RngStream) -> Tuple[int, ...]:
    """
    k-means++ seeds of the album's features, as sorted image indices.

    Duplicate seeds (repeated feature rows) are replaced by the unused images farthest
    from the chosen ones.
    """
    if album.length < k:
        raise AlbumTooShortError(f"Album {album.album_id} has {album.length} images, fewer than k={k}")
    if k == album.length:
        return tuple(range(album.length))

    _, seeds = kmeans_plusplus(album.features, n_clusters=k, random_state=rng.seed_int())
    chosen = list(dict.fromkeys(int(i) for i in seeds))
    while len(chosen) < k:
        unused = np.setdiff1d(np.arange(album.length), chosen)
        gaps = np.linalg.norm(album.features[unused, None, :] - album.features[None, chosen, :], axis=2).min(axis=1)
        chosen.append(int(unused[int(np.argmax(gaps))]))
    return tuple(sorted(chosen))


def validation_score(model: SrnnModel, ds: Dataset, rng: RngStream, samples: int) -> Optional[float]:
    """Mean best-of-``samples`` story gain over albums with T >= N; None if there are none."""
    scores = [
        sample_storylines(model, album, samples, rng.child(index)).score
        for index, album in enumerate(ds.albums)
        if album.length >= model.story_length
    ]
    if not scores:
        return None
    return float(np.mean(scores))


def training_story(
    model: SrnnModel,
    album: Album,
    rng: RngStream,
    fixed_subsets: Dict[str, Tuple[int, ...]],
    proposals: int = 1,
) -> Tuple[int, ...]:
    """
    The story an M-step trains on: a posterior draw for the skipping variants, the first
    N images without skipping, or the album's fixed subset for the diverse variant.
    """
    if model.mode in (StoryMode.SKIP, StoryMode.SHUFFLED):
        return posterior_sample_z(model, album, rng, proposals)
    if model.mode == StoryMode.NOSKIP:
        return tuple(range(model.story_length))
    return fixed_subsets[album.album_id]


def shuffle_albums(albums: Sequence[Album], rng: RngStream) -> List[Album]:
    """Albums with their images in a seeded random order (album i uses ``rng.child(i)``)."""
    return [album.permuted(rng.child(index).permutation(album.length)) for index, album in enumerate(albums)]


def train(
    model: SrnnModel,
    train_ds: Dataset,
    val_ds: Dataset,
    cfg: TrainConfig,
    rng: RngStream,
) -> Tuple[SrnnModel, TrainingHistory]:
    """
    Stochastic EM: per epoch, for every album in a seeded shuffled order, draw one story
    (E-step), then take one BPTT momentum step on it (M-step).

    Args:
        model: initial model; its mode selects skip sampling, prefix windows, D-RNN subsets
            or skip sampling on albums whose image order is discarded
        train_ds: training albums (albums shorter than N are skipped)
        val_ds: validation albums for the learning-rate schedule
        cfg: optimizer settings
        rng: stream for shuffling, sampling and validation

    Returns:
        Tuple of the trained model and its per-epoch history

    Raises:
        InsufficientDataError: if no training album has at least N images
    """
    story_length = model.story_length
    usable = [album for album in train_ds.albums if album.length >= story_length]
    history = TrainingHistory(skipped_albums=len(train_ds.albums) - len(usable))
    for album in train_ds.albums:
        if album.length < story_length:
            logger.warning(f"Skipping training album {album.album_id}: {album.length} images < N={story_length}")
    if not usable:
        raise InsufficientDataError(f"No training album has at least N={story_length} images")
    if model.mode == StoryMode.SHUFFLED:
        usable = shuffle_albums(usable, rng.child(_SHUFFLE_STREAM))

    fixed_subsets: Dict[str, Tuple[int, ...]] = {}
    if model.mode == StoryMode.DIVERSE:
        diverse_rng = rng.child(_DIVERSE_STREAM)
        fixed_subsets = {
            album.album_id: diverse_subset(album, story_length, diverse_rng.child(index))
            for index, album in enumerate(usable)
        }

    schedule = LearningRateSchedule(cfg)
    momentum = MomentumState.zeros_like(model.params)

    def score(current: SrnnModel) -> Optional[float]:
        return validation_score(current, val_ds, rng.child(_VALIDATION_STREAM), cfg.validation_samples)

    initial = score(model) if cfg.max_epochs > 0 else None
    history.epochs.append(EpochRecord(epoch=0, validation_score=initial, learning_rate=schedule.learning_rate))
    if initial is not None:
        schedule.observe(initial)

    logger.info(
        f"Training {model.mode.value} model on {len(usable)} albums (N={story_length}, "
        f"H={model.params.hidden_size}, epochs={cfg.max_epochs}, proposals={cfg.estep_proposals})"
    )
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_rng = rng.child(_EPOCH_STREAM).child(epoch)
        learning_rate = schedule.learning_rate
        losses = []
        for position in epoch_rng.permutation(len(usable)):
            album = usable[int(position)]
            z = training_story(model, album, epoch_rng, fixed_subsets, cfg.estep_proposals)
            nll, grads = loss_and_grads(model.params, *story_sequence(album.features, z))
            params, momentum = sgd_update(model.params, grads, cfg, momentum, learning_rate=learning_rate)
            model = model.with_params(params)
            losses.append(nll)

        train_nll = float(np.mean(losses))
        val = score(model)
        history.epochs.append(
            EpochRecord(epoch=epoch, train_nll=train_nll, validation_score=val, learning_rate=learning_rate)
        )
        logger.info(f"Epoch {epoch}: train nll {train_nll:.4f}, validation {val}, lr {learning_rate:.3g}")

        schedule.observe(val if val is not None else -train_nll)
        if schedule.exhausted:
            logger.info(f"Learning rate fell below {cfg.min_learning_rate}; stopping after epoch {epoch}")
            history.stopped_early = True
            break

    return model, history
