# Unsupervised comparison methods: sampling, K-Means, NN/FI and the cluster-sequence RNN
import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax
from sklearn.cluster import kmeans_plusplus

from storyline.exceptions import (
    CorruptFormatError,
    InputValidationError,
    InsufficientDataError,
)
from storyline.models.album import Album, Dataset
from storyline.models.rnn import MomentumState, RnnParams
from storyline.schemas.config import TrainConfig
from storyline.services.numerics import RngStream, sample_categorical, stable_softmax
from storyline.services.rnn_core import (
    LearningRateSchedule,
    forward_step,
    init_params,
    loss_and_grads,
    sgd_update,
)

logger = logging.getLogger(__name__)

MAX_CLUSTER_RESAMPLES = 10


@dataclass
class KMeansModel:
    """Cluster centers; points are assigned to the nearest center (Euclidean)."""

    centers: np.ndarray
    distortion_history: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return int(self.centers.shape[0])

    def assign(self, features: np.ndarray) -> np.ndarray:
        return np.argmin(cdist(features, self.centers, "sqeuclidean"), axis=1)

    def to_dict(self):
        return {
            "k": self.k,
            "centers": self.centers.tolist(),
            "distortion_history": list(self.distortion_history),
        }

    @classmethod
    def from_dict(cls, data) -> "KMeansModel":
        return cls(
            centers=np.asarray(data["centers"], dtype=np.float64),
            distortion_history=[float(d) for d in data.get("distortion_history", [])],
        )


def kmeans_save(model: KMeansModel, path: os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model.to_dict(), handle)


def kmeans_load(path: os.PathLike) -> KMeansModel:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return KMeansModel.from_dict(json.load(handle))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise CorruptFormatError(f"Cannot read K-Means model {path}: {e}")


def sample_uniform(pool: Sequence[int], k: int, rng: RngStream) -> List[int]:
    """k distinct indices uniformly without replacement, returned in temporal order."""
    pool = list(pool)
    if k < 1 or len(pool) < k:
        raise InputValidationError(f"Cannot sample {k} items from a pool of {len(pool)}")
    return sorted(int(i) for i in rng.choice_without_replacement(pool, k))


def kmeans_fit(features: np.ndarray, k: int, rng: RngStream, max_iters: int = 100) -> KMeansModel:
    """
    k-means++ seeding followed by Lloyd iterations until the assignment is stable.

    An emptied cluster is re-seeded at the point farthest from its current center.
    The distortion after every assignment step is kept in ``distortion_history``.

    Raises:
        InsufficientDataError: fewer points than clusters
    """
    features = np.asarray(features, dtype=np.float64)
    if k < 1 or features.shape[0] < k:
        raise InsufficientDataError(f"Cannot fit {k} clusters to {features.shape[0]} points")

    centers, _ = kmeans_plusplus(features, n_clusters=k, random_state=rng.seed_int())
    centers = centers.astype(np.float64)
    history: List[float] = []
    assignment = None

    for iteration in range(max_iters):
        distances = cdist(features, centers, "sqeuclidean")
        new_assignment = np.argmin(distances, axis=1)
        point_cost = distances[np.arange(features.shape[0]), new_assignment]
        history.append(float(point_cost.sum()))
        if assignment is not None and np.array_equal(assignment, new_assignment):
            break
        assignment = new_assignment

        for cluster in range(k):
            members = assignment == cluster
            if members.any():
                centers[cluster] = features[members].mean(axis=0)
            else:
                farthest = int(np.argmax(point_cost))
                centers[cluster] = features[farthest]
                point_cost[farthest] = 0.0
                logger.debug(f"Re-seeded empty cluster {cluster} at point {farthest}")

    logger.info(f"K-Means with K={k} finished after {len(history)} assignments, distortion {history[-1]:.4f}")
    return KMeansModel(centers=centers, distortion_history=history)


def kmeans_select(model: KMeansModel, features: np.ndarray) -> List[int]:
    """Index of the image closest to each center, de-duplicated and sorted."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise InputValidationError("Cannot select from an empty pool")
    nearest = np.argmin(cdist(model.centers, features, "sqeuclidean"), axis=1)
    return sorted({int(i) for i in nearest})


def local_kmeans_select(album: Album, k: int, rng: RngStream, max_iters: int = 100) -> List[int]:
    """Per-album K-Means with K = summary size, closest image per center."""
    model = kmeans_fit(album.features, k, rng, max_iters)
    return kmeans_select(model, album.features)


def _cosine_scores(query: np.ndarray, candidates) -> np.ndarray:
    candidates = np.asarray(candidates, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise InputValidationError("Need at least one candidate")
    query_norm = np.linalg.norm(query)
    candidate_norms = np.linalg.norm(candidates, axis=1)
    if query_norm == 0 or np.any(candidate_norms == 0):
        raise InputValidationError("Cosine similarity is undefined for zero vectors")
    return (candidates @ query) / (candidate_norms * query_norm)


def nn_predict(query: np.ndarray, candidates) -> int:
    """Candidate with the highest cosine similarity (lowest index on ties)."""
    return int(np.argmax(_cosine_scores(query, candidates)))


def fi_predict(query: np.ndarray, candidates) -> int:
    """Candidate with the lowest cosine similarity (lowest index on ties)."""
    return int(np.argmin(_cosine_scores(query, candidates)))


@dataclass
class ClusterRnnModel:
    """Language model over K-Means cluster ids (one-hot inputs, softmax over K)."""

    kmeans: KMeansModel
    params: RnnParams

    @property
    def k(self) -> int:
        return self.kmeans.k

    def next_cluster_probs(self, cluster_ids: Sequence[int]) -> np.ndarray:
        """Distribution over the next cluster after feeding ``cluster_ids`` from h_0."""
        eye = np.eye(self.k)
        h = np.zeros(self.params.hidden_size)
        y = np.zeros(self.k)
        for cluster in cluster_ids:
            step = forward_step(self.params, eye[cluster], h)
            h, y = step.h, step.y
        return stable_softmax(y)


def _cluster_sequence_loss(params: RnnParams, sequence: np.ndarray, k: int, compute_grads: bool = True):
    eye = np.eye(k)
    inputs = eye[sequence[:-1]]
    return loss_and_grads(params, inputs, [eye] * (len(sequence) - 1), list(sequence[1:]), compute_grads)


def cluster_rnn_train(train: Dataset, k: int, cfg: TrainConfig, rng: RngStream, max_iters: int = 100) -> ClusterRnnModel:
    """
    Quantize every album to its cluster-id sequence and train the RNN to predict the
    next cluster with cross-entropy, using the same optimizer stack as the S-RNN.
    """
    kmeans = kmeans_fit(train.stacked_features(), k, rng.child(0), max_iters)
    sequences = [kmeans.assign(album.features) for album in train.albums if album.length >= 2]
    if not sequences:
        raise InsufficientDataError("Cluster RNN needs albums with at least two images")

    params = init_params(k, cfg.hidden_size, rng.child(1))
    momentum = MomentumState.zeros_like(params)
    schedule = LearningRateSchedule(cfg)
    epoch_rng = rng.child(2)

    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for position in epoch_rng.permutation(len(sequences)):
            nll, grads = _cluster_sequence_loss(params, sequences[int(position)], k)
            params, momentum = sgd_update(params, grads, cfg, momentum, learning_rate=schedule.learning_rate)
            losses.append(nll / (len(sequences[int(position)]) - 1))
        mean_loss = float(np.mean(losses))
        logger.info(f"Cluster RNN epoch {epoch}: mean per-step nll {mean_loss:.4f}")
        schedule.observe(-mean_loss)
        if schedule.exhausted:
            break

    return ClusterRnnModel(kmeans=kmeans, params=params)


def cluster_rnn_perplexity(model: ClusterRnnModel, ds: Dataset) -> float:
    """Per-step perplexity of next-cluster prediction over all albums."""
    total_nll, steps = 0.0, 0
    for album in ds.albums:
        if album.length < 2:
            continue
        sequence = model.kmeans.assign(album.features)
        nll, _ = _cluster_sequence_loss(model.params, sequence, model.k, compute_grads=False)
        total_nll += nll
        steps += len(sequence) - 1
    if steps == 0:
        raise InsufficientDataError("No album has two or more images")
    return float(np.exp(total_nll / steps))


def cluster_rnn_accuracy(model: ClusterRnnModel, ds: Dataset) -> float:
    """Fraction of steps where the most probable next cluster is the true one."""
    hits, steps = 0, 0
    eye = np.eye(model.k)
    for album in ds.albums:
        sequence = model.kmeans.assign(album.features)
        h = np.zeros(model.params.hidden_size)
        for current, nxt in zip(sequence[:-1], sequence[1:]):
            step = forward_step(model.params, eye[current], h)
            h = step.h
            hits += int(np.argmax(step.y) == nxt)
            steps += 1
    return hits / steps if steps else 0.0


def cluster_rnn_predict(model: ClusterRnnModel, given: np.ndarray, candidates) -> int:
    """Pick the candidate whose cluster is most probable after the given image's cluster."""
    given_cluster = int(model.kmeans.assign(np.asarray(given)[None, :])[0])
    probs = model.next_cluster_probs([given_cluster])
    candidate_clusters = model.kmeans.assign(np.asarray(candidates, dtype=np.float64))
    return int(np.argmax(probs[candidate_clusters]))


def _sample_unused_cluster(y: np.ndarray, used_clusters: np.ndarray, rng: RngStream) -> int:
    """Sample from softmax(y) restricted to clusters not yet used."""
    if used_clusters.all():
        used_clusters[:] = False
    return sample_categorical(softmax(np.where(used_clusters, -np.inf, y)), rng)


def cluster_rnn_select(model: ClusterRnnModel, album: Album, k: int, rng: RngStream) -> List[int]:
    """
    Sample k cluster ids without replacement from the softmax chain and map each to the
    nearest unused album image of that cluster; returned in temporal order.

    The chain starts from the cluster of the album's first image. A sampled cluster with
    no unused image is dropped and resampled (bounded retries); after that the unused
    image nearest to the cluster center is taken.
    """
    if k < 1 or k > min(model.k, album.length):
        raise InputValidationError(f"Cannot select {k} images with K={model.k} clusters from {album.length} images")

    assignment = model.kmeans.assign(album.features)
    distance = cdist(model.kmeans.centers, album.features, "sqeuclidean")
    eye = np.eye(model.k)
    used_clusters = np.zeros(model.k, dtype=bool)
    used_images = np.zeros(album.length, dtype=bool)
    selection: List[int] = []

    h = np.zeros(model.params.hidden_size)
    y = np.zeros(model.k)
    cluster = int(assignment[0])
    while len(selection) < k:
        image = None
        for _ in range(MAX_CLUSTER_RESAMPLES):
            members = np.flatnonzero((assignment == cluster) & ~used_images)
            if members.size:
                image = int(members[np.argmin(distance[cluster, members])])
                break
            used_clusters[cluster] = True
            cluster = _sample_unused_cluster(y, used_clusters, rng)
        if image is None:
            unused = np.flatnonzero(~used_images)
            image = int(unused[np.argmin(distance[cluster, unused])])

        used_clusters[cluster] = True
        used_images[image] = True
        selection.append(image)
        if len(selection) == k:
            break
        step = forward_step(model.params, eye[cluster], h)
        h, y = step.h, step.y
        cluster = _sample_unused_cluster(y, used_clusters, rng)

    return sorted(selection)
