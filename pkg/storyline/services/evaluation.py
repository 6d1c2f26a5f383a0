# Evaluation tasks: 5-way prediction, storyline recovery and the summary-size sweep
import concurrent.futures
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from storyline.exceptions import InputValidationError
from storyline.models.album import Album, Dataset, PlantedTruth
from storyline.models.story import SrnnModel, StoryMode, StoryPrior
from storyline.schemas.config import TrainConfig
from storyline.schemas.report import EvalReport, PredictionInstance, StorylineMetrics
from storyline.services.baselines import (
    ClusterRnnModel,
    KMeansModel,
    cluster_rnn_predict,
    fi_predict,
    kmeans_select,
    local_kmeans_select,
    nn_predict,
    sample_uniform,
)
from storyline.services.numerics import RngStream
from storyline.services.rnn_core import forward_step, init_params, score_future
from storyline.services.srnn_service import train

logger = logging.getLogger(__name__)

NUM_DISTRACTORS = 4


def build_prediction_set(
    ds: Dataset,
    truth: Optional[PlantedTruth],
    horizon: str,
    rng: RngStream,
    summary_length: Optional[int] = None,
) -> List[PredictionInstance]:
    """
    One 5-way instance per consecutive (given, next) pair.

    Long horizon pairs are consecutive entries of the planted summary (optionally
    thinned to ``summary_length``); short horizon pairs are consecutive album images.
    Distractors are drawn without replacement from the rest of the same album and the
    candidate order is shuffled. Album i uses the stream ``rng.child(i)``.

    Raises:
        InputValidationError: long horizon without truth, or unknown horizon
    """
    if horizon not in ("long", "short"):
        raise InputValidationError(f"Unknown horizon {horizon!r}")
    if horizon == "long" and truth is None:
        raise InputValidationError("Long-term prediction needs planted or expert summaries")

    instances: List[PredictionInstance] = []
    skipped = 0
    for index, album in enumerate(ds.albums):
        if horizon == "long":
            if album.album_id not in truth.summaries:
                logger.warning(f"No summary for album {album.album_id}; skipping")
                continue
            path = truth.summary(album.album_id, summary_length)
        else:
            path = list(range(album.length))

        album_rng = rng.child(index)
        for given, target in zip(path, path[1:]):
            pool = [i for i in range(album.length) if i != given and i != target]
            if len(pool) < NUM_DISTRACTORS:
                skipped += 1
                continue
            distractors = tuple(sorted(int(i) for i in album_rng.choice_without_replacement(pool, NUM_DISTRACTORS)))
            options = (target,) + distractors
            candidates = tuple(int(options[i]) for i in album_rng.permutation(len(options)))
            instances.append(
                PredictionInstance(
                    instance_id=len(instances),
                    album_id=album.album_id,
                    given=int(given),
                    target=int(target),
                    distractors=distractors,
                    candidates=candidates,
                    horizon=horizon,
                )
            )

    if skipped:
        logger.warning(f"Skipped {skipped} {horizon}-term pairs in albums too small for {NUM_DISTRACTORS} distractors")
    logger.info(f"Built {len(instances)} {horizon}-term prediction instances")
    return instances


class Predictor:
    """Chooses one of an instance's candidates; returns the chosen album index."""

    name = "predictor"

    def predict(self, album: Album, instance: PredictionInstance) -> int:
        raise NotImplementedError


class RandomPredictor(Predictor):
    name = "random"

    def __init__(self, rng: RngStream):
        self.rng = rng

    def predict(self, album, instance):
        choice = self.rng.child(instance.instance_id).integers(0, len(instance.candidates) - 1)
        return instance.candidates[choice]


class OraclePredictor(Predictor):
    name = "oracle"

    def predict(self, album, instance):
        return instance.target


class NearestNeighborPredictor(Predictor):
    name = "nn"

    def predict(self, album, instance):
        features = album.features
        return instance.candidates[nn_predict(features[instance.given], features[list(instance.candidates)])]


class FurthestImagePredictor(Predictor):
    name = "fi"

    def predict(self, album, instance):
        features = album.features
        return instance.candidates[fi_predict(features[instance.given], features[list(instance.candidates)])]


class SrnnPredictor(Predictor):
    """Feeds the given image from h_0 and scores the candidates with the softmax over futures."""

    def __init__(self, model: SrnnModel, name: str = "srnn"):
        self.model = model
        self.name = name

    def predict(self, album, instance):
        params = self.model.params
        step = forward_step(params, album.features[instance.given], np.zeros(params.hidden_size))
        probs = score_future(step.y, album.features[list(instance.candidates)])
        return instance.candidates[int(np.argmax(probs))]


class ClusterRnnPredictor(Predictor):
    name = "cluster_rnn"

    def __init__(self, model: ClusterRnnModel):
        self.model = model

    def predict(self, album, instance):
        features = album.features
        choice = cluster_rnn_predict(self.model, features[instance.given], features[list(instance.candidates)])
        return instance.candidates[choice]


def eval_prediction(
    predictor: Predictor,
    ds: Dataset,
    instances: Sequence[PredictionInstance],
    threads: int = 1,
    config: Optional[Dict[str, Any]] = None,
    seed: int = 0,
) -> EvalReport:
    """Accuracy of a predictor; results are reduced in instance order."""
    if not instances:
        raise InputValidationError("No prediction instances to evaluate")
    albums = ds.albums_by_id()

    def run(instance: PredictionInstance) -> bool:
        return predictor.predict(albums[instance.album_id], instance) == instance.target

    if threads <= 1:
        outcomes = [run(instance) for instance in instances]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, instances))

    correct = int(sum(outcomes))
    accuracy = correct / len(instances)
    logger.info(f"{predictor.name} {instances[0].horizon}-term accuracy {accuracy:.3f} ({correct}/{len(instances)})")
    return EvalReport(
        method=predictor.name,
        task=f"prediction-{instances[0].horizon}",
        metrics={"accuracy": accuracy},
        counts={"instances": len(instances), "correct": correct},
        config=config or {},
        seed=seed,
    )


def storyline_recovery(indices: Sequence[int], labels: Sequence[int], num_states: int) -> StorylineMetrics:
    """
    Coverage: distinct planted states hit, over L. Order accuracy: fraction of pairs of
    distinct states (by first occurrence) appearing in planted order; 1.0 for a single
    state and 0.0 when no state is hit.
    """
    first_seen: List[int] = []
    for i in indices:
        state = labels[i]
        if state > 0 and state not in first_seen:
            first_seen.append(state)

    coverage = len(first_seen) / num_states
    if len(first_seen) < 2:
        return StorylineMetrics(coverage=coverage, order_accuracy=float(len(first_seen) == 1))

    pairs = [(a, b) for pos, a in enumerate(first_seen) for b in first_seen[pos + 1:]]
    ordered = sum(1 for a, b in pairs if a < b)
    return StorylineMetrics(coverage=coverage, order_accuracy=ordered / len(pairs))


def eval_storyline_recovery(sample, truth: PlantedTruth) -> StorylineMetrics:
    """Recovery metrics of one StorySample against the planted labels of its album."""
    return storyline_recovery(sample.indices, truth.labels[sample.album_id], truth.num_states)


def evaluate_storylines(
    method: str,
    selections: Dict[str, Sequence[int]],
    truth: PlantedTruth,
    config: Optional[Dict[str, Any]] = None,
    seed: int = 0,
) -> EvalReport:
    """Mean storyline recovery of a selection method over albums with planted labels."""
    metrics = [
        storyline_recovery(indices, truth.labels[album_id], truth.num_states)
        for album_id, indices in selections.items()
        if album_id in truth.labels
    ]
    if not metrics:
        raise InputValidationError(f"No selections of {method} have planted labels")
    return EvalReport(
        method=method,
        task="storyline",
        metrics={
            "coverage": float(np.mean([m.coverage for m in metrics])),
            "order_accuracy": float(np.mean([m.order_accuracy for m in metrics])),
        },
        counts={"albums": len(metrics)},
        config=config or {},
        seed=seed,
    )


def select_sample(ds: Dataset, k: int, rng: RngStream) -> Dict[str, List[int]]:
    """Sample baseline: k uniform images per album, temporally sorted."""
    return {
        album.album_id: sample_uniform(range(album.length), k, rng.child(index))
        for index, album in enumerate(ds.albums)
        if album.length >= k
    }


def select_global_kmeans(model: KMeansModel, ds: Dataset) -> Dict[str, List[int]]:
    """Global K-Means baseline: closest album image to each concept-level center."""
    return {album.album_id: kmeans_select(model, album.features) for album in ds.albums}


def select_local_kmeans(ds: Dataset, k: int, rng: RngStream, max_iters: int = 100) -> Dict[str, List[int]]:
    """Local baseline: K-Means on each album with K = summary size."""
    return {
        album.album_id: local_kmeans_select(album, k, rng.child(index), max_iters)
        for index, album in enumerate(ds.albums)
        if album.length >= k
    }


def n_sweep(
    train_ds: Dataset,
    val_ds: Dataset,
    n_values: Sequence[int],
    cfg: TrainConfig,
    rng: RngStream,
    truth: Optional[PlantedTruth] = None,
    mode: StoryMode = StoryMode.SKIP,
    prior: StoryPrior = StoryPrior.SUBSET,
    summary_length: Optional[int] = None,
    threads: int = 1,
    config: Optional[Dict[str, Any]] = None,
) -> List[EvalReport]:
    """
    Train one model per storyline length and compare prediction accuracies.

    Every cell uses the same initialization, training and instance streams so that
    rows differ only in N. Long-term columns need ``truth``.
    """
    if not n_values:
        raise InputValidationError("n_values must not be empty")

    short_instances = build_prediction_set(val_ds, truth, "short", rng.child(2))
    long_instances = build_prediction_set(val_ds, truth, "long", rng.child(3)) if truth else []
    thinned_instances = (
        build_prediction_set(val_ds, truth, "long", rng.child(4), summary_length)
        if truth and summary_length else []
    )

    reports = []
    for n in n_values:
        params = init_params(train_ds.dimension, cfg.hidden_size, rng.child(0))
        model = SrnnModel(params=params, story_length=n, mode=mode, concept=train_ds.concept, prior=prior)
        model, history = train(model, train_ds, val_ds, cfg, rng.child(1))
        predictor = SrnnPredictor(model, name=f"srnn-N{n}")

        metrics: Dict[str, float] = {}
        counts: Dict[str, int] = {"epochs": len(history.epochs) - 1}
        for label, instances in (("short", short_instances), ("long", long_instances),
                                 (f"long{summary_length}", thinned_instances)):
            if instances:
                report = eval_prediction(predictor, val_ds, instances, threads)
                metrics[f"{label}_accuracy"] = report.metrics["accuracy"]
                counts[f"{label}_instances"] = report.counts["instances"]

        reports.append(EvalReport(
            method=predictor.name,
            task="n-sweep",
            metrics=metrics,
            counts=counts,
            config=config or {},
            seed=cfg.seed,
        ))
    return reports


def format_reports(reports: Sequence[EvalReport]) -> str:
    """Aligned-column plain-text table of reports."""
    metric_names = sorted({name for report in reports for name in report.metrics})
    header = f"{'method':<16} {'task':<20} " + " ".join(f"{name:>16}" for name in metric_names) + f" {'count':>8}"
    lines = [header, "-" * len(header)]
    for report in reports:
        cells = " ".join(
            f"{report.metrics[name]:>16.4f}" if name in report.metrics else f"{'-':>16}" for name in metric_names
        )
        count = next(iter(report.counts.values()), 0)
        lines.append(f"{report.method:<16} {report.task:<20} {cells} {count:>8}")
    return "\n".join(lines) + "\n"
