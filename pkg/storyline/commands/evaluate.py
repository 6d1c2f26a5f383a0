# Prediction and full-comparison evaluation commands
import logging
from typing import Dict, List, Optional

import click

from storyline.commands.common import (
    build_config,
    held_out_split,
    load_features,
    load_optional_truth,
    output_path,
    run_options,
    write_json,
)
from storyline.exceptions import InputValidationError
from storyline.models.album import Dataset
from storyline.models.story import SrnnModel
from storyline.schemas.config import RunConfig
from storyline.schemas.report import EvalReport
from storyline.services.baselines import ClusterRnnModel, cluster_rnn_select, cluster_rnn_train, kmeans_fit
from storyline.services.evaluation import (
    ClusterRnnPredictor,
    FurthestImagePredictor,
    NearestNeighborPredictor,
    Predictor,
    RandomPredictor,
    SrnnPredictor,
    build_prediction_set,
    eval_prediction,
    evaluate_storylines,
    format_reports,
    select_global_kmeans,
    select_local_kmeans,
    select_sample,
)
from storyline.services.model_store import load_model
from storyline.services.numerics import RngStream, StreamId
from storyline.services.srnn_service import sample_dataset_storylines

logger = logging.getLogger(__name__)


def _train_cluster_rnn(config: RunConfig, train_ds: Dataset) -> ClusterRnnModel:
    points = sum(album.length for album in train_ds.albums)
    k = min(config.cluster_k, points)
    if k < config.cluster_k:
        logger.warning(f"Only {points} training images; fitting K={k} clusters instead of {config.cluster_k}")
    return cluster_rnn_train(
        train_ds,
        k,
        config.train_config(),
        RngStream(config.seed, StreamId.BASELINE).child(0),
        config.kmeans_iters,
    )


def _load_models(config: RunConfig) -> Dict[str, SrnnModel]:
    """The --model file plus every --compare file, keyed by a unique method name."""
    models: Dict[str, SrnnModel] = {}
    for path in ([config.model] if config.model else []) + list(config.compare):
        model = load_model(path)[0]
        name = f"srnn-{model.mode.value}"
        suffix = 2
        while name in models:
            name = f"srnn-{model.mode.value}-{suffix}"
            suffix += 1
        models[name] = model
    return models


def _build_predictor(
    method: str,
    config: RunConfig,
    train_ds: Dataset,
    model: Optional[SrnnModel] = None,
    cluster_model: Optional[ClusterRnnModel] = None,
) -> Predictor:
    if method == "random":
        return RandomPredictor(RngStream(config.seed, StreamId.PREDICT).child(1))
    if method == "nn":
        return NearestNeighborPredictor()
    if method == "fi":
        return FurthestImagePredictor()
    if method == "srnn":
        if model is None:
            raise InputValidationError("--model is required for the srnn predictor")
        return SrnnPredictor(model, name=f"srnn-{model.mode.value}")
    return ClusterRnnPredictor(cluster_model or _train_cluster_rnn(config, train_ds))


def _instances(config: RunConfig, test_ds: Dataset, truth, horizon: str):
    stream = RngStream(config.seed, StreamId.PREDICT).child(0 if horizon == "long" else 2)
    instances = build_prediction_set(test_ds, truth, horizon, stream, config.summary_length)
    if not instances:
        raise InputValidationError(f"No {horizon}-term prediction instances could be built")
    return instances


@click.command("predict")
@run_options("seed", "data", "model", "out", "truth", "method", "horizon", "threads", "summary_length")
def predict(config_path, **flags):
    """5-way next-image prediction on the held-out albums with one method."""
    config = build_config(config_path, **flags)
    ds = load_features(config)
    train_ds, test_ds = held_out_split(config, ds)
    model = load_model(config.model)[0] if config.model else None

    predictor = _build_predictor(config.method, config, train_ds, model)
    instances = _instances(config, test_ds, load_optional_truth(config), config.horizon)
    report = eval_prediction(predictor, test_ds, instances, config.threads, config.echo(), config.seed)

    path = output_path(config, f"predict_{config.method}_{config.horizon}.json")
    write_json(path, {"config": config.echo(), "report": report.model_dump()})
    click.echo(format_reports([report]), nl=False)


@click.command("eval")
@run_options(
    "seed", "data", "model", "compare", "out", "truth", "n", "samples", "rank_by", "threads", "summary_length"
)
def evaluate(config_path, **flags):
    """
    Full comparison on the held-out albums: short-term prediction for every predictor,
    plus long-term prediction and storyline recovery when planted truth is given.
    ``--compare`` adds further trained models, e.g. a shuffled-order ablation.
    """
    config = build_config(config_path, **flags)
    ds = load_features(config)
    train_ds, test_ds = held_out_split(config, ds)
    truth = load_optional_truth(config)
    models = _load_models(config)

    cluster_model = _train_cluster_rnn(config, train_ds)
    predictors: List[Predictor] = [
        _build_predictor(m, config, train_ds, cluster_model=cluster_model) for m in ("random", "nn", "fi", "cluster_rnn")
    ]
    predictors.extend(SrnnPredictor(model, name=name) for name, model in models.items())

    reports: List[EvalReport] = []
    for horizon in (["long", "short"] if truth else ["short"]):
        instances = _instances(config, test_ds, truth, horizon)
        for predictor in predictors:
            reports.append(eval_prediction(predictor, test_ds, instances, config.threads, config.echo(), config.seed))

    if truth is not None:
        reports.extend(_storyline_reports(config, train_ds, test_ds, truth, models, cluster_model))

    table = format_reports(reports)
    write_json(output_path(config, "eval.json"), {"config": config.echo(), "reports": [r.model_dump() for r in reports]})
    with open(output_path(config, "eval.txt"), "w", encoding="utf-8") as handle:
        handle.write(table)
    click.echo(table, nl=False)


def _storyline_reports(config, train_ds, test_ds, truth, models, cluster_model) -> List[EvalReport]:
    story_lengths = {model.story_length for model in models.values()}
    if len(story_lengths) > 1:
        raise InputValidationError(f"Compared models have different storyline lengths {sorted(story_lengths)}")
    story_length = story_lengths.pop() if story_lengths else config.n

    baseline_rng = RngStream(config.seed, StreamId.BASELINE)
    eligible = Dataset(test_ds.concept, tuple(a for a in test_ds.albums if a.length >= story_length))
    if not eligible.albums:
        logger.warning(f"No held-out album has {story_length} images; skipping storyline recovery")
        return []

    selections = {
        "sample": select_sample(eligible, story_length, baseline_rng.child(1)),
        "kmeans": select_global_kmeans(
            kmeans_fit(train_ds.stacked_features(), story_length, baseline_rng.child(2), config.kmeans_iters), eligible
        ),
        "local": select_local_kmeans(eligible, story_length, baseline_rng.child(3), config.kmeans_iters),
    }
    if story_length <= cluster_model.k:
        cluster_rng = baseline_rng.child(4)
        selections["cluster_rnn"] = {
            album.album_id: cluster_rnn_select(cluster_model, album, story_length, cluster_rng.child(index))
            for index, album in enumerate(eligible.albums)
        }
    for name, model in models.items():
        stories = sample_dataset_storylines(
            model, eligible, config.samples, RngStream(config.seed, StreamId.SAMPLE), config.threads, config.rank_by
        )
        selections[name] = {story.album_id: story.indices for story in stories}

    return [
        evaluate_storylines(name, selected, truth, config.echo(), config.seed)
        for name, selected in selections.items()
        if selected
    ]
