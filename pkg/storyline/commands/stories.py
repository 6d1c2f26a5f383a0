# Storyline extraction, album summarization and transition-graph export
import logging

import click

from storyline.commands.common import (
    build_config,
    load_features,
    load_optional_truth,
    output_path,
    read_json,
    require,
    run_options,
    write_json,
)
from storyline.exceptions import InputValidationError
from storyline.models.story import StorySample
from storyline.services.evaluation import evaluate_storylines
from storyline.services.graph_export import export_transition_graph
from storyline.services.model_store import load_model
from storyline.services.numerics import RngStream, StreamId
from storyline.services.srnn_service import sample_dataset_storylines, sample_storylines

logger = logging.getLogger(__name__)


@click.command("storyline")
@run_options("seed", "data", "model", "out", "samples", "rank_by", "threads", "truth")
def storyline(config_path, **flags):
    """Best-of-K storyline for every album of a concept."""
    config = build_config(config_path, **flags)
    model, _ = load_model(require(config, "model"))
    ds = load_features(config)

    stories = sample_dataset_storylines(
        model, ds, config.samples, RngStream(config.seed, StreamId.SAMPLE), config.threads, config.rank_by
    )
    payload = {
        "config": config.echo(),
        "model": model.to_dict(),
        "stories": [story.to_dict() for story in stories],
    }

    truth = load_optional_truth(config)
    if truth is not None and stories:
        selections = {story.album_id: story.indices for story in stories}
        report = evaluate_storylines(f"srnn-{model.mode.value}", selections, truth, seed=config.seed)
        payload["recovery"] = report.metrics
        click.echo(
            f"Coverage {report.metrics['coverage']:.3f}, order accuracy {report.metrics['order_accuracy']:.3f}"
        )

    path = output_path(config, "storylines.json")
    write_json(path, payload)
    click.echo(f"Sampled {len(stories)} storylines (N={model.story_length}) -> {path}")


@click.command("summarize")
@run_options("seed", "data", "model", "out", "samples", "rank_by", "album")
def summarize(config_path, **flags):
    """
    Summarize one album. The model may come from another concept; its storyline
    length is the summary length.
    """
    config = build_config(config_path, **flags)
    album_id = require(config, "album")
    model, _ = load_model(require(config, "model"))
    ds = load_features(config)

    index = next((i for i, album in enumerate(ds.albums) if album.album_id == album_id), None)
    if index is None:
        raise InputValidationError(f"Album {album_id} not found in {config.data}")
    album = ds.albums[index]

    # Same stream as the storyline command uses for this album
    stream = RngStream(config.seed, StreamId.SAMPLE).child(index)
    story = sample_storylines(model, album, config.samples, stream, config.rank_by)
    path = output_path(config, f"summary_{album_id}.json")
    write_json(path, {
        "config": config.echo(),
        "model": model.to_dict(),
        "story": story.to_dict(),
        "image_ids": [album.image_ids[i] for i in story.indices],
    })
    click.echo(f"Summary of {album_id}: {[i + 1 for i in story.indices]} -> {path}")


@click.command("export-graph")
@run_options("data", "out", "stories")
@click.option("--top-m", "top_m", type=int, default=None, help="Nodes kept in the graph")
def export_graph(config_path, **flags):
    """Write the most common storyline transitions as a DOT digraph."""
    config = build_config(config_path, **flags)
    ds = load_features(config)
    document = read_json(require(config, "stories"))
    try:
        stories = [StorySample.from_dict(entry) for entry in document["stories"]]
    except (KeyError, TypeError, ValueError) as e:
        raise InputValidationError(f"Malformed storylines file {config.stories}: {e}")

    path = output_path(config, "transitions.dot")
    graph = export_transition_graph(stories, ds, path, config.top_m)
    click.echo(
        f"Graph with {graph.number_of_nodes()} nodes and {graph.number_of_edges()} edges "
        f"({graph.graph['total_transitions']} transitions) -> {path}"
    )
