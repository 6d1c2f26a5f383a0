# Training commands: train one S-RNN, or sweep the storyline length
import logging

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
from storyline.models.story import SrnnModel
from storyline.services.evaluation import format_reports, n_sweep
from storyline.services.model_store import save_model
from storyline.services.numerics import RngStream, StreamId
from storyline.services.rnn_core import init_params
from storyline.services.srnn_service import train as train_model

logger = logging.getLogger(__name__)


@click.command("train")
@run_options("seed", "data", "model", "out", "n", "mode", "prior", "max_epochs", "estep_proposals")
def train(config_path, **flags):
    """Train an S-RNN by stochastic EM and write the model plus its history."""
    config = build_config(config_path, **flags)
    cfg = config.train_config()
    ds = load_features(config)
    train_ds, val_ds = held_out_split(config, ds)

    params = init_params(ds.dimension, cfg.hidden_size, RngStream(config.seed, StreamId.INIT))
    model = SrnnModel(params=params, story_length=config.n, mode=config.mode, concept=ds.concept, prior=config.prior)
    model, history = train_model(model, train_ds, val_ds, cfg, RngStream(config.seed, StreamId.TRAIN))

    model_path = config.model or output_path(config, "model.srnm")
    save_model(model_path, model, cfg.model_dump(mode="json"), history.model_dump(mode="json"))
    write_json(
        output_path(config, "history.json"),
        {"config": config.echo(), "model": model.to_dict(), "history": history.model_dump(mode="json")},
    )

    final = history.epochs[-1]
    click.echo(
        f"Trained {model.mode.value} model for {final.epoch} epochs "
        f"(validation {final.validation_score}) -> {model_path}"
    )


@click.command("nsweep")
@run_options("seed", "data", "out", "truth", "mode", "prior", "n_values", "summary_length", "threads", "max_epochs")
def nsweep(config_path, **flags):
    """Train one model per storyline length and compare prediction accuracy."""
    config = build_config(config_path, **flags)
    ds = load_features(config)
    train_ds, val_ds = held_out_split(config, ds)

    reports = n_sweep(
        train_ds,
        val_ds,
        config.n_values,
        config.train_config(),
        RngStream(config.seed, StreamId.TRAIN),
        truth=load_optional_truth(config),
        mode=config.mode,
        prior=config.prior,
        summary_length=config.summary_length,
        threads=config.threads,
        config=config.echo(),
    )

    table = format_reports(reports)
    write_json(output_path(config, "nsweep.json"), {"config": config.echo(), "reports": [r.model_dump() for r in reports]})
    with open(output_path(config, "nsweep.txt"), "w", encoding="utf-8") as handle:
        handle.write(table)
    click.echo(table, nl=False)
