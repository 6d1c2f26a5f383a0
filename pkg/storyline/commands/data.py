# Synthetic data generation command
import logging

import click

from storyline.commands.common import build_config, output_path, run_options, write_json
from storyline.services.dataset_service import cosine_repetition_rate, save_truth, write_dataset
from storyline.services.synthetic_generator import gen_synthetic

logger = logging.getLogger(__name__)


@click.command("gen")
@run_options("seed", "out")
def gen(config_path, **flags):
    """Generate a synthetic concept with a planted storyline."""
    config = build_config(config_path, **flags)
    spec = config.synthetic_spec()
    logger.info(f"Generating {spec.num_albums} albums (L={spec.num_states}, D={spec.dimension})")

    ds, truth = gen_synthetic(spec)
    repetition_rate = cosine_repetition_rate(ds)

    manifest_path = write_dataset(ds, config.out)
    truth_path = output_path(config, "truth.json")
    save_truth(truth, truth_path)

    summary = {
        "config": config.echo(),
        "dataset": ds.to_dict(),
        "manifest": manifest_path,
        "truth": truth_path,
        "repetition_rate": repetition_rate,
    }
    write_json(output_path(config, "gen.json"), summary)
    rate = "n/a" if repetition_rate is None else f"{repetition_rate:.3f}"
    click.echo(
        f"Generated {len(ds)} albums, {summary['dataset']['images']} images, "
        f"repetition rate {rate} -> {manifest_path}"
    )
