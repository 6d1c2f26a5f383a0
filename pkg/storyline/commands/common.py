"""
Shared flag definitions and helpers for the command modules.
"""

import json
import logging
import os
from typing import Any, Dict, Optional, Tuple

import click

from storyline.exceptions import InputValidationError
from storyline.models.album import Dataset, PlantedTruth
from storyline.models.story import StoryMode, StoryPrior, StoryRanking
from storyline.schemas.config import RunConfig
from storyline.services.dataset_service import l2_normalize, load_dataset, load_truth, split_train_val
from storyline.services.numerics import RngStream, StreamId

logger = logging.getLogger(__name__)

# Flag definitions keyed by RunConfig field; every default is None so config-file values survive
_OPTIONS = {
    "seed": click.option("--seed", type=int, default=None, help="Global seed"),
    "data": click.option("--data", type=click.Path(), default=None, help="Manifest JSON"),
    "model": click.option("--model", type=click.Path(), default=None, help="SRNM model file"),
    "out": click.option("--out", type=click.Path(), default=None, help="Output directory"),
    "n": click.option("--n", "n", type=int, default=None, help="Storyline length N"),
    "mode": click.option("--mode", type=click.Choice([m.value for m in StoryMode]), default=None),
    "prior": click.option(
        "--prior", type=click.Choice([p.value for p in StoryPrior]), default=None, help="Prior over skip indices"
    ),
    "samples": click.option("--samples", type=int, default=None, help="Best-of-K story samples"),
    "rank_by": click.option(
        "--rank-by", "rank_by", type=click.Choice([r.value for r in StoryRanking]), default=None,
        help="Best-of-K ranking key",
    ),
    "threads": click.option("--threads", type=int, default=None, help="Worker threads for inference"),
    "truth": click.option("--truth", type=click.Path(), default=None, help="Planted truth JSON"),
    "album": click.option("--album", default=None, help="Album id"),
    "method": click.option(
        "--method", type=click.Choice(["srnn", "nn", "fi", "random", "cluster_rnn"]), default=None
    ),
    "horizon": click.option("--horizon", type=click.Choice(["long", "short"]), default=None),
    "stories": click.option("--stories", type=click.Path(), default=None, help="Storylines JSON"),
    "max_epochs": click.option("--max-epochs", "max_epochs", type=int, default=None),
    "n_values": click.option("--n-values", "n_values", default=None, help="Comma-separated N list"),
    "summary_length": click.option("--summary-length", "summary_length", type=int, default=None),
    "estep_proposals": click.option(
        "--estep-proposals", "estep_proposals", type=int, default=None, help="Sequential draws per E-step"
    ),
    "compare": click.option("--compare", default=None, help="Comma-separated extra model files to compare"),
}


def run_options(*names: str):
    """Attach ``--config`` plus the named flags to a command."""

    def decorator(func):
        for name in reversed(names):
            func = _OPTIONS[name](func)
        return click.option(
            "--config", "config_path", type=click.Path(), default=None, help="key=value config file"
        )(func)

    return decorator


def build_config(config_path: Optional[str], **flags: Any) -> RunConfig:
    config = RunConfig.from_sources(config_path, flags)
    os.makedirs(config.out, exist_ok=True)
    logger.debug(f"Effective config: {config.echo()}")
    return config


def require(config: RunConfig, field: str) -> str:
    value = getattr(config, field)
    if not value:
        raise InputValidationError(f"--{field} is required for this command")
    return value


def load_features(config: RunConfig) -> Dataset:
    ds = load_dataset(require(config, "data"))
    return l2_normalize(ds) if config.normalize else ds


def load_optional_truth(config: RunConfig) -> Optional[PlantedTruth]:
    return load_truth(config.truth) if config.truth else None


def held_out_split(config: RunConfig, ds: Dataset) -> Tuple[Dataset, Dataset]:
    """The same train/held-out partition that ``train`` uses for this seed and ratio."""
    return split_train_val(ds, config.split_ratio, RngStream(config.seed, StreamId.SPLIT))


def output_path(config: RunConfig, name: str) -> str:
    return os.path.join(config.out, name)


def write_json(path: str, payload: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info(f"Wrote {path}")


def read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise InputValidationError(f"Cannot read {path}: {e}")
