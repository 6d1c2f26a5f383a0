# Dataset ingestion, persistence and preprocessing
import json
import logging
import math
import os
from datetime import timezone
from typing import Dict, Optional, Tuple

import numpy as np
from dateutil import parser as date_parser
from pydantic import ValidationError

from storyline.exceptions import (
    DimensionMismatchError,
    InputValidationError,
    InsufficientDataError,
    ManifestError,
    TimestampParseError,
)
from storyline.models.album import Album, Dataset, PlantedTruth
from storyline.schemas.manifest import Manifest
from storyline.services.feature_io import read_feature_file, write_feature_file
from storyline.services.numerics import RngStream

logger = logging.getLogger(__name__)


def parse_timestamp(value) -> int:
    """
    Convert a manifest timestamp to epoch seconds.

    Accepts integers, integer strings and ISO-8601 strings (naive times are UTC).

    Raises:
        TimestampParseError: if the value cannot be interpreted
    """
    if isinstance(value, bool):
        raise TimestampParseError(f"Invalid timestamp {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        parsed = date_parser.isoparse(text)
    except (ValueError, OverflowError) as e:
        raise TimestampParseError(f"Cannot parse timestamp {value!r}: {e}")
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return int(parsed.timestamp())


def load_dataset(manifest_path: os.PathLike) -> Dataset:
    """
    Load a manifest and its feature files into a timestamp-sorted Dataset.

    Args:
        manifest_path: path to the manifest JSON document

    Returns:
        Dataset whose albums are stably sorted by timestamp

    Raises:
        ManifestError: unreadable or structurally invalid manifest, rows out of range
        CorruptFormatError: bad feature file
        DimensionMismatchError: feature files with different dimensions
        TimestampParseError: unparseable timestamp
    """
    try:
        with open(manifest_path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"Cannot read manifest {manifest_path}: {e}")

    try:
        manifest = Manifest.model_validate(document)
    except ValidationError as e:
        raise ManifestError(f"Manifest {manifest_path} is invalid: {e}")

    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    feature_cache: Dict[str, np.ndarray] = {}
    dimension = None
    albums = []

    for entry in manifest.albums:
        feature_path = os.path.join(base_dir, entry.feature_file)
        if feature_path not in feature_cache:
            feature_cache[feature_path] = read_feature_file(feature_path)
        matrix = feature_cache[feature_path]

        if dimension is None:
            dimension = matrix.shape[1]
        elif matrix.shape[1] != dimension:
            raise DimensionMismatchError(
                f"Feature file {entry.feature_file} has dimension {matrix.shape[1]}, expected {dimension}"
            )

        rows = np.array([item.row for item in entry.items], dtype=np.int64)
        if rows.max() >= matrix.shape[0]:
            raise ManifestError(
                f"Album {entry.id} references row {int(rows.max())} but {entry.feature_file} has {matrix.shape[0]} rows"
            )
        timestamps = np.array([parse_timestamp(item.timestamp) for item in entry.items], dtype=np.int64)

        # Stable sort keeps the manifest order of images sharing a timestamp
        order = np.argsort(timestamps, kind="stable")
        albums.append(
            Album(
                album_id=entry.id,
                image_ids=tuple(entry.items[i].image_id for i in order),
                timestamps=timestamps[order],
                features=matrix[rows[order]].astype(np.float64),
            )
        )

    dataset = Dataset(concept=manifest.concept, albums=tuple(albums))
    logger.info(f"Loaded dataset {dataset.to_dict()} from {manifest_path}")
    return dataset


def write_dataset(ds: Dataset, out_dir: os.PathLike) -> str:
    """
    Write one SRNF file per album plus ``manifest.json`` into ``out_dir``.

    Returns:
        Path of the written manifest
    """
    feature_dir = os.path.join(out_dir, "features")
    os.makedirs(feature_dir, exist_ok=True)

    albums = []
    for index, album in enumerate(ds.albums):
        relative = os.path.join("features", f"album_{index:05d}.srnf")
        write_feature_file(os.path.join(out_dir, relative), album.features)
        albums.append({
            "id": album.album_id,
            "feature_file": relative,
            "items": [
                {"image_id": image_id, "timestamp": int(ts), "row": row}
                for row, (image_id, ts) in enumerate(zip(album.image_ids, album.timestamps))
            ],
        })

    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump({"concept": ds.concept, "albums": albums}, handle, indent=2)
    logger.info(f"Wrote {len(albums)} albums to {manifest_path}")
    return manifest_path


def save_truth(truth: PlantedTruth, path: os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(truth.to_dict(), handle, indent=2)


def load_truth(path: os.PathLike) -> PlantedTruth:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return PlantedTruth.from_dict(json.load(handle))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"Cannot read truth file {path}: {e}")


def split_train_val(ds: Dataset, ratio: float, rng: RngStream) -> Tuple[Dataset, Dataset]:
    """
    Randomly partition albums into training and validation sets.

    The training part holds round(ratio * count) albums, clamped so that both parts
    are non-empty; each part keeps the original album order.
    """
    if not 0 < ratio < 1:
        raise InputValidationError(f"Split ratio must be in (0, 1), got {ratio}")
    count = len(ds.albums)
    if count < 2:
        raise InsufficientDataError(f"Need at least 2 albums to split, got {count}")

    n_train = min(max(math.floor(ratio * count + 0.5), 1), count - 1)
    permutation = rng.permutation(count)
    train_idx = sorted(int(i) for i in permutation[:n_train])
    val_idx = sorted(int(i) for i in permutation[n_train:])

    logger.info(f"Split {count} albums into {len(train_idx)} train / {len(val_idx)} validation")
    return (
        Dataset(ds.concept, tuple(ds.albums[i] for i in train_idx)),
        Dataset(ds.concept, tuple(ds.albums[i] for i in val_idx)),
    )


def _unit_rows(album: Album) -> np.ndarray:
    norms = np.linalg.norm(album.features, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise InputValidationError(
            f"Album {album.album_id}, image {album.image_ids[zero[0]]} has a zero feature vector"
        )
    return album.features / norms[:, None]


def l2_normalize(ds: Dataset) -> Dataset:
    """Scale every feature row to unit Euclidean norm."""
    albums = tuple(album.with_features(_unit_rows(album)) for album in ds.albums)
    return Dataset(ds.concept, albums)


def cosine_repetition_rate(ds: Dataset) -> Optional[float]:
    """
    Fraction of consecutive image pairs more similar (cosine) than an average pair.

    The reference level is the mean cosine over all within-album image pairs. Returns
    None when no album has two or more images.
    """
    pair_sum = 0.0
    pair_count = 0
    consecutive = []
    for album in ds.albums:
        if album.length < 2:
            continue
        unit = _unit_rows(album)
        gram = unit @ unit.T
        upper = np.triu_indices(album.length, k=1)
        pair_sum += float(gram[upper].sum())
        pair_count += upper[0].size
        consecutive.append(np.einsum("ij,ij->i", unit[:-1], unit[1:]))

    if pair_count == 0:
        logger.warning("No album has two or more images; repetition rate is undefined")
        return None
    mean_cosine = pair_sum / pair_count
    consecutive = np.concatenate(consecutive)
    return float(np.mean(consecutive > mean_cosine))
