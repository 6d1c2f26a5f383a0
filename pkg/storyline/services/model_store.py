"""
Reader and writer for SRNM model files.

Layout: magic ``SRNM``, version u32 = 1, D u32, H u32, then W_I (H x D), W_O (D x H)
and W_R (H x H) as little-endian float64 in row-major order, followed by a UTF-8 JSON
trailer with the model settings, training config and history.
"""

import json
import logging
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np

from storyline.exceptions import CorruptFormatError
from storyline.models.rnn import RnnParams
from storyline.models.story import SrnnModel, StoryMode, StoryPrior

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"SRNM"
MODEL_VERSION = 1

HEADER_DTYPE = np.dtype([("magic", "S4"), ("version", "<u4"), ("dim", "<u4"), ("hidden", "<u4")])
WEIGHT_DTYPE = np.dtype("<f8")


def encode_trailer(trailer: Dict[str, Any]) -> bytes:
    return json.dumps(trailer, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_model(
    path: os.PathLike,
    model: SrnnModel,
    train_config: Optional[Dict[str, Any]] = None,
    history: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Serialize a model; identical inputs always produce identical bytes.

    Args:
        path: destination file
        model: trained (or freshly initialized) model
        train_config: TrainConfig dump stored in the trailer
        history: TrainingHistory dump stored in the trailer
    """
    params = model.params
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = MODEL_MAGIC
    header["version"] = MODEL_VERSION
    header["dim"] = params.input_dim
    header["hidden"] = params.hidden_size

    trailer = {
        "concept": model.concept,
        "mode": model.mode.value,
        "prior": model.prior.value,
        "story_length": model.story_length,
        "train_config": train_config or {},
        "history": history or {},
    }

    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        for matrix in (params.w_in, params.w_out, params.w_rec):
            handle.write(np.ascontiguousarray(matrix, dtype=WEIGHT_DTYPE).tobytes())
        handle.write(encode_trailer(trailer))
    logger.info(f"Saved model (D={params.input_dim}, H={params.hidden_size}, N={model.story_length}) to {path}")


def load_model(path: os.PathLike) -> Tuple[SrnnModel, Dict[str, Any]]:
    """
    Read a model file.

    Returns:
        Tuple of the model and the decoded JSON trailer

    Raises:
        CorruptFormatError: bad magic/version, truncated weights or unreadable trailer
    """
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as e:
        raise CorruptFormatError(f"Cannot read model file {path}: {e}")

    if len(raw) < HEADER_DTYPE.itemsize:
        raise CorruptFormatError(f"Model file {path} is shorter than its header")
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if header["magic"] != MODEL_MAGIC:
        raise CorruptFormatError(f"Model file {path} has bad magic {header['magic']!r}")
    if int(header["version"]) != MODEL_VERSION:
        raise CorruptFormatError(f"Model file {path} has unsupported version {int(header['version'])}")

    dim, hidden = int(header["dim"]), int(header["hidden"])
    shapes = [(hidden, dim), (dim, hidden), (hidden, hidden)]
    offset = HEADER_DTYPE.itemsize
    weights = []
    for shape in shapes:
        count = shape[0] * shape[1]
        end = offset + count * WEIGHT_DTYPE.itemsize
        if end > len(raw):
            raise CorruptFormatError(f"Model file {path} is truncated")
        weights.append(np.frombuffer(raw, dtype=WEIGHT_DTYPE, count=count, offset=offset).reshape(shape).copy())
        offset = end

    try:
        trailer = json.loads(raw[offset:].decode("utf-8"))
        mode = StoryMode(trailer["mode"])
        prior = StoryPrior(trailer.get("prior", StoryPrior.SUBSET.value))
        story_length = int(trailer["story_length"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError) as e:
        raise CorruptFormatError(f"Model file {path} has an unreadable trailer: {e}")

    w_in, w_out, w_rec = weights
    model = SrnnModel(
        params=RnnParams(w_in=w_in, w_rec=w_rec, w_out=w_out),
        story_length=story_length,
        mode=mode,
        concept=str(trailer.get("concept", "")),
        prior=prior,
    )
    logger.info(f"Loaded model {model.to_dict()} from {path}")
    return model, trailer
