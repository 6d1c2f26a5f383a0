"""
Reader and writer for SRNF feature files.

Layout: magic ``SRNF`` (4 ASCII bytes), version u32 = 1, dim u32, count u32, then
count x dim little-endian float32 values in row-major order.
"""

import logging
import os

import numpy as np

from storyline.exceptions import CorruptFormatError, InputValidationError

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"SRNF"
FEATURE_VERSION = 1

HEADER_DTYPE = np.dtype([("magic", "S4"), ("version", "<u4"), ("dim", "<u4"), ("count", "<u4")])
VALUE_DTYPE = np.dtype("<f4")


def write_feature_file(path: os.PathLike, features: np.ndarray) -> None:
    """
    Write a count x dim feature matrix as an SRNF file.

    Args:
        path: destination file
        features: 2-D array; values are stored as float32

    Raises:
        InputValidationError: if the matrix is not 2-D or has no columns
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] == 0:
        raise InputValidationError(f"Feature matrix must be 2-D with dim >= 1, got shape {features.shape}")

    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"] = FEATURE_MAGIC
    header["version"] = FEATURE_VERSION
    header["dim"] = features.shape[1]
    header["count"] = features.shape[0]

    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(features, dtype=VALUE_DTYPE).tobytes())
    logger.debug(f"Wrote {features.shape[0]}x{features.shape[1]} features to {path}")


def read_feature_file(path: os.PathLike) -> np.ndarray:
    """
    Read an SRNF file into a float32 matrix exactly as stored.

    Raises:
        CorruptFormatError: bad magic, unsupported version or truncated payload
    """
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as e:
        raise CorruptFormatError(f"Cannot read feature file {path}: {e}")

    if len(raw) < HEADER_DTYPE.itemsize:
        raise CorruptFormatError(f"Feature file {path} is shorter than its header")

    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if header["magic"] != FEATURE_MAGIC:
        raise CorruptFormatError(f"Feature file {path} has bad magic {header['magic']!r}")
    if int(header["version"]) != FEATURE_VERSION:
        raise CorruptFormatError(f"Feature file {path} has unsupported version {int(header['version'])}")

    dim, count = int(header["dim"]), int(header["count"])
    expected = HEADER_DTYPE.itemsize + dim * count * VALUE_DTYPE.itemsize
    if dim == 0 or len(raw) != expected:
        raise CorruptFormatError(
            f"Feature file {path} has {len(raw)} bytes, expected {expected} for {count}x{dim}"
        )

    values = np.frombuffer(raw, dtype=VALUE_DTYPE, offset=HEADER_DTYPE.itemsize)
    return values.reshape(count, dim).astype(np.float32)
