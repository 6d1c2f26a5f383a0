# Dense numerics shared by every other service
import logging
from enum import IntEnum
from typing import Callable, Iterable, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from storyline.exceptions import (
    DimensionMismatchError,
    InputValidationError,
    NonFiniteError,
    ProbabilityError,
)

logger = logging.getLogger(__name__)

Vector = np.ndarray
Matrix = np.ndarray

_SEED_MASK = (1 << 64) - 1


class StreamId(IntEnum):
    """Well-known stream ids derived from the global seed of a run."""

    GENERATE = 0
    SPLIT = 1
    INIT = 2
    TRAIN = 3
    SAMPLE = 4
    PREDICT = 5
    BASELINE = 6


class RngStream:
    """
    Counter-based deterministic random stream.

    A stream is identified by ``(seed, stream_id)`` plus an optional child path.
    Identical identifiers always replay the same draws; distinct identifiers are
    statistically independent (Philox keyed by a spawned SeedSequence). Streams are
    stateful and must not be shared across threads; derive a ``child`` per unit of work.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Tuple[int, ...] = ()):
        self.seed = int(seed) & _SEED_MASK
        self.stream_id = int(stream_id) & _SEED_MASK
        self.path = tuple(int(p) for p in path)
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *self.path)
        )
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, index: int) -> "RngStream":
        """Derive an independent sub-stream, e.g. one per album or per epoch."""
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))

    def random(self) -> float:
        return float(self.generator.random())

    def uniform(self, low: float, high: float, size=None):
        return self.generator.uniform(low, high, size=size)

    def normal(self, scale: float, size=None):
        return self.generator.normal(0.0, scale, size=size)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        return int(self.generator.integers(low, high, endpoint=True))

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice_without_replacement(self, pool: Iterable[int], k: int) -> np.ndarray:
        return self.generator.choice(np.asarray(list(pool)), size=k, replace=False)

    def seed_int(self) -> int:
        """A 31-bit seed for libraries that take an integer ``random_state``."""
        return int(self.generator.integers(0, 2**31 - 1))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def matvec(m: Matrix, v: Vector) -> Vector:
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionMismatchError(
            f"Cannot multiply matrix of shape {m.shape} with vector of shape {v.shape}"
        )
    return m @ v


def sigmoid(v: Vector) -> Vector:
    return expit(np.asarray(v, dtype=np.float64))


def stable_softmax(scores: Vector) -> Vector:
    """Exp-normalize after subtracting the maximum score."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InputValidationError("Cannot take the softmax of an empty score vector")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("Softmax scores must be finite")
    return softmax(scores)


def stable_log_softmax(scores: Vector) -> Vector:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InputValidationError("Cannot take the softmax of an empty score vector")
    return log_softmax(scores)


def sample_categorical(probs: Vector, rng: RngStream) -> int:
    """
    Draw an index with probability ``probs[i]``.

    Raises:
        ProbabilityError: if an entry is negative or the vector does not sum to 1 (1e-9)
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ProbabilityError("Categorical distribution must be a non-empty vector")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ProbabilityError("Categorical distribution has negative or non-finite entries")
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise ProbabilityError(f"Categorical distribution sums to {total!r}, expected 1")
    return int(rng.generator.choice(probs.size, p=probs))


def finite_diff_grad(f: Callable[[Vector], float], at: Vector, eps: float = 1e-5) -> Vector:
    """
    Central-difference gradient of a scalar function of a flat parameter vector.

    Args:
        f: scalar function
        at: point of evaluation
        eps: step size

    Returns:
        Vector of (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)

    Raises:
        NonFiniteError: if any evaluation of f is not finite
    """
    x0 = np.array(at, dtype=np.float64, ndmin=1)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        x = x0.copy()
        x[i] = x0[i] + eps
        f_plus = float(f(x))
        x[i] = x0[i] - eps
        f_minus = float(f(x))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"Function is not finite near coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2 * eps)
    logger.debug(f"Finite-difference gradient over {x0.size} coordinates (eps={eps})")
    return grad
