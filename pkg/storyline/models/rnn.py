# Elman network parameter containers
from dataclasses import dataclass

import numpy as np

from storyline.exceptions import DimensionMismatchError, NonFiniteError


@dataclass(frozen=True)
class RnnParams:
    """
    Weights of the bias-free Elman network.

    w_in: H x D input weights, w_rec: H x H recurrent weights, w_out: D x H output weights.
    The same container holds gradients and momentum velocities.
    """

    w_in: np.ndarray
    w_rec: np.ndarray
    w_out: np.ndarray

    def __post_init__(self):
        hidden, dim = self.w_in.shape
        if self.w_rec.shape != (hidden, hidden) or self.w_out.shape != (dim, hidden):
            raise DimensionMismatchError(
                f"Inconsistent weight shapes: w_in {self.w_in.shape}, "
                f"w_rec {self.w_rec.shape}, w_out {self.w_out.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return int(self.w_in.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.w_in.shape[1])

    def matrices(self):
        return (self.w_in, self.w_rec, self.w_out)

    def flatten(self) -> np.ndarray:
        return np.concatenate([m.ravel() for m in self.matrices()])

    def unflatten(self, flat: np.ndarray) -> "RnnParams":
        """Rebuild parameters of this shape from a flat vector."""
        parts = []
        offset = 0
        for m in self.matrices():
            parts.append(np.asarray(flat[offset:offset + m.size], dtype=np.float64).reshape(m.shape))
            offset += m.size
        return RnnParams(*parts)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(m)) for m in self.matrices())

    def check_finite(self, what: str = "parameters"):
        if not self.is_finite():
            raise NonFiniteError(f"Non-finite values in {what}")

    @classmethod
    def zeros(cls, input_dim: int, hidden_size: int) -> "RnnParams":
        return cls(
            w_in=np.zeros((hidden_size, input_dim)),
            w_rec=np.zeros((hidden_size, hidden_size)),
            w_out=np.zeros((input_dim, hidden_size)),
        )

    @classmethod
    def zeros_like(cls, other: "RnnParams") -> "RnnParams":
        return cls.zeros(other.input_dim, other.hidden_size)


Gradients = RnnParams


@dataclass(frozen=True)
class MomentumState:
    velocity: RnnParams

    @classmethod
    def zeros_like(cls, params: RnnParams) -> "MomentumState":
        return cls(velocity=RnnParams.zeros_like(params))


@dataclass(frozen=True)
class StepOutput:
    h: np.ndarray
    y: np.ndarray
