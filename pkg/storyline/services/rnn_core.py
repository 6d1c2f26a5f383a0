# Elman RNN with a softmax-over-candidates loss, BPTT and momentum SGD
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from storyline.exceptions import DimensionMismatchError, InputValidationError, NonFiniteError
from storyline.models.album import Album
from storyline.models.rnn import Gradients, MomentumState, RnnParams, StepOutput
from storyline.schemas.config import TrainConfig
from storyline.services.numerics import (
    RngStream,
    matvec,
    sigmoid,
    stable_log_softmax,
    stable_softmax,
)

logger = logging.getLogger(__name__)

INIT_SCALE = 0.1


def init_params(input_dim: int, hidden_size: int, rng: RngStream) -> RnnParams:
    """Draw every weight i.i.d. from Uniform(-0.1, 0.1)."""
    if input_dim < 1 or hidden_size < 1:
        raise InputValidationError(f"Invalid network size D={input_dim}, H={hidden_size}")
    return RnnParams(
        w_in=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden_size, input_dim)),
        w_rec=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden_size, hidden_size)),
        w_out=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(input_dim, hidden_size)),
    )


def forward_step(p: RnnParams, x: np.ndarray, h_prev: np.ndarray) -> StepOutput:
    """h = sigmoid(W_I x + W_R h_prev); y = W_O h."""
    if x.shape != (p.input_dim,) or h_prev.shape != (p.hidden_size,):
        raise DimensionMismatchError(
            f"forward_step expects x of length {p.input_dim} and h of length {p.hidden_size}, "
            f"got {x.shape} and {h_prev.shape}"
        )
    h = sigmoid(matvec(p.w_in, x) + matvec(p.w_rec, h_prev))
    return StepOutput(h=h, y=matvec(p.w_out, h))


def _candidate_matrix(candidates) -> np.ndarray:
    matrix = np.asarray(candidates, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise InputValidationError("Candidate set must be a non-empty list of vectors")
    return matrix


def score_future(y: np.ndarray, candidates) -> np.ndarray:
    """Softmax over dot products between the network output and each candidate."""
    matrix = _candidate_matrix(candidates)
    if matrix.shape[1] != y.shape[0]:
        raise DimensionMismatchError(f"Candidates have dimension {matrix.shape[1]}, output has {y.shape[0]}")
    return stable_softmax(matrix @ y)


def check_story_indices(z: Sequence[int], length: int, min_picks: int = 2) -> Tuple[int, ...]:
    """
    Validate 0-based story indices against an album of ``length`` images.

    Raises:
        InputValidationError: too few picks, out of bounds or not strictly increasing
    """
    z = tuple(int(i) for i in z)
    if len(z) < min_picks:
        raise InputValidationError(f"A story needs at least {min_picks} indices, got {len(z)}")
    if z[0] < 0 or z[-1] >= length:
        raise InputValidationError(f"Story indices {z} out of bounds for album of length {length}")
    if any(b <= a for a, b in zip(z, z[1:])):
        raise InputValidationError(f"Story indices {z} are not strictly increasing")
    return z


def story_sequence(features: np.ndarray, z: Sequence[int]):
    """
    Unroll inputs for a story: step n consumes x[z_n], scores every image after z_n,
    and the target is the position of z_{n+1} within that future set.
    """
    z = check_story_indices(z, features.shape[0])
    inputs = features[list(z[:-1])]
    candidate_sets = [features[current + 1:] for current in z[:-1]]
    targets = [nxt - current - 1 for current, nxt in zip(z, z[1:])]
    return inputs, candidate_sets, targets


def loss_and_grads(
    p: RnnParams,
    inputs: np.ndarray,
    candidate_sets: List[np.ndarray],
    targets: List[int],
    compute_grads: bool = True,
) -> Tuple[float, Optional[Gradients]]:
    """
    Negative log-likelihood of a target sequence and its exact BPTT gradient.

    Args:
        p: network parameters
        inputs: S x D matrix; row s is fed at step s (h starts at zeros)
        candidate_sets: per-step K_s x D candidate matrices
        targets: per-step index of the correct candidate

    Returns:
        (nll, gradients) with gradients None when ``compute_grads`` is False
    """
    h_prev = np.zeros(p.hidden_size)
    hidden, previous, outputs, probabilities = [], [], [], []
    nll = 0.0

    for x, candidates, target in zip(inputs, candidate_sets, targets):
        step = forward_step(p, x, h_prev)
        log_probs = stable_log_softmax(candidates @ step.y)
        nll -= float(log_probs[target])
        if compute_grads:
            previous.append(h_prev)
            hidden.append(step.h)
            outputs.append(step.y)
            probabilities.append(np.exp(log_probs))
        h_prev = step.h

    if not np.isfinite(nll):
        raise NonFiniteError("Sequence negative log-likelihood is not finite")
    if not compute_grads:
        return nll, None

    g_in = np.zeros_like(p.w_in)
    g_rec = np.zeros_like(p.w_rec)
    g_out = np.zeros_like(p.w_out)
    dh_next = np.zeros(p.hidden_size)

    for s in reversed(range(len(targets))):
        residual = probabilities[s].copy()
        residual[targets[s]] -= 1.0
        dy = candidate_sets[s].T @ residual
        g_out += np.outer(dy, hidden[s])
        dh = p.w_out.T @ dy + dh_next
        da = dh * hidden[s] * (1.0 - hidden[s])
        g_in += np.outer(da, inputs[s])
        g_rec += np.outer(da, previous[s])
        dh_next = p.w_rec.T @ da

    grads = Gradients(w_in=g_in, w_rec=g_rec, w_out=g_out)
    grads.check_finite("gradients")
    return nll, grads


def sequence_nll(p: RnnParams, album: Album, z: Sequence[int]) -> float:
    """-sum_n log P(x[z_{n+1}] | x[z_1..z_n]) with the softmax over each future set."""
    nll, _ = loss_and_grads(p, *story_sequence(album.features, z), compute_grads=False)
    return nll


def bptt_grads(p: RnnParams, album: Album, z: Sequence[int]) -> Gradients:
    """Exact gradient of ``sequence_nll``, unrolled over all N - 1 steps."""
    _, grads = loss_and_grads(p, *story_sequence(album.features, z))
    return grads


def sgd_update(
    p: RnnParams,
    g: Gradients,
    cfg: TrainConfig,
    m: MomentumState,
    learning_rate: Optional[float] = None,
) -> Tuple[RnnParams, MomentumState]:
    """
    One momentum step with clipped gradients and L2 weight decay.

    velocity <- momentum * velocity - lr * (clip(g) + weight_decay * param)
    param <- param + velocity

    Raises:
        NonFiniteError: if the gradient has non-finite entries
    """
    g.check_finite("gradients")
    lr = cfg.learning_rate if learning_rate is None else learning_rate

    new_params, new_velocity = [], []
    for param, grad, velocity in zip(p.matrices(), g.matrices(), m.velocity.matrices()):
        if param.shape != grad.shape or param.shape != velocity.shape:
            raise DimensionMismatchError(f"Gradient shape {grad.shape} does not match parameter {param.shape}")
        clipped = np.clip(grad, -cfg.grad_clip, cfg.grad_clip)
        v = cfg.momentum * velocity - lr * (clipped + cfg.weight_decay * param)
        new_velocity.append(v)
        new_params.append(param + v)

    return RnnParams(*new_params), MomentumState(RnnParams(*new_velocity))


class LearningRateSchedule:
    """
    Plateau schedule: multiply the rate by ``lr_decay_factor`` after ``plateau_patience``
    consecutive epochs without a better score; exhausted once below ``min_learning_rate``.
    """

    def __init__(self, cfg: TrainConfig):
        self.learning_rate = cfg.learning_rate
        self.patience = cfg.plateau_patience
        self.factor = cfg.lr_decay_factor
        self.min_learning_rate = cfg.min_learning_rate
        self.best = -np.inf
        self.stale_epochs = 0

    def observe(self, score: float) -> bool:
        """Record an epoch score (higher is better); returns True if it improved."""
        if score > self.best:
            self.best = score
            self.stale_epochs = 0
            return True
        self.stale_epochs += 1
        if self.stale_epochs >= self.patience:
            self.learning_rate *= self.factor
            self.stale_epochs = 0
            logger.info(f"Validation plateau, learning rate reduced to {self.learning_rate:.3g}")
        return False

    @property
    def exhausted(self) -> bool:
        return self.learning_rate < self.min_learning_rate
