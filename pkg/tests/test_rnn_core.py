"""
Tests for the Elman network, the softmax-over-futures loss, BPTT and the optimizer.
"""
import math

import numpy as np
import pytest

from storyline.exceptions import DimensionMismatchError, InputValidationError, NonFiniteError
from storyline.models.rnn import MomentumState, RnnParams
from storyline.schemas.config import TrainConfig
from storyline.services.numerics import RngStream, finite_diff_grad
from storyline.services.rnn_core import (
    LearningRateSchedule,
    bptt_grads,
    check_story_indices,
    forward_step,
    init_params,
    score_future,
    sequence_nll,
    sgd_update,
    story_sequence,
)
from tests.conftest import make_album, random_album, random_model


class TestForwardStep:
    """Single recurrent step and candidate scoring."""

    def test_zero_weights(self):
        step = forward_step(RnnParams.zeros(4, 3), np.ones(4), np.zeros(3))
        assert np.allclose(step.h, 0.5)
        assert np.allclose(step.y, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            forward_step(RnnParams.zeros(4, 3), np.ones(5), np.zeros(3))

    def test_inconsistent_weight_shapes(self):
        with pytest.raises(DimensionMismatchError):
            RnnParams(w_in=np.zeros((3, 4)), w_rec=np.zeros((3, 3)), w_out=np.zeros((3, 3)))

    def test_zero_output_scores_uniformly(self):
        probs = score_future(np.zeros(2), np.eye(2)[[0, 1, 0, 1]])
        assert np.allclose(probs, 0.25)

    def test_scores_sum_to_one(self):
        probs = score_future(np.array([1.0, -2.0]), RngStream(0).normal(1.0, size=(6, 2)))
        assert math.isclose(probs.sum(), 1.0)

    def test_empty_candidates(self):
        with pytest.raises(InputValidationError):
            score_future(np.zeros(2), np.zeros((0, 2)))


class TestInitialization:
    """init_params."""

    def test_range_and_shapes(self):
        params = init_params(5, 4, RngStream(1))
        assert params.w_in.shape == (4, 5) and params.w_rec.shape == (4, 4) and params.w_out.shape == (5, 4)
        assert np.all(np.abs(params.flatten()) <= 0.1)

    def test_deterministic(self):
        assert np.array_equal(init_params(5, 4, RngStream(2)).flatten(), init_params(5, 4, RngStream(2)).flatten())

    def test_invalid_size(self):
        with pytest.raises(InputValidationError):
            init_params(0, 4, RngStream(0))


class TestStoryIndices:
    """check_story_indices and story unrolling."""

    @pytest.mark.parametrize("z", [(0,), (2, 1), (0, 0), (0, 5)])
    def test_invalid(self, z):
        with pytest.raises(InputValidationError):
            check_story_indices(z, 5)

    def test_sequence_layout(self):
        features = np.arange(10, dtype=float).reshape(5, 2)
        inputs, candidates, targets = story_sequence(features, (0, 2, 4))
        assert inputs.tolist() == [[0, 1], [4, 5]]
        assert [c.shape[0] for c in candidates] == [4, 2]
        assert targets == [1, 1]


class TestSequenceLikelihood:
    """sequence_nll against closed forms and BPTT against finite differences."""

    def test_zero_model_is_uniform_over_future(self):
        album = random_album(5, 3, seed=1)
        assert math.isclose(sequence_nll(RnnParams.zeros(3, 2), album, (0, 2)), math.log(4))

    def test_two_step_uniform(self):
        album = random_album(6, 3, seed=2)
        expected = math.log(5) + math.log(3)
        assert math.isclose(sequence_nll(RnnParams.zeros(3, 2), album, (0, 2, 4)), expected)

    def test_gradient_matches_finite_differences(self):
        for trial in range(20):
            rng = RngStream(trial, 50)
            dimension, hidden = rng.integers(1, 6), rng.integers(1, 5)
            length = rng.integers(3, 8)
            story_length = rng.integers(2, min(4, length))
            album = random_album(length, dimension, seed=trial)
            params = random_model(dimension, hidden, story_length, seed=trial).params
            z = sorted(int(i) for i in rng.choice_without_replacement(range(length), story_length))

            analytic = bptt_grads(params, album, z).flatten()
            numeric = finite_diff_grad(lambda flat: sequence_nll(params.unflatten(flat), album, z), params.flatten())
            scale = max(np.max(np.abs(numeric)), 1e-8)
            assert np.max(np.abs(analytic - numeric)) / scale < 1e-4, f"trial {trial}"

    def test_nll_matches_hand_unroll(self):
        album = random_album(4, 2, seed=3)
        params = random_model(2, 3, 2, seed=3).params
        step = forward_step(params, album.features[1], np.zeros(3))
        probs = score_future(step.y, album.features[2:])
        assert math.isclose(sequence_nll(params, album, (1, 3)), -math.log(probs[1]))


class TestSgdUpdate:
    """Momentum, clipping and weight decay."""

    def test_zero_gradient_is_fixed_point(self):
        params = random_model(3, 2, 2, seed=0).params
        cfg = TrainConfig(weight_decay=0.0)
        new_params, momentum = sgd_update(params, RnnParams.zeros_like(params), cfg, MomentumState.zeros_like(params))
        assert np.array_equal(new_params.flatten(), params.flatten())
        assert np.all(momentum.velocity.flatten() == 0)

    def test_clipping_before_step(self):
        params = RnnParams.zeros(2, 2)
        grads = RnnParams(w_in=np.full((2, 2), 100.0), w_rec=np.full((2, 2), -100.0), w_out=np.full((2, 2), 1.0))
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0, grad_clip=5.0)
        new_params, _ = sgd_update(params, grads, cfg, MomentumState.zeros_like(params))
        assert np.allclose(new_params.w_in, -0.5)
        assert np.allclose(new_params.w_rec, 0.5)
        assert np.allclose(new_params.w_out, -0.1)

    def test_momentum_accumulates(self):
        params = RnnParams.zeros(1, 1)
        grads = RnnParams(w_in=np.ones((1, 1)), w_rec=np.ones((1, 1)), w_out=np.ones((1, 1)))
        cfg = TrainConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
        params, state = sgd_update(params, grads, cfg, MomentumState.zeros_like(params))
        params, state = sgd_update(params, grads, cfg, state)
        assert np.allclose(state.velocity.w_in, -0.1 * 0.9 - 0.1)
        assert np.allclose(params.w_in, -0.1 + (-0.19))

    def test_weight_decay_shrinks(self):
        params = RnnParams(w_in=np.ones((1, 1)), w_rec=np.ones((1, 1)), w_out=np.ones((1, 1)))
        cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5)
        new_params, _ = sgd_update(params, RnnParams.zeros_like(params), cfg, MomentumState.zeros_like(params))
        assert np.allclose(new_params.flatten(), 0.95)

    def test_small_step_descends(self):
        cfg = TrainConfig(learning_rate=1e-3, weight_decay=0.0)
        decreased = 0
        for trial in range(100):
            album = random_album(6, 3, seed=trial)
            params = random_model(3, 4, 3, seed=trial).params
            z = (0, 2, 5)
            before = sequence_nll(params, album, z)
            new_params, _ = sgd_update(params, bptt_grads(params, album, z), cfg, MomentumState.zeros_like(params))
            decreased += sequence_nll(new_params, album, z) < before
        assert decreased >= 95

    def test_non_finite_gradient(self):
        params = RnnParams.zeros(1, 1)
        grads = RnnParams(w_in=np.full((1, 1), np.nan), w_rec=np.zeros((1, 1)), w_out=np.zeros((1, 1)))
        with pytest.raises(NonFiniteError):
            sgd_update(params, grads, TrainConfig(), MomentumState.zeros_like(params))


class TestLearningRateSchedule:
    """Plateau decay and exhaustion."""

    def test_decays_after_patience(self):
        schedule = LearningRateSchedule(TrainConfig(learning_rate=0.05, plateau_patience=3))
        assert schedule.observe(1.0)
        for _ in range(2):
            schedule.observe(0.5)
        assert schedule.learning_rate == 0.05
        schedule.observe(0.5)
        assert math.isclose(schedule.learning_rate, 0.025)

    def test_improvement_resets_patience(self):
        schedule = LearningRateSchedule(TrainConfig(plateau_patience=2))
        schedule.observe(1.0)
        schedule.observe(0.0)
        schedule.observe(2.0)
        schedule.observe(0.0)
        assert schedule.learning_rate == 0.05

    def test_exhausted_below_minimum(self):
        schedule = LearningRateSchedule(TrainConfig(learning_rate=1e-4, plateau_patience=1, min_learning_rate=1e-5))
        schedule.observe(1.0)
        while not schedule.exhausted:
            schedule.observe(0.0)
        assert schedule.learning_rate < 1e-5


def test_album_helper_matches_layout():
    album = make_album(np.eye(3))
    assert album.length == 3 and album.dimension == 3
