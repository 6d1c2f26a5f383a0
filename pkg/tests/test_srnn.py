"""
Tests for story sampling, the brute-force marginal, subsets and EM training.
"""
import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from storyline.exceptions import (
    AlbumTooShortError,
    CombinatorialLimitError,
    InfeasibleRangeError,
    InputValidationError,
    InsufficientDataError,
)
from storyline.models.album import Dataset
from storyline.models.rnn import RnnParams
from storyline.models.story import SrnnModel, StoryMode, StoryPrior, StoryRanking, StorySample
from storyline.schemas.config import TrainConfig
from storyline.services.numerics import RngStream
from storyline.services.rnn_core import init_params
from storyline.services.srnn_service import (
    diverse_subset,
    draw_story,
    estep_sample_z,
    feasible_range,
    marginal_loglik_bruteforce,
    posterior_sample_z,
    prior_log_weights,
    sample_dataset_storylines,
    sample_storylines,
    shuffle_albums,
    story_gain,
    story_log_prior,
    story_loglik,
    train,
    training_story,
)
from tests.conftest import make_album, random_album, random_model, sequential_draw_logprob


class TestFeasibleRange:
    """Index windows that keep the story completable."""

    def test_counting_remaining_slots(self):
        # 1-based: T=10, N=3, z_1=2 -> (3, 9)
        assert feasible_range(1, 1, 3, 10) == (2, 8)

    def test_tight_case(self):
        for picks_made in range(1, 4):
            lo, hi = feasible_range(picks_made - 1, picks_made, 4, 4)
            assert lo == hi == picks_made

    def test_exhausted_tail(self):
        with pytest.raises(InfeasibleRangeError):
            feasible_range(4, 2, 3, 5)

    def test_invalid_step(self):
        with pytest.raises(InputValidationError):
            feasible_range(0, 3, 3, 5)


class TestPrior:
    """Both priors normalize over all ordered subsets."""

    @pytest.mark.parametrize("prior", list(StoryPrior))
    @pytest.mark.parametrize("length,story_length", [(4, 2), (6, 3), (7, 4)])
    def test_sums_to_one(self, length, story_length, prior):
        total = logsumexp([
            story_log_prior(z, length, prior) for z in itertools.combinations(range(length), story_length)
        ])
        assert math.isclose(total, 0.0, abs_tol=1e-12)

    def test_first_pick_marginal(self):
        # Share of 3-subsets of 7 images that start at each index
        expected = [math.comb(6 - j, 2) / math.comb(7, 3) for j in range(5)]
        weights = np.exp(prior_log_weights(0, 4, 2, 7))
        assert np.allclose(weights / weights.sum(), expected)

    def test_last_pick_is_flat(self):
        assert np.allclose(prior_log_weights(3, 8, 0, 9), 0.0)

    def test_uniform_value(self):
        assert math.isclose(story_log_prior((0, 2, 5), 7), -math.log(35))

    def test_sequential_value(self):
        # Windows of 5, 5 and 4 candidates
        assert math.isclose(story_log_prior((0, 2, 5), 7, StoryPrior.SEQUENTIAL), -math.log(100))

    def test_sequential_weights_are_flat(self):
        assert np.array_equal(prior_log_weights(0, 4, 2, 7, StoryPrior.SEQUENTIAL), np.zeros(5))


class TestEstepSampler:
    """Sequential posterior sampling of skip indices."""

    def test_forced_subset(self):
        album = random_album(4, 3, seed=0)
        model = random_model(3, 2, 4, seed=0)
        assert estep_sample_z(model, album, RngStream(1)) == (0, 1, 2, 3)

    def test_samples_are_valid_stories(self):
        album = random_album(12, 3, seed=1)
        model = random_model(3, 4, 5, seed=1)
        rng = RngStream(2)
        for _ in range(100):
            z = estep_sample_z(model, album, rng)
            assert len(z) == 5
            assert all(b > a for a, b in zip(z, z[1:]))
            assert 0 <= z[0] and z[-1] < 12

    def test_album_too_short(self):
        with pytest.raises(AlbumTooShortError):
            estep_sample_z(random_model(3, 2, 5, seed=0), random_album(4, 3, seed=0), RngStream(0))

    @pytest.mark.parametrize("prior", list(StoryPrior))
    def test_zero_model_follows_prior(self, prior):
        album = random_album(6, 2, seed=4)
        model = SrnnModel(params=RnnParams.zeros(2, 3), story_length=3, prior=prior)
        rng = RngStream(5)
        counts = {}
        draws = 30000
        for _ in range(draws):
            z = estep_sample_z(model, album, rng)
            counts[z] = counts.get(z, 0) + 1
        for z in itertools.combinations(range(6), 3):
            # Uniform model term, so draws follow the prior alone
            expected = math.exp(story_log_prior(z, 6, prior))
            assert abs(counts.get(z, 0) / draws - expected) < 0.01


class TestPosteriorSampler:
    """Importance resampling of sequential draws."""

    def test_single_proposal_is_the_sequential_draw(self):
        album = random_album(9, 3, seed=11)
        model = random_model(3, 4, 3, seed=11)
        assert posterior_sample_z(model, album, RngStream(3), 1) == estep_sample_z(model, album, RngStream(3))

    @pytest.mark.parametrize("prior", list(StoryPrior))
    def test_weight_is_posterior_over_proposal(self, prior):
        album = random_album(7, 3, seed=12)
        base = random_model(3, 4, 3, seed=12, scale=1.5)
        model = SrnnModel(base.params, story_length=3, prior=prior)
        rng = RngStream(4)
        for _ in range(30):
            draw = draw_story(model, album, rng)
            z = draw.indices
            log_target = story_loglik(model, album, z) + story_log_prior(z, album.length, prior)
            log_proposal = sequential_draw_logprob(model, album, z)
            assert math.isclose(log_target - log_proposal, draw.log_weight, abs_tol=1e-9)

    def test_draw_quantities_agree(self):
        album = random_album(10, 3, seed=13)
        model = random_model(3, 4, 4, seed=13)
        draw = draw_story(model, album, RngStream(5))
        assert math.isclose(draw.loglik, story_loglik(model, album, draw.indices), abs_tol=1e-9)
        assert math.isclose(draw.gain, story_gain(model, album, draw.indices), abs_tol=1e-9)

    @pytest.mark.parametrize("prior", list(StoryPrior))
    def test_sequential_oracle_normalizes(self, prior):
        album = random_album(7, 3, seed=14)
        model = SrnnModel(random_model(3, 4, 3, seed=14).params, story_length=3, prior=prior)
        total = logsumexp([
            sequential_draw_logprob(model, album, z) for z in itertools.combinations(range(7), 3)
        ])
        assert math.isclose(total, 0.0, abs_tol=1e-9)

    def test_many_proposals_stay_valid_and_deterministic(self):
        album = random_album(11, 3, seed=15)
        model = random_model(3, 4, 4, seed=15)
        first = [posterior_sample_z(model, album, RngStream(6), 10) for _ in range(3)]
        assert first == [posterior_sample_z(model, album, RngStream(6), 10) for _ in range(3)]
        for z in first:
            assert len(z) == 4 and list(z) == sorted(set(z)) and z[-1] < 11

    @pytest.mark.parametrize("proposals", [0, -2])
    def test_invalid_proposals(self, proposals):
        with pytest.raises(InputValidationError):
            posterior_sample_z(random_model(2, 2, 2, seed=0), random_album(4, 2, seed=0), RngStream(0), proposals)


class TestFeasibility:
    """Every sampled story is strictly increasing and in bounds."""

    def test_ten_thousand_draws(self):
        shapes = RngStream(31)
        checked = 0
        for case in range(100):
            story_length = shapes.integers(2, 6)
            length = shapes.integers(story_length, story_length + 8)
            album = random_album(length, 3, seed=500 + case)
            model = random_model(3, 3, story_length, seed=500 + case, scale=2.0)
            rng = RngStream(case, 7)
            for _ in range(100):
                z = estep_sample_z(model, album, rng)
                assert len(z) == story_length
                assert 0 <= z[0] and z[-1] < length
                assert all(b > a for a, b in zip(z, z[1:]))
                checked += 1
        assert checked == 10_000


class TestSampleStorylines:
    """Best-of-K story selection."""

    def test_single_draw_is_the_sample(self):
        album = random_album(9, 3, seed=3)
        model = random_model(3, 4, 3, seed=3)
        best = sample_storylines(model, album, 1, RngStream(7))
        assert best.indices == estep_sample_z(model, album, RngStream(7))

    def test_loglik_is_story_likelihood(self):
        album = random_album(9, 3, seed=3)
        model = random_model(3, 4, 3, seed=3)
        best = sample_storylines(model, album, 20, RngStream(8))
        assert math.isclose(best.loglik, story_loglik(model, album, best.indices), rel_tol=1e-9)

    def test_monotone_in_count(self):
        album = random_album(10, 3, seed=4)
        model = random_model(3, 4, 4, seed=4)
        small = sample_storylines(model, album, 50, RngStream(9))
        large = sample_storylines(model, album, 500, RngStream(9))
        assert large.score >= small.score

    def test_forced_story(self):
        album = random_album(3, 2, seed=5)
        model = random_model(2, 2, 3, seed=5)
        best = sample_storylines(model, album, 10, RngStream(0))
        assert best.indices == (0, 1, 2)

    def test_invalid_count(self):
        with pytest.raises(InputValidationError):
            sample_storylines(random_model(2, 2, 2, seed=0), random_album(3, 2, seed=0), 0, RngStream(0))

    def test_output_is_one_based(self):
        sample = StorySample(album_id="a", indices=(0, 3, 5), loglik=-1.5)
        assert sample.to_dict() == {"album": "a", "indices": [1, 4, 6], "loglik": -1.5, "score": -1.5}
        assert StorySample.from_dict(sample.to_dict()) == sample

    def test_threads_do_not_change_results(self, tiny_concept, tiny_model):
        ds, _ = tiny_concept
        serial = sample_dataset_storylines(tiny_model, ds, 10, RngStream(1), threads=1)
        parallel = sample_dataset_storylines(tiny_model, ds, 10, RngStream(1), threads=3)
        assert serial == parallel
        assert [s.album_id for s in serial] == [a.album_id for a in ds.albums]

    def test_short_albums_skipped(self):
        ds = Dataset("c", (random_album(2, 3, seed=0, album_id="short"), random_album(6, 3, seed=1, album_id="long")))
        stories = sample_dataset_storylines(random_model(3, 2, 3, seed=0), ds, 5, RngStream(0))
        assert [s.album_id for s in stories] == ["long"]

    def test_score_is_story_gain(self):
        album = random_album(10, 3, seed=16)
        model = random_model(3, 4, 4, seed=16)
        best = sample_storylines(model, album, 40, RngStream(10))
        assert math.isclose(best.score, story_gain(model, album, best.indices), abs_tol=1e-9)

    def test_gain_ignores_position_under_uniform_model(self):
        album = random_album(8, 3, seed=17)
        model = SrnnModel(params=RnnParams.zeros(3, 4), story_length=3)
        head, tail = (0, 1, 2), (5, 6, 7)
        assert story_loglik(model, album, tail) > story_loglik(model, album, head) + 1.0
        for z in itertools.combinations(range(8), 3):
            assert math.isclose(story_gain(model, album, z), 0.0, abs_tol=1e-9)

    def test_best_has_highest_gain_among_draws(self):
        album = random_album(9, 3, seed=18)
        model = random_model(3, 4, 3, seed=18, scale=1.5)
        rng = RngStream(11)
        draws = [draw_story(model, album, rng) for _ in range(30)]
        best = sample_storylines(model, album, 30, RngStream(11))
        assert best.score == max(draw.gain for draw in draws)

    def test_loglik_ranking_keeps_highest_likelihood(self):
        album = random_album(9, 3, seed=18)
        model = random_model(3, 4, 3, seed=18, scale=1.5)
        rng = RngStream(11)
        draws = [draw_story(model, album, rng) for _ in range(30)]
        best = sample_storylines(model, album, 30, RngStream(11), rank_by=StoryRanking.LOGLIK)
        assert best.score == best.loglik == max(draw.loglik for draw in draws)

    def test_loglik_ranking_prefers_the_tail_under_uniform_model(self):
        album = random_album(8, 3, seed=17)
        model = SrnnModel(params=RnnParams.zeros(3, 4), story_length=3)
        best = sample_storylines(model, album, 600, RngStream(12), rank_by=StoryRanking.LOGLIK)
        assert best.indices == (5, 6, 7)


class TestMarginal:
    """Exhaustive-enumeration oracle."""

    def test_identical_features_closed_form(self):
        album = make_album(np.ones((4, 3)))
        model = random_model(3, 2, 2, seed=6)
        # Six subsets at prior 1/6, model term 1 / (3 - z_1); the terms sum to 3
        assert math.isclose(marginal_loglik_bruteforce(model, album), math.log(1 / 2), rel_tol=1e-9)

    def test_identical_features_closed_form_sequential_prior(self):
        album = make_album(np.ones((4, 3)))
        model = SrnnModel(random_model(3, 2, 2, seed=6).params, story_length=2, prior=StoryPrior.SEQUENTIAL)
        # z_1 uniform over 3 starts, z_2 uniform over 3 - z_1 slots, model term 1 / (3 - z_1)
        assert math.isclose(marginal_loglik_bruteforce(model, album), math.log(11 / 18), rel_tol=1e-9)

    def test_forced_single_term(self):
        album = random_album(3, 2, seed=7)
        model = random_model(2, 3, 3, seed=7)
        assert math.isclose(marginal_loglik_bruteforce(model, album), story_loglik(model, album, (0, 1, 2)))

    def test_dominates_samples(self):
        album = random_album(8, 3, seed=8)
        model = random_model(3, 4, 3, seed=8)
        best = sample_storylines(model, album, 50, RngStream(0))
        marginal = marginal_loglik_bruteforce(model, album)
        assert marginal >= best.loglik + story_log_prior(best.indices, album.length)

    def test_combinatorial_limit(self):
        with pytest.raises(CombinatorialLimitError):
            marginal_loglik_bruteforce(random_model(2, 2, 10, seed=0), random_album(30, 2, seed=0))


class TestDiverseSubset:
    """k-means++ training subsets for the diverse variant."""

    def test_full_selection(self):
        assert diverse_subset(random_album(5, 2, seed=0), 5, RngStream(0)) == (0, 1, 2, 3, 4)

    def test_two_clusters(self):
        features = np.vstack([np.zeros((4, 2)), np.full((4, 2), 10.0)])
        album = make_album(features)
        subset = diverse_subset(album, 2, RngStream(1))
        assert subset[0] < 4 <= subset[1]

    def test_deterministic_sorted_distinct(self):
        album = random_album(20, 3, seed=2)
        first = diverse_subset(album, 6, RngStream(3))
        assert first == diverse_subset(album, 6, RngStream(3))
        assert list(first) == sorted(set(first)) and len(first) == 6

    def test_duplicate_rows_still_give_k_indices(self):
        album = make_album(np.vstack([np.ones((5, 2)), np.zeros((1, 2))]))
        assert len(diverse_subset(album, 3, RngStream(0))) == 3

    def test_too_short(self):
        with pytest.raises(AlbumTooShortError):
            diverse_subset(random_album(3, 2, seed=0), 4, RngStream(0))


class TestTraining:
    """Stochastic EM."""

    def test_zero_epochs_keeps_initialization(self, tiny_concept, tiny_model):
        ds, _ = tiny_concept
        cfg = TrainConfig(hidden_size=6, max_epochs=0)
        trained, history = train(tiny_model, ds, ds, cfg, RngStream(0))
        assert np.array_equal(trained.params.flatten(), tiny_model.params.flatten())
        assert [record.epoch for record in history.epochs] == [0]

    @pytest.mark.parametrize("mode", list(StoryMode))
    def test_modes_are_deterministic(self, tiny_concept, tiny_model, fast_train_config, mode):
        ds, _ = tiny_concept
        model = SrnnModel(tiny_model.params, story_length=3, mode=mode)
        first, history = train(model, ds, ds, fast_train_config, RngStream(4))
        second, _ = train(model, ds, ds, fast_train_config, RngStream(4))
        assert np.array_equal(first.params.flatten(), second.params.flatten())
        assert not np.array_equal(first.params.flatten(), model.params.flatten())
        assert [record.epoch for record in history.epochs] == [0, 1, 2]
        assert all(record.train_nll > 0 for record in history.epochs[1:])

    def test_short_albums_skipped_and_counted(self, tiny_concept, fast_train_config):
        ds, _ = tiny_concept
        albums = ds.albums + (random_album(2, ds.dimension, seed=0, album_id="tiny"),)
        model = SrnnModel(init_params(ds.dimension, 6, RngStream(0)), story_length=3)
        _, history = train(model, Dataset(ds.concept, albums), ds, fast_train_config, RngStream(0))
        assert history.skipped_albums == 1

    def test_no_usable_album(self, tiny_concept, fast_train_config):
        ds, _ = tiny_concept
        model = SrnnModel(init_params(ds.dimension, 6, RngStream(0)), story_length=50)
        with pytest.raises(InsufficientDataError):
            train(model, ds, ds, fast_train_config, RngStream(0))

    def test_shuffled_differs_from_skip(self, tiny_concept, tiny_model, fast_train_config):
        ds, _ = tiny_concept
        skip, _ = train(SrnnModel(tiny_model.params, 3, mode=StoryMode.SKIP), ds, ds, fast_train_config, RngStream(4))
        shuffled, _ = train(
            SrnnModel(tiny_model.params, 3, mode=StoryMode.SHUFFLED), ds, ds, fast_train_config, RngStream(4)
        )
        assert not np.array_equal(skip.params.flatten(), shuffled.params.flatten())
        assert shuffled.mode == StoryMode.SHUFFLED


class TestTrainingStory:
    """The story each M-step trains on."""

    def test_noskip_takes_first_images(self):
        album = random_album(9, 3, seed=19)
        model = SrnnModel(random_model(3, 4, 4, seed=19).params, story_length=4, mode=StoryMode.NOSKIP)
        assert training_story(model, album, RngStream(0), {}, proposals=10) == (0, 1, 2, 3)

    def test_diverse_uses_fixed_subset(self):
        album = random_album(9, 3, seed=19)
        model = SrnnModel(random_model(3, 4, 3, seed=19).params, story_length=3, mode=StoryMode.DIVERSE)
        assert training_story(model, album, RngStream(0), {album.album_id: (1, 4, 8)}) == (1, 4, 8)

    @pytest.mark.parametrize("mode", [StoryMode.SKIP, StoryMode.SHUFFLED])
    def test_skipping_modes_sample_the_posterior(self, mode):
        album = random_album(9, 3, seed=20)
        model = SrnnModel(random_model(3, 4, 3, seed=20).params, story_length=3, mode=mode)
        z = training_story(model, album, RngStream(2), {}, proposals=5)
        assert z == posterior_sample_z(model, album, RngStream(2), 5)


class TestShuffleAlbums:
    """Per-album random image order for the shuffled ablation."""

    def test_rows_are_permuted(self):
        albums = [random_album(6, 3, seed=21, album_id="a"), random_album(9, 3, seed=22, album_id="b")]
        shuffled = shuffle_albums(albums, RngStream(3))
        for before, after in zip(albums, shuffled):
            assert after.album_id == before.album_id
            assert np.array_equal(after.timestamps, before.timestamps)
            assert sorted(after.image_ids) == sorted(before.image_ids)
            order = [before.image_ids.index(image) for image in after.image_ids]
            assert np.array_equal(after.features, before.features[order])

    def test_deterministic(self):
        albums = [random_album(12, 3, seed=23)]
        first = shuffle_albums(albums, RngStream(4))[0]
        assert first.image_ids == shuffle_albums(albums, RngStream(4))[0].image_ids

    def test_rejects_non_permutation(self):
        with pytest.raises(InputValidationError):
            random_album(4, 2, seed=0).permuted([0, 0, 1, 2])
