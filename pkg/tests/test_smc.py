import math

import numpy as np
import pytest

from src.errors import ModelViolationError, PossibilityError
from src.possibility import GaussianPossibility, gauss_predict, gauss_update
from src.smc import (
    LinearGaussianTransition,
    ParticleSet,
    RngStreams,
    _draw_indices,
    bayes_style_update,
    effective_size,
    make_rng,
    point_estimate,
    propagate,
    resample,
    sample_from_possibility,
    select,
    sup_weights,
)


def brute_force_sup(targets, sources, weights, F, Q):
    out = []
    for x in targets:
        out.append(max(math.exp(-0.5 * (x - F * s) ** 2 / Q) * w for s, w in zip(sources, weights)))
    return np.array(out)


class TestParticleSet:

    def test_one_dimensional_states_become_columns(self):
        p = ParticleSet([0.0, 1.0, 2.0], [1.0, 0.5, 0.5])
        assert p.states.shape == (3, 1)
        assert p.dim == 1

    def test_normalized_max_is_exactly_one(self):
        p = ParticleSet([0.0, 1.0, 2.0], [0.3, 0.1, 0.2]).normalized()
        assert p.max_weight == 1.0
        assert p.weights[1] == pytest.approx(1 / 3)

    def test_empty_set_rejected(self):
        with pytest.raises(ModelViolationError):
            ParticleSet(np.empty((0, 2)), np.empty(0))

    def test_negative_weight_rejected(self):
        with pytest.raises(PossibilityError):
            ParticleSet([0.0, 1.0], [1.0, -0.1])

    def test_all_zero_weights_cannot_normalize(self):
        with pytest.raises(ModelViolationError):
            ParticleSet([0.0, 1.0], [0.0, 0.0]).normalized()

    def test_arrays_are_frozen(self):
        p = ParticleSet([0.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            p.weights[0] = 0.5


class TestSampling:

    def test_single_particle(self):
        p = sample_from_possibility(GaussianPossibility([1.0, 2.0], np.eye(2)), 1, make_rng(0))
        assert p.size == 1
        assert p.weights[0] == 1.0

    def test_sample_mean(self):
        n = 100000
        pi = GaussianPossibility([3.0, -1.0], [[4.0, 0.5], [0.5, 1.0]])
        p = sample_from_possibility(pi, n, make_rng(11))
        sigma = np.sqrt(np.diag(pi.covariance))
        assert np.all(np.abs(p.states.mean(axis=0) - pi.mean) < 4 * sigma / math.sqrt(n))
        assert p.max_weight == 1.0

    def test_same_seed_same_particles(self):
        pi = GaussianPossibility([0.0], [[2.0]])
        a = sample_from_possibility(pi, 500, make_rng(5))
        b = sample_from_possibility(pi, 500, make_rng(5))
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.weights, b.weights)

    def test_zero_count(self):
        with pytest.raises(ModelViolationError):
            sample_from_possibility(GaussianPossibility([0.0], [[1.0]]), 0, make_rng(0))


class TestRngStreams:

    def test_same_seed_same_streams(self):
        a, b = RngStreams.from_seed(42), RngStreams.from_seed(42)
        for name in RngStreams.ORDER:
            assert getattr(a, name).random() == getattr(b, name).random()

    def test_streams_are_independent(self):
        s = RngStreams.from_seed(42)
        draws = {getattr(s, name).random() for name in RngStreams.ORDER}
        assert len(draws) == 4


class TestPropagate:

    @pytest.mark.parametrize("mode", ["ancestor", "exact"])
    def test_single_particle_keeps_weight_one(self, mode):
        t = LinearGaussianTransition([[1.0]], [[0.5]])
        p = propagate(ParticleSet([[2.0]], [1.0]), t, mode, make_rng(1))
        assert p.weights[0] == 1.0

    def test_ancestor_mode_keeps_weights(self):
        t = LinearGaussianTransition([[1.0]], [[0.5]])
        p = ParticleSet([0.0, 1.0, 2.0], [1.0, 0.5, 0.25])
        out = propagate(p, t, "ancestor", make_rng(3))
        assert np.array_equal(out.weights, p.weights)
        assert not np.array_equal(out.states, p.states)

    def test_unknown_mode(self):
        t = LinearGaussianTransition([[1.0]], [[0.5]])
        with pytest.raises(ValueError):
            propagate(ParticleSet([0.0], [1.0]), t, "nearest", make_rng(0))

    def test_sup_weights_on_grid(self):
        grid = np.arange(-10.0, 11.0)
        weights = np.exp(-0.5 * grid ** 2 / 9.0)
        t = LinearGaussianTransition([[0.8]], [[1.5]])
        p = ParticleSet(grid, weights)
        got = sup_weights(grid[:, None], p, t)
        expected = brute_force_sup(grid, grid, weights, 0.8, 1.5)
        assert np.allclose(got, expected, atol=1e-10, rtol=0)

    def test_exact_mode_matches_brute_force(self):
        grid = np.arange(-10.0, 11.0)
        weights = np.exp(-0.5 * (grid - 2.0) ** 2 / 4.0)
        t = LinearGaussianTransition([[1.0]], [[2.0]])
        p = ParticleSet(grid, weights)
        out = propagate(p, t, "exact", make_rng(8))
        expected = brute_force_sup(out.states[:, 0], grid, weights, 1.0, 2.0)
        assert np.allclose(out.weights, expected / expected.max(), atol=1e-10, rtol=0)
        assert out.max_weight == 1.0

    def test_exact_mode_blocks_agree_with_one_block(self, monkeypatch):
        import src.smc as smc
        rng = make_rng(4)
        t = LinearGaussianTransition(np.eye(2), 0.3 * np.eye(2))
        p = ParticleSet(rng.normal(size=(50, 2)), rng.random(50))
        targets = rng.normal(size=(40, 2))
        whole = sup_weights(targets, p, t)
        monkeypatch.setattr(smc, "_EXACT_BLOCK_BYTES", 8 * 50 * 2 * 3)
        assert np.allclose(sup_weights(targets, p, t), whole, atol=1e-15, rtol=0)


class TestBayesStyleUpdate:

    def test_constant_likelihood(self):
        p = ParticleSet([0.0, 1.0, 2.0], [1.0, 0.4, 0.2])
        out = bayes_style_update(p, np.ones(3))
        assert np.array_equal(out.weights, p.weights)

    def test_two_particles(self):
        out = bayes_style_update(ParticleSet([0.0, 1.0], [1.0, 1.0]), [0.5, 0.25])
        assert list(out.weights) == [1.0, 0.5]

    def test_concentrated_likelihood(self):
        p = ParticleSet([0.0, 1.0, 2.0], [1.0, 0.8, 0.6])
        out = bayes_style_update(p, [0.01, 0.9, 0.02])
        assert out.weights[1] == 1.0
        assert out.weights[0] == pytest.approx(0.01 / 0.72)

    def test_callable_likelihood(self):
        g = GaussianPossibility([1.0], [[1.0]])
        p = ParticleSet([0.0, 1.0], [1.0, 1.0])
        out = bayes_style_update(p, g)
        assert out.weights[1] == 1.0
        assert out.weights[0] == pytest.approx(math.exp(-0.5))

    def test_incompatible_likelihood(self):
        with pytest.raises(ModelViolationError):
            bayes_style_update(ParticleSet([0.0, 1.0], [1.0, 1.0]), [0.0, 0.0])


class TestResample:

    def test_equal_weights_bootstrap(self):
        p = ParticleSet([0.0, 1.0, 2.0, 3.0], np.ones(4))
        out = resample(p, make_rng(2))
        assert out.size == 4
        assert np.all(out.weights == 1.0)
        assert set(out.states[:, 0]) <= {0.0, 1.0, 2.0, 3.0}

    def test_negligible_particle_is_dropped(self):
        out = resample(ParticleSet([0.0, 5.0], [1.0, 1e-9]), make_rng(9))
        assert np.all(out.states[:, 0] == 0.0)

    def test_deterministic(self):
        p = ParticleSet(np.linspace(0, 1, 20), np.linspace(0.1, 1, 20))
        a = resample(p, make_rng(6))
        b = resample(p, make_rng(6))
        assert np.array_equal(a.states, b.states)

    def test_systematic_counts(self):
        idx = _draw_indices(np.array([1.0, 1.0, 2.0]), 4, make_rng(0), "systematic")
        assert np.bincount(idx, minlength=3).tolist() == [1, 1, 2]

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            resample(ParticleSet([0.0, 1.0], [1.0, 1.0]), make_rng(0), scheme="residual")

    def test_roughening_jitters_states(self):
        p = ParticleSet(np.linspace(0, 10, 100), np.ones(100))
        plain = resample(p, make_rng(7))
        rough = resample(p, make_rng(7), roughening=0.2)
        assert np.all(rough.weights == 1.0)
        assert not np.array_equal(plain.states, rough.states)
        # jitter std = 0.2 * 10 / 100
        assert np.max(np.abs(rough.states - plain.states)) < 6 * 0.02


def test_effective_size():
    assert effective_size(ParticleSet([0.0, 1.0, 2.0], np.ones(3))) == pytest.approx(3.0)
    assert effective_size(ParticleSet([0.0, 1.0], [1.0, 0.0])) == pytest.approx(1.0)


def test_select_keeps_heaviest():
    rng = make_rng(12)
    p = ParticleSet(np.arange(10.0), np.linspace(0.05, 0.5, 10)).normalized()
    out = select(p, 3, rng)
    assert out.size == 3
    assert out.states[0, 0] == 9.0
    assert out.max_weight == 1.0


def test_select_keeps_possibility_values():
    p = ParticleSet(np.arange(10.0), np.linspace(0.05, 0.5, 10)).normalized()
    out = select(p, 50, make_rng(4))
    source = out.states[:, 0].astype(int)
    assert np.array_equal(out.weights, p.weights[source])


class TestPointEstimate:

    def test_single_particle(self):
        assert point_estimate(ParticleSet([[3.0, 4.0]], [1.0])).tolist() == [3.0, 4.0]

    def test_symmetric_pair(self):
        assert point_estimate(ParticleSet([0.0, 2.0], [1.0, 1.0]))[0] == 1.0

    def test_weighted_mean(self):
        assert point_estimate(ParticleSet([0.0, 1.0, 2.0], [1.0, 0.5, 0.5]))[0] == pytest.approx(0.75)


def test_matches_kalman_mean():
    # Zero-innovation measurements keep proposal, weights and posterior
    # centred on the same point, so the weighted mean is unbiased.
    n, F, Q, R = 10000, 0.9, 0.5, 1.0
    rng = make_rng(2024)
    kalman = GaussianPossibility([5.0], [[4.0]])
    transition = LinearGaussianTransition([[F]], [[Q]])
    particles = sample_from_possibility(kalman, n, rng)
    noise = GaussianPossibility([0.0], [[R]])

    for _ in range(5):
        kalman = gauss_predict(kalman, [[F]], [[Q]])
        z = float(kalman.mean[0])
        kalman = gauss_update(kalman, [z], [[1.0]], [[R]])

        particles = propagate(particles, transition, "exact", rng)
        particles = bayes_style_update(particles, noise(z - particles.states))
        sigma = math.sqrt(kalman.covariance[0, 0])
        assert abs(point_estimate(particles)[0] - kalman.mean[0]) < 4 * sigma / math.sqrt(n)
        if effective_size(particles) < 0.5 * n:
            particles = resample(particles, rng)

    # One measurement off the predicted mean: weights are the normalised g * w
    # and the top particle sits at the Kalman posterior mean.
    kalman = gauss_predict(kalman, [[F]], [[Q]])
    z = float(kalman.mean[0]) + 2.0 * math.sqrt(kalman.covariance[0, 0] + R)
    kalman = gauss_update(kalman, [z], [[1.0]], [[R]])
    predicted = propagate(particles, transition, "exact", rng)
    g = noise(z - predicted.states)
    posterior = bayes_style_update(predicted, g)
    product = g * predicted.weights
    assert np.allclose(posterior.weights, product / product.max(), atol=1e-12, rtol=0)
    top = posterior.states[np.argmax(posterior.weights), 0]
    assert abs(top - kalman.mean[0]) < 0.1 * math.sqrt(kalman.covariance[0, 0])
