"""Tests for the tempered SMC posterior stage."""

import math

import numpy as np
import pytest

from src.errors import DegenerateEnsembleError
from src.forward_models import Observation, ParameterVector
from src.mcmc import ChainState, ProposalKind, ProposalSpec
from src.problems import gaussian_toy_problem
from src.rng import RandomStreams
from src.smc_posterior import (
    ParticleEnsemble, SmcPosteriorConfig, TemperingSchedule, cess, ess, incremental_weights,
    next_alpha_binary_search, run_smc_posterior, systematic_resample, update_normalized_weights,
)
from src.workers import ParticleWorkers


def ensemble_with(log_likelihoods, weights=None, alpha=0.0):
    particles = [ChainState(ParameterVector(np.zeros(1)), log_likelihood=float(ll))
                 for ll in log_likelihoods]
    if weights is None:
        return ParticleEnsemble.uniform(particles, alpha)
    return ParticleEnsemble(particles, weights, alpha)


@pytest.fixture
def toy_posterior():
    return gaussian_toy_problem(1, Observation(np.array([1.0]), 0.5))


class TestWeights:

    def test_incremental_weights_ratio(self):
        """Log-likelihoods (0, ln 2) at alpha 0 -> 1 give weights in ratio 1:2."""
        w = incremental_weights(ensemble_with([0.0, math.log(2.0)]), 1.0)
        assert w.max() == 1.0
        assert w[1] / w[0] == pytest.approx(2.0)

    def test_huge_log_likelihoods_do_not_underflow(self):
        w = incremental_weights(ensemble_with([-1e6, -1e6 + 1.0]), 1.0)
        assert np.all(w > 0)

    def test_weight_sum_checked_tightly(self):
        with pytest.raises(ValueError):
            ensemble_with([0.0, 1.0], weights=np.array([0.5, 0.5 + 1e-10]))
        assert ensemble_with([0.0, 1.0], weights=np.array([0.25, 0.75])).size == 2

    def test_decreasing_alpha_rejected(self):
        with pytest.raises(ValueError):
            incremental_weights(ensemble_with([0.0, 1.0], alpha=0.5), 0.2)

    def test_normalized_update(self):
        weights = update_normalized_weights(np.array([0.5, 0.5]), np.array([1.0, 3.0]))
        assert np.allclose(weights, [0.25, 0.75])

    def test_all_zero_weights_are_degenerate(self):
        with pytest.raises(DegenerateEnsembleError):
            update_normalized_weights(np.array([0.5, 0.5]), np.zeros(2))

    def test_ess_and_cess_bounds(self):
        uniform = np.full(4, 0.25)
        assert ess(uniform, np.ones(4)) == pytest.approx(4.0)
        assert cess(uniform, np.ones(4)) == pytest.approx(4.0)
        assert ess(uniform, np.array([1.0, 0.0, 0.0, 0.0])) == pytest.approx(1.0)
        assert cess(uniform, np.array([1.0, 0.0, 0.0, 0.0])) == pytest.approx(1.0)

    def test_cess_equals_ess_for_uniform_previous(self):
        uniform = np.full(5, 0.2)
        w = np.array([0.1, 0.4, 1.0, 0.7, 0.2])
        assert cess(uniform, w) == pytest.approx(ess(uniform, w))


class TestBisection:

    @pytest.fixture
    def ensemble(self):
        lls = np.random.default_rng(7).normal(scale=30.0, size=50)
        return ensemble_with(lls)

    def test_matches_target(self, ensemble):
        target = 0.5 * ensemble.size
        alpha = next_alpha_binary_search(ensemble, target)
        assert 0.0 < alpha < 1.0
        assert cess(ensemble.weights, incremental_weights(ensemble, alpha)) == pytest.approx(target, abs=1e-4)

    def test_agrees_with_grid_oracle(self, ensemble):
        """Every grid temperature below the answer meets the target; the next one above does not."""
        target = 0.9 * ensemble.size
        alpha = next_alpha_binary_search(ensemble, target)
        grid = np.linspace(0.0, 1.0, 20001)[1:]
        values = np.array([cess(ensemble.weights, incremental_weights(ensemble, a)) for a in grid])
        below = grid < alpha - 1e-4
        assert np.all(values[below] >= target - 1e-6)
        above = grid > alpha + 1e-4
        assert not np.any(values[above] >= target + 1e-6)

    def test_returns_one_when_final_step_is_cheap(self):
        ensemble = ensemble_with([0.0, 0.01, -0.01, 0.02])
        assert next_alpha_binary_search(ensemble, 0.5 * ensemble.size) == 1.0

    def test_always_advances(self, ensemble):
        alpha = next_alpha_binary_search(ensemble, float(ensemble.size))
        assert alpha > 0.0

    def test_fails_at_alpha_one(self):
        with pytest.raises(ValueError):
            next_alpha_binary_search(ensemble_with([0.0, 1.0], alpha=1.0), 1.0)


class TestSystematicResample:

    def test_two_heavy_particles(self):
        """Weights (0.5, 0.5, 0, 0) always select indices 0, 0, 1, 1."""
        for seed in range(20):
            indices = systematic_resample(np.array([0.5, 0.5, 0.0, 0.0]), np.random.default_rng(seed))
            assert list(indices) == [0, 0, 1, 1]

    def test_copies_within_one_of_expected(self):
        rng = np.random.default_rng(3)
        weights = rng.dirichlet(np.ones(30))
        counts = np.bincount(systematic_resample(weights, rng), minlength=30)
        assert counts.sum() == 30
        assert np.all(np.abs(counts - 30 * weights) < 1.0)

    def test_rounding_in_cumulative_sum(self):
        weights = np.full(3, 1.0 / 3.0)
        indices = systematic_resample(weights, np.random.default_rng(0))
        assert sorted(indices) == [0, 1, 2]


class TestValidation:

    def test_ensemble_needs_two_particles(self):
        with pytest.raises(ValueError):
            ensemble_with([0.0])

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            ensemble_with([0.0, 0.0], weights=[0.5, 0.6])

    def test_fixed_schedule_must_end_at_one(self):
        with pytest.raises(ValueError):
            TemperingSchedule(adaptive=False, fixed_alphas=[0.2, 0.5])
        with pytest.raises(ValueError):
            TemperingSchedule(adaptive=False, fixed_alphas=[0.5, 0.3, 1.0])

    def test_cess_fraction_range(self):
        with pytest.raises(ValueError):
            TemperingSchedule(cess_fraction=1.0)


class TestRun:

    def test_reaches_posterior(self, toy_posterior):
        """Prior N(0,1), y = 1 with sd 0.5: posterior mean 0.8, variance 0.2."""
        config = SmcPosteriorConfig(n_particles=200, mh_steps=10)
        result = run_smc_posterior(toy_posterior, config, TemperingSchedule(cess_fraction=0.9),
                                   ProposalSpec(ProposalKind.PCN, rho=0.5), RandomStreams(3))
        assert result.ensemble.alpha == 1.0
        assert result.schedule.realized[0] == 0.0
        assert result.schedule.realized[-1] == 1.0
        assert np.all(np.diff(result.schedule.realized) > 0)
        z = result.ensemble.latents()[:, 0]
        assert z.mean() == pytest.approx(0.8, abs=0.15)
        assert z.var() == pytest.approx(0.2, abs=0.1)

    def test_cess_held_at_target(self, toy_posterior):
        config = SmcPosteriorConfig(n_particles=100, mh_steps=5)
        result = run_smc_posterior(toy_posterior, config, TemperingSchedule(cess_fraction=0.5),
                                   ProposalSpec(rho=0.5), RandomStreams(1))
        for diag in result.diagnostics[:-1]:
            assert diag.cess == pytest.approx(50.0, abs=1e-3)
        assert result.diagnostics[-1].resampled

    def test_evaluation_counts(self, toy_posterior):
        config = SmcPosteriorConfig(n_particles=20, mh_steps=7)
        result = run_smc_posterior(toy_posterior, config, TemperingSchedule(cess_fraction=0.9),
                                   ProposalSpec(rho=0.5), RandomStreams(2))
        assert result.initial_counts.forward == 20
        assert result.counts.forward == 20 * 7 * result.n_iterations
        assert result.counts.qoi == 0

    def test_fixed_schedule(self, toy_posterior):
        config = SmcPosteriorConfig(n_particles=10, mh_steps=2)
        schedule = TemperingSchedule(adaptive=False, fixed_alphas=[0.25, 0.5, 1.0])
        result = run_smc_posterior(toy_posterior, config, schedule, ProposalSpec(rho=0.5), RandomStreams(0))
        assert result.schedule.realized == [0.0, 0.25, 0.5, 1.0]
        assert schedule.realized == [0.0]

    def test_without_data_single_step(self):
        config = SmcPosteriorConfig(n_particles=10, mh_steps=2)
        result = run_smc_posterior(gaussian_toy_problem(2), config, TemperingSchedule(),
                                   ProposalSpec(rho=0.5), RandomStreams(0))
        assert result.schedule.realized == [0.0, 1.0]
        assert result.counts.forward == 0

    def test_reproducible_for_seed_and_threads(self, toy_posterior):
        config = SmcPosteriorConfig(n_particles=16, mh_steps=3)
        args = (toy_posterior, config, TemperingSchedule(cess_fraction=0.8), ProposalSpec(rho=0.5))
        serial = run_smc_posterior(*args, RandomStreams(9))
        threaded = run_smc_posterior(*args, RandomStreams(9), ParticleWorkers(4))
        assert np.array_equal(serial.ensemble.latents(), threaded.ensemble.latents())
        assert serial.schedule.realized == threaded.schedule.realized
