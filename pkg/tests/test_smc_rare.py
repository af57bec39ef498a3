"""Tests for subset sampling, threshold schedules and the adaptive-threshold bias probe."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from src.cli import run_experiment
from src.config import load_config
from src.errors import ParticleSystemDied, ThresholdStallError
from src.forward_models import ParameterVector, QoIResult
from src.mcmc import ChainState, Direction, ProposalKind, ProposalSpec
from src.postrisk import threshold_key
from src.problems import gaussian_toy_problem
from src.rng import RandomStreams, Stage
from src.smc_posterior import ParticleEnsemble, initial_ensemble
from src.smc_rare import (
    LevelRecord, RareEventSpec, RareStageConfig, ScheduleKind, ScheduleSpec, StepControl,
    ThresholdSchedule, adaptive_bias_probe, adaptive_threshold, constrained_propagator,
    fixed_log_schedule, posterior_log_schedule, run_smc_rare, snap_threshold, stepped_schedule,
    subset_weights,
)


def ensemble_of(values):
    particles = [ChainState(ParameterVector(np.zeros(1)), 0.0, QoIResult(float(v))) for v in values]
    return ParticleEnsemble.uniform(particles)


def toy_run(threshold, schedule, n=400, seed=0, repetition=0, mh_steps=5,
            step_control=StepControl.ADAPT, proposal=None, thresholds_of_interest=(), max_levels=500):
    """Subset sampling of P(theta >= threshold) for a standard normal."""
    problem = gaussian_toy_problem(1)
    streams = RandomStreams(seed, repetition)
    rngs = streams.particles(Stage.RARE, n)
    ensemble, _ = initial_ensemble(problem, rngs)
    return run_smc_rare(
        ensemble, RareEventSpec(Direction.GEQ, threshold), schedule,
        RareStageConfig(mh_steps, step_control, max_levels),
        proposal or ProposalSpec(ProposalKind.PCN, rho=0.6),
        constrained_propagator(problem, mh_steps, 0.0), rngs, streams.resample(Stage.RARE),
        problem=problem, thresholds_of_interest=thresholds_of_interest,
    )


class TestSubsetWeights:

    def test_equal_weights_on_survivors(self):
        weights, survivors = subset_weights(ensemble_of([1, 2, 3, 4]), 2.5, Direction.GEQ)
        assert np.allclose(weights, [0, 0, 0.5, 0.5])
        assert list(survivors) == [2, 3]

    def test_leq_direction(self):
        weights, _ = subset_weights(ensemble_of([1, 2, 3, 4]), 2.5, Direction.LEQ)
        assert np.allclose(weights, [0.5, 0.5, 0, 0])

    def test_comparison_is_inclusive(self):
        _, survivors = subset_weights(ensemble_of([1, 2, 3, 4]), 2.0, Direction.GEQ)
        assert list(survivors) == [1, 2, 3]

    def test_no_survivors_raises(self):
        with pytest.raises(ParticleSystemDied) as excinfo:
            subset_weights(ensemble_of([1, 2, 3, 4]), 5.0, Direction.GEQ, level=3)
        assert excinfo.value.level == 3
        assert excinfo.value.threshold == 5.0


class TestAdaptiveThreshold:

    def test_quarter_quantile(self):
        """gamma = 0.25 on (1, 2, 3, 4) gives T = 2, so three particles survive."""
        assert adaptive_threshold(ensemble_of([4, 1, 3, 2]), 0.25, Direction.GEQ, 10.0) == (2.0, False)

    def test_leq_uses_upper_values(self):
        assert adaptive_threshold(ensemble_of([1, 2, 3, 4]), 0.25, Direction.LEQ, -10.0) == (3.0, False)

    def test_clamped_to_target(self):
        assert adaptive_threshold(ensemble_of([1, 2, 3, 4]), 0.25, Direction.GEQ, 1.5) == (1.5, True)
        assert adaptive_threshold(ensemble_of([40, 50, 55, 58]), 0.25, Direction.LEQ, 60.0) == (60.0, True)

    def test_equal_values(self):
        assert adaptive_threshold(ensemble_of([7, 7, 7, 7]), 0.25, Direction.GEQ, 9.0) == (7.0, False)

    def test_five_percent_keeps_38_of_40(self):
        ensemble = ensemble_of(np.arange(40.0))
        threshold, _ = adaptive_threshold(ensemble, 0.05, Direction.GEQ, 100.0)
        _, survivors = subset_weights(ensemble, threshold, Direction.GEQ)
        assert survivors.size == 38


class TestSchedules:

    def test_log_schedule_endpoints_and_midpoint(self):
        thresholds = fixed_log_schedule(5e-6, 9.5e-6, 100)
        assert len(thresholds) == 100
        assert thresholds[0] == pytest.approx(5e-6)
        assert thresholds[-1] == 9.5e-6
        assert thresholds[9] == pytest.approx(7.25e-6)
        assert np.all(np.diff(thresholds) > 0)

    def test_log_schedule_decreasing(self):
        thresholds = fixed_log_schedule(3500.0, 100.0, 30)
        assert np.all(np.diff(thresholds) < 0)
        assert thresholds[-1] == 100.0

    def test_log_schedule_invalid(self):
        with pytest.raises(ValueError):
            fixed_log_schedule(1.0, 2.0, 1)
        with pytest.raises(ValueError):
            fixed_log_schedule(2.0, 2.0, 10)

    def test_stepped_breakthrough_schedule(self):
        thresholds = stepped_schedule(3500.0, 100.0, 30, 5.0, 60.0)
        assert len(thresholds) == 38
        assert thresholds[29] == 100.0
        assert thresholds[30:] == [95.0, 90.0, 85.0, 80.0, 75.0, 70.0, 65.0, 60.0]

    def test_posterior_offset_indices(self):
        indexed = posterior_log_schedule(5e-6, 9.5e-6, 100, 40)
        assert indexed[0] == (41, pytest.approx(5e-6))
        assert indexed[-1] == (140, 9.5e-6)

    def test_snap_replaces_closest(self):
        thresholds, index = snap_threshold([1.0, 2.0, 3.0, 4.0], 2.8)
        assert index == 2
        assert thresholds == [1.0, 2.0, 2.8, 4.0]

    def test_spec_build_snaps_interest_and_keeps_target(self):
        spec = ScheduleSpec(ScheduleKind.LOG, first=5e-6, n_levels=100)
        schedule = spec.build(9.5e-6, snap_to=(9e-6, 9.5e-6))
        assert len(schedule.thresholds) == 100
        assert 9e-6 in schedule.thresholds
        assert schedule.thresholds[-1] == 9.5e-6

    def test_spec_build_skips_interest_past_target(self):
        spec = ScheduleSpec(ScheduleKind.LOG, first=0.0, n_levels=10)
        schedule = spec.build(3.0, snap_to=(3.0, 3.2))
        assert 3.2 not in schedule.thresholds
        assert schedule.thresholds == fixed_log_schedule(0.0, 3.0, 10)
        schedule.validate_for(RareEventSpec(Direction.GEQ, 3.0))

    def test_spec_requires_parameters(self):
        with pytest.raises(ValueError):
            ScheduleSpec(ScheduleKind.LOG)
        with pytest.raises(ValueError):
            ScheduleSpec(ScheduleKind.STEPPED, first=3500.0)

    def test_fixed_schedule_must_end_at_target(self):
        schedule = ThresholdSchedule.fixed([1.0, 2.0])
        with pytest.raises(ValueError):
            schedule.validate_for(RareEventSpec(Direction.GEQ, 3.0))

    def test_fixed_schedule_must_be_monotone(self):
        schedule = ThresholdSchedule.fixed([1.0, 0.5, 3.0])
        with pytest.raises(ValueError):
            schedule.validate_for(RareEventSpec(Direction.GEQ, 3.0))

    def test_target_must_be_finite(self):
        with pytest.raises(ValueError):
            RareEventSpec(Direction.GEQ, math.inf)


class TestRun:

    def test_gaussian_tail_adaptive(self):
        """P(theta >= 2) = 0.02275 for a standard normal."""
        result = toy_run(2.0, ThresholdSchedule.adaptive(0.5), n=2000, mh_steps=10,
                         thresholds_of_interest=(1.0,))
        exact = norm.sf(2.0)
        assert exact / 1.6 < result.estimate < exact * 1.6
        assert norm.sf(1.0) / 1.4 < result.intermediate[1.0] < norm.sf(1.0) * 1.4
        assert result.schedule.realized[-1] == 2.0
        assert all(p.qoi_value >= 2.0 for p in result.ensemble.particles)

    def test_interest_past_target_uses_final_ensemble(self):
        result = toy_run(1.5, ThresholdSchedule.adaptive(0.5), n=200, thresholds_of_interest=(1.8,))
        values = result.ensemble.qoi_values()
        assert 0.0 < result.intermediate[1.8] <= result.estimate
        assert result.intermediate[1.8] == pytest.approx(result.estimate * np.mean(values >= 1.8))

    def test_level_probabilities_multiply(self):
        result = toy_run(1.5, ThresholdSchedule.adaptive(0.25), n=100)
        product = np.prod([lv.probability for lv in result.levels])
        assert result.estimate == pytest.approx(product)
        for lv in result.levels[:-1]:
            assert lv.probability >= 0.75

    def test_fixed_schedule_realized(self):
        thresholds = fixed_log_schedule(0.0, 2.0, 6)
        result = toy_run(2.0, ThresholdSchedule.fixed(thresholds), n=200)
        assert result.schedule.realized == thresholds
        assert len(result.levels) == 6

    def test_evaluation_counts(self):
        thresholds = [0.0, 1.0, 1.5]
        result = toy_run(1.5, ThresholdSchedule.fixed(thresholds), n=50, mh_steps=4)
        assert result.initial_counts.qoi == 50
        assert result.counts.qoi == 50 * 3 * 4
        assert result.counts.forward == 0

    def test_decay_control_shrinks_rho(self):
        proposal = ProposalSpec(ProposalKind.PCN, rho=0.8, rho_decay=0.9)
        result = toy_run(1.0, ThresholdSchedule.fixed([0.0, 0.5, 1.0]), n=50,
                         step_control=StepControl.DECAY, proposal=proposal)
        assert result.proposal.rho == pytest.approx(0.8 * 0.9 ** 3)

    def test_particle_death(self):
        with pytest.raises(ParticleSystemDied):
            toy_run(50.0, ThresholdSchedule.fixed([50.0]), n=20)

    def test_stall(self):
        with pytest.raises(ThresholdStallError):
            toy_run(30.0, ThresholdSchedule.adaptive(0.1), n=20, mh_steps=0, max_levels=2)

    def test_unequal_weights_rejected(self):
        ensemble = ensemble_of([1.0, 2.0])
        ensemble.weights = np.array([0.2, 0.8])
        with pytest.raises(ValueError):
            run_smc_rare(ensemble, RareEventSpec(Direction.GEQ, 2.0), ThresholdSchedule.adaptive(0.5),
                         RareStageConfig(), ProposalSpec(), lambda *a: None,
                         [np.random.default_rng(i) for i in range(2)], np.random.default_rng(9))

    def test_reproducible(self):
        a = toy_run(1.5, ThresholdSchedule.adaptive(0.5), n=100, seed=4)
        b = toy_run(1.5, ThresholdSchedule.adaptive(0.5), n=100, seed=4)
        assert a.estimate == b.estimate
        assert a.schedule.realized == b.schedule.realized


    @pytest.mark.slow
    def test_gaussian_tail_fixed_schedule_mean(self, tmp_path):
        """Twenty runs on a 30-level schedule average to within 15% of 1 - Phi(4)."""
        config = load_config("gaussian_toy_tail")
        config.repetitions = 20
        report = run_experiment(config, str(tmp_path / "tail"))
        exact = norm.sf(4.0)
        assert abs(report.summary[threshold_key(4.0)].mean - exact) < 0.15 * exact


class TestBiasProbe:

    def test_frozen_rerun_uses_adaptive_thresholds(self):
        def run(schedule, repetition):
            return toy_run(1.5, schedule, n=100, repetition=repetition)

        probe = adaptive_bias_probe(run, ThresholdSchedule.adaptive(0.5), 2)
        assert len(probe.adaptive) == len(probe.rerun) == 2
        assert all(s[-1] == 1.5 for s in probe.schedules)
        assert set(probe.to_dict()) >= {"adaptive", "rerun", "adaptive_mean", "rerun_mean"}

    def test_needs_adaptive_schedule(self):
        with pytest.raises(ValueError):
            adaptive_bias_probe(lambda s, r: None, ThresholdSchedule.fixed([1.0]), 2)


def test_level_record_round_trip():
    record = LevelRecord(3, 1.25, 38, 0.95, 0.4)
    assert record.to_dict()["k"] == 3
    assert LevelRecord.from_dict(record.to_dict()) == record
