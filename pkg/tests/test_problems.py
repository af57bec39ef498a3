"""Tests for test-case builders and synthetic truths."""

import numpy as np
import pytest

from src.forward_models import Observation
from src.problems import (
    FLOW1D_HEAD_SD, default_target, flow1d_problem, gaussian_toy_problem, generate_truth,
    problem_for_truth,
)


@pytest.fixture(scope="module")
def flow_truth():
    return generate_truth("flow1d", 7)


class TestFlowTruth:

    def test_same_seed_same_truth(self, flow_truth):
        again = generate_truth("flow1d", 7)
        assert np.array_equal(again.parameters, flow_truth.parameters)
        assert np.array_equal(again.observation.values, flow_truth.observation.values)

    def test_different_seed_differs(self, flow_truth):
        assert not np.array_equal(generate_truth("flow1d", 8).parameters, flow_truth.parameters)

    def test_shapes(self, flow_truth):
        assert flow_truth.parameters.shape == (10,)
        assert flow_truth.observation.values.shape == (7,)
        assert flow_truth.qoi.value > 0
        assert set(flow_truth.to_dict()) >= {"parameters", "log_field", "observation", "qoi"}

    def test_problem_reproduces_noiseless_data(self, flow_truth):
        problem = problem_for_truth(flow_truth)
        assert problem.has_data
        assert np.allclose(problem.forward(flow_truth.parameters), flow_truth.forward_values)

    def test_likelihood_prefers_truth(self, flow_truth):
        problem = problem_for_truth(flow_truth)
        at_truth = problem.log_likelihood_of(flow_truth.forward_values)
        shifted = problem.log_likelihood_of(flow_truth.forward_values + 10 * FLOW1D_HEAD_SD)
        assert at_truth > shifted


class TestProblems:

    def test_without_data_has_zero_likelihood(self):
        problem = flow1d_problem().without_data()
        assert not problem.has_data
        assert problem.log_likelihood_of(np.zeros(7)) == 0.0

    def test_noise_scale(self):
        problem = gaussian_toy_problem(1, Observation(np.array([1.0]), 0.5))
        assert np.allclose(problem.with_noise_scale(4.0).observation.noise_sd, 2.0)
        assert problem.with_noise_scale(1.0) is problem

    def test_toy_qoi_is_first_coordinate(self):
        problem = gaussian_toy_problem(3)
        assert problem.qoi(np.array([1.5, -2.0, 0.3])).value == 1.5

    def test_toy_truth_observes_first_coordinate(self):
        truth = generate_truth("gaussian_toy", 2, toy_dimension=2, toy_noise_sd=1e-9)
        assert truth.observation.values[0] == pytest.approx(truth.parameters[0], abs=1e-6)
        assert truth.qoi.value == truth.parameters[0]

    def test_default_targets(self):
        assert default_target("flow1d").threshold == 9.5e-6
        assert default_target("flow1d").thresholds_of_interest == (9e-6, 9.5e-6)
        assert default_target("transport2d").direction == "leq"
        with pytest.raises(ValueError):
            default_target("heat3d")
