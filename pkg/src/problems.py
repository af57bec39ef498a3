"""
Test cases - forward problems, rare-event targets and synthetic truths for
the 1-D flow, 2-D flow/transport and Gaussian toy examples.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Union

import numpy as np

from .forward_models import (
    Observation, Parameterization, QoIResult, Source1D, all_well_indices, log_likelihood,
    observe_1d, observe_2d, observe_heads_2d, qoi_flow_rate_1d, solve_diffusion_1d,
    solve_flow_2d,
)
from .random_fields import (
    ExpCovariance, Grid1D, Grid2D, KLBasis, PixelGRF, PointObservations,
    build_exp_covariance, condition_grf, kl_decompose, kl_to_log_field, sample_pixel_grf,
)
from .rng import Purpose, RandomStreams, Stage
from .transport import TransportParams, qoi_breakthrough_2d

logger = logging.getLogger(__name__)

FLOW1D_MEAN_LOG = math.log(1e-5)
FLOW1D_HEAD_SD = 0.01
FLOW1D_T_STAR = 9e-6
FLOW1D_T_STAR_STAR = 9.5e-6

TRANSPORT2D_MEAN_LOG = math.log(5e-5)
TRANSPORT2D_HEAD_SD = 0.02
TRANSPORT2D_LOCAL_SD = 0.1
TRANSPORT2D_PUMPING = 5e-4
TRANSPORT2D_HAZARD_DAYS = 60.0

TEST_CASES = ("flow1d", "transport2d", "gaussian_toy")

PriorField = Union[KLBasis, PixelGRF, None]


@dataclass(frozen=True)
class ForwardProblem:
    """Forward operator G, Gaussian likelihood and QoI map R for one test case.

    Parameters live in a standard-normal latent space of size ``dimension``;
    ``to_log_field`` maps them to the physical log-field.
    """
    name: str
    dimension: int
    parameterization: Parameterization
    to_log_field: Callable[[np.ndarray], np.ndarray]
    qoi_map: Callable[[np.ndarray], QoIResult]
    simulate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    observation: Optional[Observation] = None
    prior_field: PriorField = None
    grid: object = None

    @property
    def has_data(self) -> bool:
        return self.observation is not None and self.simulate is not None

    def forward(self, z: np.ndarray) -> np.ndarray:
        return self.simulate(self.to_log_field(z))

    def log_likelihood_of(self, forward_values: np.ndarray) -> float:
        if not self.has_data:
            return 0.0
        return log_likelihood(self.observation, forward_values)

    def qoi(self, z: np.ndarray) -> QoIResult:
        return self.qoi_map(self.to_log_field(z))

    def with_observation(self, observation: Optional[Observation]) -> "ForwardProblem":
        return replace(self, observation=observation)

    def without_data(self) -> "ForwardProblem":
        return replace(self, observation=None)

    def with_noise_scale(self, factor: float) -> "ForwardProblem":
        """Inflate the likelihood noise; large factors approach the prior."""
        if self.observation is None or factor == 1.0:
            return self
        obs = Observation(self.observation.values, self.observation.noise_sd * factor)
        return replace(self, observation=obs)


@dataclass(frozen=True)
class RareEventTarget:
    """Default hazard definition of a test case."""
    direction: str
    threshold: float
    thresholds_of_interest: tuple


@dataclass
class SyntheticTruth:
    """True field, noiseless and noisy data, and the true QoI."""
    test_case: str
    seed: int
    parameters: np.ndarray
    log_field: np.ndarray
    forward_values: np.ndarray
    observation: Optional[Observation]
    qoi: QoIResult
    local_observations: Optional[PointObservations] = None
    extras: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = {
            "test_case": self.test_case,
            "seed": self.seed,
            "parameters": self.parameters.tolist(),
            "log_field": self.log_field.tolist(),
            "forward_values": self.forward_values.tolist(),
            "observation": None if self.observation is None else self.observation.values.tolist(),
            "noise_sd": None if self.observation is None else self.observation.noise_sd.tolist(),
            "qoi": self.qoi.value,
            "qoi_censored": self.qoi.censored,
        }
        if self.local_observations is not None:
            data["local_locations"] = list(self.local_observations.locations)
            data["local_values"] = np.asarray(self.local_observations.values).tolist()
        return data


# ---------------------------------------------------------------------------
# Problem builders
# ---------------------------------------------------------------------------

def flow1d_problem(observation: Optional[Observation] = None, grid: Grid1D = Grid1D(),
                   covariance: ExpCovariance = ExpCovariance(3.0, 0.3, 1),
                   n_terms: int = 10, sources: Source1D = Source1D(),
                   mean_log: float = FLOW1D_MEAN_LOG) -> ForwardProblem:
    """KL-parameterized 1-D diffusion with seven head sensors and the flow-rate QoI."""
    basis = kl_decompose(build_exp_covariance(grid, covariance), n_terms, mean_log=mean_log)

    def to_log_field(z):
        return kl_to_log_field(basis, z)

    def simulate(log_field):
        return observe_1d(solve_diffusion_1d(log_field, sources, grid), grid)

    return ForwardProblem(
        name="flow1d",
        dimension=n_terms,
        parameterization=Parameterization.KL,
        to_log_field=to_log_field,
        qoi_map=qoi_flow_rate_1d,
        simulate=simulate,
        observation=observation,
        prior_field=basis,
        grid=grid,
    )


def transport2d_prior_field(grid: Grid2D,
                            covariance: Optional[ExpCovariance] = None,
                            mean_log: float = TRANSPORT2D_MEAN_LOG) -> PixelGRF:
    covariance = covariance or ExpCovariance(3.0, 25.0, 2)
    return PixelGRF.from_covariance(mean_log, build_exp_covariance(grid, covariance))


def transport2d_problem(observation: Optional[Observation] = None,
                        local: Optional[PointObservations] = None,
                        grid: Grid2D = Grid2D(),
                        prior: Optional[PixelGRF] = None,
                        transport: TransportParams = TransportParams(),
                        pumping_rate: float = TRANSPORT2D_PUMPING) -> ForwardProblem:
    """Pixel GRF (optionally conditioned on local log-T data), pumping-test heads, breakthrough QoI."""
    grf = prior if prior is not None else transport2d_prior_field(grid)
    if local is not None:
        grf = condition_grf(grf, local)

    def to_log_field(z):
        return sample_pixel_grf(grf, z)

    def simulate(log_field):
        heads = solve_flow_2d(log_field, pumping_rate=pumping_rate, grid=grid)
        return observe_heads_2d(heads, grid)

    def qoi_map(log_field):
        return qoi_breakthrough_2d(log_field, transport, grid)

    return ForwardProblem(
        name="transport2d",
        dimension=grid.n_cells,
        parameterization=Parameterization.PIXEL,
        to_log_field=to_log_field,
        qoi_map=qoi_map,
        simulate=simulate,
        observation=observation,
        prior_field=grf,
        grid=grid,
    )


def gaussian_toy_problem(dimension: int = 1, observation: Optional[Observation] = None) -> ForwardProblem:
    """Standard-normal prior, ``G(theta) = theta_0`` and ``R(theta) = theta_0``."""

    def identity(z):
        return np.asarray(z, dtype=float)

    def simulate(theta):
        return theta[:1]

    def qoi_map(theta):
        return QoIResult(float(theta[0]))

    return ForwardProblem(
        name="gaussian_toy",
        dimension=dimension,
        parameterization=Parameterization.IDENTITY,
        to_log_field=identity,
        qoi_map=qoi_map,
        simulate=simulate,
        observation=observation,
    )


def default_target(test_case: str) -> RareEventTarget:
    if test_case == "flow1d":
        return RareEventTarget("geq", FLOW1D_T_STAR_STAR, (FLOW1D_T_STAR, FLOW1D_T_STAR_STAR))
    if test_case == "transport2d":
        return RareEventTarget("leq", TRANSPORT2D_HAZARD_DAYS, (TRANSPORT2D_HAZARD_DAYS,))
    if test_case == "gaussian_toy":
        return RareEventTarget("geq", 4.0, (4.0,))
    raise ValueError(f"Unknown test case: {test_case}")


def desk_grid(n: int) -> Grid2D:
    return Grid2D.square(n)


# ---------------------------------------------------------------------------
# Synthetic truth
# ---------------------------------------------------------------------------

def generate_truth(test_case: str, seed: int, grid_n: int = 51,
                   prior: Optional[PixelGRF] = None,
                   toy_dimension: int = 1, toy_noise_sd: float = 1.0) -> SyntheticTruth:
    """Sample a true field from the prior, simulate it and add observation noise.

    Bit-exact for a given ``(test_case, seed)`` on platforms sharing numpy's
    Philox implementation.
    """
    streams = RandomStreams(seed)
    field_rng = streams.stream(Stage.TRUTH, Purpose.PARTICLE)
    noise_rng = streams.stream(Stage.TRUTH, Purpose.NOISE)

    if test_case == "flow1d":
        problem = flow1d_problem()
        z = field_rng.standard_normal(problem.dimension)
        log_field = problem.to_log_field(z)
        values = problem.simulate(log_field)
        noisy = values + FLOW1D_HEAD_SD * noise_rng.standard_normal(values.shape)
        return SyntheticTruth(test_case, seed, z, log_field, values,
                              Observation(noisy, FLOW1D_HEAD_SD), problem.qoi_map(log_field))

    if test_case == "transport2d":
        grid = desk_grid(grid_n)
        grf = prior if prior is not None else transport2d_prior_field(grid)
        z = field_rng.standard_normal(grid.n_cells)
        log_field = sample_pixel_grf(grf, z)
        heads = solve_flow_2d(log_field, pumping_rate=TRANSPORT2D_PUMPING, grid=grid)
        values = observe_2d(heads, log_field, grid)
        noise_sd = np.array([TRANSPORT2D_HEAD_SD] * 4 + [TRANSPORT2D_LOCAL_SD] * 5)
        noisy = values + noise_sd * noise_rng.standard_normal(values.shape)
        local = PointObservations(all_well_indices(grid), noisy[4:], TRANSPORT2D_LOCAL_SD)
        qoi = qoi_breakthrough_2d(log_field, TransportParams(), grid)
        logger.info("transport2d truth (seed %d): breakthrough %.1f days%s",
                    seed, qoi.value, " (censored)" if qoi.censored else "")
        return SyntheticTruth(test_case, seed, z, log_field, values,
                              Observation(noisy[:4], TRANSPORT2D_HEAD_SD), qoi, local,
                              extras={"heads": heads})

    if test_case == "gaussian_toy":
        z = field_rng.standard_normal(toy_dimension)
        values = z[:1]
        noisy = values + toy_noise_sd * noise_rng.standard_normal(1)
        return SyntheticTruth(test_case, seed, z, z.copy(), values,
                              Observation(noisy, toy_noise_sd), QoIResult(float(z[0])))

    raise ValueError(f"Unknown test case: {test_case}")


def problem_for_truth(truth: SyntheticTruth, grid_n: int = 51,
                      prior: Optional[PixelGRF] = None, toy_dimension: int = 1) -> ForwardProblem:
    """Forward problem whose likelihood uses the truth's noisy observation."""
    if truth.test_case == "flow1d":
        return flow1d_problem(truth.observation)
    if truth.test_case == "transport2d":
        return transport2d_problem(truth.observation, truth.local_observations,
                                   grid=desk_grid(grid_n), prior=prior)
    if truth.test_case == "gaussian_toy":
        return gaussian_toy_problem(toy_dimension, truth.observation)
    raise ValueError(f"Unknown test case: {truth.test_case}")
