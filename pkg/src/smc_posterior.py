"""
Stage 1 - adaptive tempered SMC from the prior to the posterior.

The ensemble moves through power posteriors ``L^alpha * prior`` with
``0 = alpha_0 < ... < alpha_K = 1``. Each increment is chosen by bisection
so the conditional ESS stays at a target, weights are updated in log
space, resampling is systematic and particles are moved with
``s_P`` Metropolis-Hastings steps at the new temperature.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import DegenerateEnsembleError
from .mcmc import (
    AcceptanceStats, ChainState, EvaluationCounts, ProposalSpec, adapt_step_size,
    pilot_tune, prior_state, propagate_constrained,
)
from .problems import ForwardProblem
from .rng import RandomStreams, Stage
from .workers import SERIAL, ParticleWorkers

logger = logging.getLogger(__name__)

BISECTION_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12
BISECTION_MAX_ITER = 60


@dataclass
class ParticleEnsemble:
    """Particles with normalized weights at temperature ``alpha``."""
    particles: List[ChainState]
    weights: np.ndarray
    alpha: float = 0.0
    level: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.particles) < 2:
            raise ValueError("an ensemble needs at least 2 particles")
        if self.weights.shape != (len(self.particles),):
            raise ValueError("one weight per particle is required")
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0, rtol=0, atol=WEIGHT_SUM_TOL):
            raise ValueError("weights must be nonnegative and sum to 1")

    @classmethod
    def uniform(cls, particles: List[ChainState], alpha: float = 0.0, level: int = 0) -> "ParticleEnsemble":
        n = len(particles)
        return cls(list(particles), np.full(n, 1.0 / n), alpha, level)

    @property
    def size(self) -> int:
        return len(self.particles)

    def log_likelihoods(self) -> np.ndarray:
        values = [p.log_likelihood for p in self.particles]
        if any(v is None for v in values):
            raise ValueError("ensemble has particles without an evaluated likelihood")
        return np.asarray(values, dtype=float)

    def qoi_values(self) -> np.ndarray:
        return np.array([p.qoi_value for p in self.particles])

    def latents(self) -> np.ndarray:
        return np.stack([p.z for p in self.particles])


@dataclass
class TemperingSchedule:
    """Adaptive (CESS-targeted) or fixed sequence of temperatures."""
    adaptive: bool = True
    cess_fraction: float = 0.99
    fixed_alphas: Optional[List[float]] = None
    realized: List[float] = field(default_factory=lambda: [0.0])

    def __post_init__(self):
        if self.adaptive:
            if not 0.0 < self.cess_fraction < 1.0:
                raise ValueError("cess_fraction must be in (0, 1)")
        else:
            alphas = [float(a) for a in (self.fixed_alphas or []) if a > 0.0]
            if not alphas or alphas[-1] != 1.0:
                raise ValueError("a fixed tempering schedule must end at 1")
            if any(b <= a for a, b in zip(alphas, alphas[1:])):
                raise ValueError("a fixed tempering schedule must be strictly increasing")
            self.fixed_alphas = alphas

    def fresh(self) -> "TemperingSchedule":
        return replace(self, realized=[0.0])


@dataclass(frozen=True)
class SmcPosteriorConfig:
    n_particles: int = 20
    mh_steps: int = 20
    ess_resample_fraction: float = 0.3
    adapt_proposal: bool = True
    pilot_steps: int = 0
    pilot_batch: int = 100

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if self.mh_steps < 1:
            raise ValueError("mh_steps must be at least 1")
        if not 0.0 < self.ess_resample_fraction <= 1.0:
            raise ValueError("ess_resample_fraction must be in (0, 1]")


@dataclass
class IterationDiagnostics:
    iteration: int
    alpha: float
    ess: float
    cess: float
    acceptance: float
    resampled: bool
    proposal: str

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration, "alpha": self.alpha, "ess": self.ess, "cess": self.cess,
            "acceptance": self.acceptance, "resampled": self.resampled, "proposal": self.proposal,
        }


@dataclass
class SmcPosteriorResult:
    ensemble: ParticleEnsemble
    schedule: TemperingSchedule
    diagnostics: List[IterationDiagnostics]
    counts: EvaluationCounts
    initial_counts: EvaluationCounts
    proposal: ProposalSpec

    @property
    def n_iterations(self) -> int:
        return len(self.diagnostics)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def log_incremental_weights(log_likelihoods: np.ndarray, alpha_old: float, alpha_new: float) -> np.ndarray:
    return (alpha_new - alpha_old) * np.asarray(log_likelihoods, dtype=float)


def incremental_weights(ensemble: ParticleEnsemble, alpha_new: float) -> np.ndarray:
    """``L^(alpha_new - alpha_old)`` per particle, scaled so the largest is 1."""
    if alpha_new < ensemble.alpha:
        raise ValueError(f"alpha must not decrease ({ensemble.alpha} -> {alpha_new})")
    log_w = log_incremental_weights(ensemble.log_likelihoods(), ensemble.alpha, alpha_new)
    return np.exp(log_w - np.max(log_w))


def update_normalized_weights(previous: np.ndarray, incremental: np.ndarray) -> np.ndarray:
    products = np.asarray(previous, dtype=float) * np.asarray(incremental, dtype=float)
    total = products.sum()
    if not total > 0.0:
        raise DegenerateEnsembleError()
    return products / total


def ess(previous: np.ndarray, incremental: np.ndarray) -> float:
    """Effective sample size of the updated weights."""
    products = np.asarray(previous) * np.asarray(incremental)
    denominator = float(np.sum(products ** 2))
    if denominator == 0.0:
        raise DegenerateEnsembleError()
    return float(np.sum(products)) ** 2 / denominator


def cess(previous: np.ndarray, incremental: np.ndarray) -> float:
    """Conditional ESS of an increment given the current normalized weights."""
    previous = np.asarray(previous)
    incremental = np.asarray(incremental)
    denominator = float(np.sum(previous * incremental ** 2))
    if denominator == 0.0:
        raise DegenerateEnsembleError()
    return previous.size * float(np.sum(previous * incremental)) ** 2 / denominator


def _cess_at(ensemble: ParticleEnsemble, log_likelihoods: np.ndarray, alpha: float) -> float:
    log_w = log_incremental_weights(log_likelihoods, ensemble.alpha, alpha)
    return cess(ensemble.weights, np.exp(log_w - np.max(log_w)))


def next_alpha_binary_search(ensemble: ParticleEnsemble, cess_target: float) -> float:
    """Next temperature whose CESS matches ``cess_target`` (1 if it already does at 1).

    Ties go to the larger temperature; the result is always strictly above
    the current one.
    """
    if ensemble.alpha >= 1.0:
        raise ValueError("ensemble is already at alpha = 1")
    log_likelihoods = ensemble.log_likelihoods()
    if _cess_at(ensemble, log_likelihoods, 1.0) >= cess_target:
        return 1.0

    low, high = ensemble.alpha, 1.0
    for _ in range(BISECTION_MAX_ITER):
        if high - low <= BISECTION_TOL:
            break
        mid = 0.5 * (low + high)
        if _cess_at(ensemble, log_likelihoods, mid) >= cess_target:
            low = mid
        else:
            high = mid
    if low <= ensemble.alpha:
        return high
    gap_low = abs(_cess_at(ensemble, log_likelihoods, low) - cess_target)
    gap_high = abs(_cess_at(ensemble, log_likelihoods, high) - cess_target)
    return high if gap_high <= gap_low else low


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of the selected particles; one uniform per call."""
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    positions = (rng.uniform(0.0, 1.0 / n) + np.arange(n) / n)
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def initial_ensemble(problem: ForwardProblem, rngs: Sequence[np.random.Generator],
                     need_qoi: bool = False, workers: ParticleWorkers = SERIAL):
    """Prior draws with evaluated likelihoods (and optionally QoIs)."""

    def draw(index: int):
        counts = EvaluationCounts()
        return prior_state(problem, rngs[index], True, need_qoi, counts), counts

    outputs = workers.map(draw, range(len(rngs)))
    counts = EvaluationCounts()
    for _, c in outputs:
        counts = counts + c
    return ParticleEnsemble.uniform([state for state, _ in outputs]), counts


def run_smc_posterior(problem: ForwardProblem, config: SmcPosteriorConfig,
                      schedule: TemperingSchedule, proposal: ProposalSpec,
                      streams: RandomStreams, workers: ParticleWorkers = SERIAL) -> SmcPosteriorResult:
    """Temper an ensemble of prior draws to ``alpha = 1``.

    Raises ``DegenerateEnsembleError`` (with the diagnostics collected so
    far) when every incremental weight underflows.
    """
    n = config.n_particles
    schedule = schedule.fresh()
    rngs = streams.particles(Stage.POSTERIOR, n)
    resample_rng = streams.resample(Stage.POSTERIOR)

    ensemble, initial_counts = initial_ensemble(problem, rngs, workers=workers)
    if config.pilot_steps > 0 and problem.has_data and not proposal.prior_preserving:
        proposal, pilot_counts = pilot_tune(problem, proposal, streams.pilot(Stage.POSTERIOR),
                                            config.pilot_steps, config.pilot_batch)
        initial_counts = initial_counts + pilot_counts

    counts = EvaluationCounts()
    diagnostics: List[IterationDiagnostics] = []
    fixed = list(schedule.fixed_alphas or [])
    cess_target = schedule.cess_fraction * n

    while ensemble.alpha < 1.0:
        iteration = ensemble.level + 1
        if schedule.adaptive:
            alpha_new = next_alpha_binary_search(ensemble, cess_target)
        else:
            alpha_new = fixed[iteration - 1]

        try:
            w = incremental_weights(ensemble, alpha_new)
            ess_value = ess(ensemble.weights, w)
            cess_value = cess(ensemble.weights, w)
            weights = update_normalized_weights(ensemble.weights, w)
        except DegenerateEnsembleError:
            raise DegenerateEnsembleError(iteration, alpha_new, diagnostics) from None

        particles = ensemble.particles
        resampled = ess_value < config.ess_resample_fraction * n or alpha_new == 1.0
        if resampled:
            indices = systematic_resample(weights, resample_rng)
            particles = [particles[i] for i in indices]
            weights = np.full(n, 1.0 / n)

        def move(index: int, particles=particles, alpha=alpha_new, proposal=proposal):
            return propagate_constrained(particles[index], problem, proposal, alpha,
                                         config.mh_steps, rngs[index])

        results = workers.map(move, range(n))
        stats = AcceptanceStats()
        for r in results:
            stats = stats + r.stats
            counts = counts + r.counts

        ensemble = ParticleEnsemble([r.state for r in results], weights, alpha_new, iteration)
        schedule.realized.append(alpha_new)
        diagnostics.append(IterationDiagnostics(iteration, alpha_new, ess_value, cess_value,
                                                stats.rate, resampled, proposal.describe()))
        logger.info("tempering %d: alpha=%.6g ess=%.2f cess=%.2f acc=%.3f%s",
                    iteration, alpha_new, ess_value, cess_value, stats.rate,
                    " (resampled)" if resampled else "")
        if config.adapt_proposal:
            proposal = adapt_step_size(stats, proposal)

    return SmcPosteriorResult(ensemble, schedule, diagnostics, counts, initial_counts, proposal)
