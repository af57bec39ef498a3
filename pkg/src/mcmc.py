"""
Metropolis-Hastings kernels shared by both SMC stages and the MH baseline.

A kernel targets ``L(theta)^alpha * prior(theta)``, optionally restricted to a
subset ``{R(theta) >= T}`` or ``{R(theta) <= T}``. Two proposals are
available: the preconditioned Crank-Nicolson move, which preserves the
standard-normal prior so only the likelihood enters the acceptance ratio,
and a Gaussian random walk whose ratio also carries the prior density.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FieldError, SolverError
from .forward_models import ParameterVector, QoIResult
from .problems import ForwardProblem
from .workers import SERIAL, ParticleWorkers

logger = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.3
ADAPT_RATE = 0.5
RHO_MIN = 1e-6
RHO_FLOOR = 1e-3
WALK_SCALE_BOUNDS = (1e-6, 1e3)

FORWARD_FAILURES = (SolverError, FieldError, np.linalg.LinAlgError, FloatingPointError)


class ProposalKind(Enum):
    PCN = "pcn"
    GAUSSIAN_WALK = "gaussian-walk"


class Direction(Enum):
    """Side of the threshold that defines the hazard."""
    GEQ = "geq"
    LEQ = "leq"

    def satisfies(self, value: float, threshold: float) -> bool:
        if self is Direction.GEQ:
            return value >= threshold
        return value <= threshold

    def passes(self, threshold: float, reference: float) -> bool:
        """True when ``threshold`` is at least as extreme as ``reference``."""
        return self.satisfies(threshold, reference)


@dataclass(frozen=True)
class ProposalSpec:
    kind: ProposalKind = ProposalKind.PCN
    rho: float = 1.0
    step_scale: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    rho_decay: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "step_scale", np.atleast_1d(np.asarray(self.step_scale, dtype=float)))
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")
        if np.any(self.step_scale <= 0):
            raise ValueError("step_scale must be positive")
        if not 0.0 < self.rho_decay <= 1.0:
            raise ValueError("rho_decay must be in (0, 1]")

    @property
    def prior_preserving(self) -> bool:
        return self.kind is ProposalKind.PCN

    def describe(self) -> str:
        if self.prior_preserving:
            return f"pcn(rho={self.rho:.4g})"
        return f"walk(scale={float(np.mean(self.step_scale)):.4g})"


@dataclass
class ChainState:
    """Current particle: parameters plus cached likelihood, QoI and G output."""
    parameters: ParameterVector
    log_likelihood: Optional[float] = None
    qoi: Optional[QoIResult] = None
    forward_values: Optional[np.ndarray] = None

    @property
    def z(self) -> np.ndarray:
        return self.parameters.values

    @property
    def qoi_value(self) -> float:
        if self.qoi is None:
            raise ValueError("QoI has not been evaluated for this state")
        return self.qoi.value


@dataclass
class AcceptanceStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    def record(self, accepted: bool) -> None:
        self.proposed += 1
        self.accepted += int(accepted)

    def __add__(self, other: "AcceptanceStats") -> "AcceptanceStats":
        return AcceptanceStats(self.proposed + other.proposed, self.accepted + other.accepted)


@dataclass
class EvaluationCounts:
    """Number of forward (G) and QoI (R) solver calls, and failed solves."""
    forward: int = 0
    qoi: int = 0
    failures: int = 0

    def __add__(self, other: "EvaluationCounts") -> "EvaluationCounts":
        return EvaluationCounts(self.forward + other.forward, self.qoi + other.qoi,
                                self.failures + other.failures)

    def to_dict(self) -> dict:
        return {"forward": self.forward, "qoi": self.qoi, "failures": self.failures}

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationCounts":
        return cls(**{k: int(v) for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SubsetConstraint:
    threshold: float
    direction: Direction

    def contains(self, value: float) -> bool:
        return self.direction.satisfies(value, self.threshold)


@dataclass
class PropagationResult:
    """Outcome of moving one particle through a batch of kernel steps."""
    state: ChainState
    stats: AcceptanceStats
    counts: EvaluationCounts
    inner_stats: Optional[AcceptanceStats] = None


# ---------------------------------------------------------------------------
# Proposals
# ---------------------------------------------------------------------------

def propose_pcn(z: np.ndarray, rho: float, rng: np.random.Generator) -> np.ndarray:
    """``sqrt(1 - rho^2) z + rho xi``; rho = 1 is an independent prior draw."""
    xi = rng.standard_normal(z.shape)
    return math.sqrt(max(1.0 - rho * rho, 0.0)) * z + rho * xi


def propose_gaussian_walk(z: np.ndarray, step_scale: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    return z + step_scale * rng.standard_normal(z.shape)


def propose(proposal: ProposalSpec, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if proposal.prior_preserving:
        return propose_pcn(z, proposal.rho, rng)
    return propose_gaussian_walk(z, proposal.step_scale, rng)


def log_prior(z: np.ndarray) -> float:
    """Standard-normal log-density up to a constant."""
    return -0.5 * float(z @ z)


# ---------------------------------------------------------------------------
# State evaluation and the tempered kernel
# ---------------------------------------------------------------------------

def evaluate_state(problem: ForwardProblem, z: np.ndarray, need_likelihood: bool,
                   need_qoi: bool, counts: EvaluationCounts) -> ChainState:
    """Run the requested solvers for ``z``; counts are incremented per call."""
    parameters = ParameterVector(np.asarray(z, dtype=float), problem.parameterization)
    state = ChainState(parameters)
    if not problem.has_data:
        state.log_likelihood = 0.0
    elif need_likelihood:
        counts.forward += 1
        state.forward_values = problem.forward(parameters.values)
        state.log_likelihood = problem.log_likelihood_of(state.forward_values)
    if need_qoi:
        counts.qoi += 1
        state.qoi = problem.qoi(parameters.values)
    return state


def prior_state(problem: ForwardProblem, rng: np.random.Generator, need_likelihood: bool,
                need_qoi: bool, counts: EvaluationCounts) -> ChainState:
    return evaluate_state(problem, rng.standard_normal(problem.dimension),
                          need_likelihood, need_qoi, counts)


def mh_step_tempered(state: ChainState, problem: ForwardProblem, proposal: ProposalSpec,
                     alpha: float, rng: np.random.Generator,
                     constraint: Optional[SubsetConstraint] = None,
                     counts: Optional[EvaluationCounts] = None) -> Tuple[ChainState, bool]:
    """One MH step for ``L^alpha * prior`` (restricted to ``constraint`` if given).

    Failed forward solves count as rejections. With a constraint the
    candidate always gets both its likelihood (when alpha > 0) and its QoI
    evaluated, so solver counts follow the budget formulas exactly.
    """
    counts = counts if counts is not None else EvaluationCounts()
    tempered = alpha > 0.0 and problem.has_data
    if tempered and state.log_likelihood is None:
        state = _fill_likelihood(state, problem, counts)

    candidate_z = propose(proposal, state.z, rng)
    try:
        candidate = evaluate_state(problem, candidate_z, tempered, constraint is not None, counts)
    except FORWARD_FAILURES as exc:
        counts.failures += 1
        logger.debug("forward solve failed, proposal rejected: %s", exc)
        return state, False
    except ValueError as exc:
        counts.failures += 1
        logger.debug("non-finite proposal rejected: %s", exc)
        return state, False

    if constraint is not None and not constraint.contains(candidate.qoi.value):
        return state, False

    log_ratio = 0.0
    if tempered:
        log_ratio += alpha * (candidate.log_likelihood - state.log_likelihood)
    if not proposal.prior_preserving:
        log_ratio += log_prior(candidate.z) - log_prior(state.z)

    accepted = log_ratio >= 0.0 or math.log(rng.uniform()) < log_ratio
    if not accepted:
        return state, False
    return candidate, True


def _fill_likelihood(state: ChainState, problem: ForwardProblem,
                     counts: EvaluationCounts) -> ChainState:
    counts.forward += 1
    values = problem.forward(state.z)
    return replace(state, forward_values=values, log_likelihood=problem.log_likelihood_of(values))


def propagate_constrained(state: ChainState, problem: ForwardProblem, proposal: ProposalSpec,
                          alpha: float, steps: int, rng: np.random.Generator,
                          constraint: Optional[SubsetConstraint] = None) -> PropagationResult:
    """Apply ``steps`` kernel steps to one particle."""
    stats, counts = AcceptanceStats(), EvaluationCounts()
    for _ in range(steps):
        state, accepted = mh_step_tempered(state, problem, proposal, alpha, rng, constraint, counts)
        stats.record(accepted)
    if constraint is not None:
        assert constraint.contains(state.qoi_value), "particle left the subset"
    return PropagationResult(state, stats, counts)


# ---------------------------------------------------------------------------
# Step-size control
# ---------------------------------------------------------------------------

def adapt_step_size(stats: AcceptanceStats, proposal: ProposalSpec,
                    target: float = TARGET_ACCEPTANCE, rate: float = ADAPT_RATE) -> ProposalSpec:
    """Multiplicative update towards the target acceptance rate."""
    if stats.proposed == 0:
        return proposal
    factor = math.exp(rate * (stats.rate - target))
    if proposal.prior_preserving:
        return replace(proposal, rho=float(np.clip(proposal.rho * factor, RHO_MIN, 1.0)))
    low, high = WALK_SCALE_BOUNDS
    return replace(proposal, step_scale=np.clip(proposal.step_scale * factor, low, high))


def decay_rho(proposal: ProposalSpec, floor: float = RHO_FLOOR) -> ProposalSpec:
    if not proposal.prior_preserving:
        return proposal
    return replace(proposal, rho=max(proposal.rho * proposal.rho_decay, floor))


def pilot_tune(problem: ForwardProblem, proposal: ProposalSpec, rng: np.random.Generator,
               steps: int = 2000, batch: int = 100,
               alpha: float = 1.0) -> Tuple[ProposalSpec, EvaluationCounts]:
    """Adapt the proposal on a single pilot chain started from a prior draw."""
    counts = EvaluationCounts()
    state = prior_state(problem, rng, need_likelihood=True, need_qoi=False, counts=counts)
    stats = AcceptanceStats()
    for step in range(1, steps + 1):
        state, accepted = mh_step_tempered(state, problem, proposal, alpha, rng, counts=counts)
        stats.record(accepted)
        if step % batch == 0:
            proposal = adapt_step_size(stats, proposal)
            stats = AcceptanceStats()
    logger.info("pilot tuning: %d steps -> %s", steps, proposal.describe())
    return proposal, counts


# ---------------------------------------------------------------------------
# MH chains and convergence
# ---------------------------------------------------------------------------

def r_hat(chains: np.ndarray) -> np.ndarray:
    """Gelman-Rubin statistic on the second half of each chain.

    ``chains`` has shape ``(m, n)`` or ``(m, n, p)``; returns one value per
    parameter (``inf`` where the within-chain variance is zero).
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    m, n = chains.shape[:2]
    if m < 2:
        raise ValueError("r_hat needs at least 2 chains")
    if n < 4:
        raise ValueError("r_hat needs chains of length at least 4")
    half = chains[:, n - n // 2:, :]
    length = half.shape[1]
    chain_means = half.mean(axis=1)
    within = half.var(axis=1, ddof=1).mean(axis=0)
    between = length * chain_means.var(axis=0, ddof=1)
    pooled = (length - 1) / length * within + between / length
    with np.errstate(divide="ignore", invalid="ignore"):
        result = np.sqrt(pooled / within)
    return np.where(within > 0, result, np.inf)


def steps_to_convergence(traces: np.ndarray, every: int, threshold: float = 1.2,
                         thinning: int = 1) -> Optional[int]:
    """First checkpoint (in MH steps) at which every parameter's R-hat is below ``threshold``."""
    traces = np.asarray(traces, dtype=float)
    n = traces.shape[1]
    for stop in range(every, n + 1, every):
        if stop < 4:
            continue
        if np.all(r_hat(traces[:, :stop]) < threshold):
            return stop * thinning
    return None


@dataclass
class MHChainsResult:
    """Thinned traces of independent MH chains targeting the posterior."""
    traces: np.ndarray
    qoi: np.ndarray
    stats: AcceptanceStats
    counts: EvaluationCounts
    proposal: ProposalSpec
    r_hat: np.ndarray = field(default_factory=lambda: np.array([]))
    censored: int = 0

    @property
    def max_r_hat(self) -> float:
        return float(np.max(self.r_hat)) if self.r_hat.size else float("nan")


def run_mh_chains(problem: ForwardProblem, proposal: ProposalSpec, n_chains: int,
                  length: int, rngs: Sequence[np.random.Generator], thinning: int = 1,
                  workers: ParticleWorkers = SERIAL, record_qoi: bool = True) -> MHChainsResult:
    """Independent posterior chains from prior draws; R is evaluated only on kept samples."""
    if n_chains < 1 or length < 1 or thinning < 1:
        raise ValueError("n_chains, length and thinning must be positive")
    if len(rngs) != n_chains:
        raise ValueError("one generator per chain is required")

    def run_chain(index: int):
        rng = rngs[index]
        counts, stats = EvaluationCounts(), AcceptanceStats()
        state = prior_state(problem, rng, need_likelihood=True, need_qoi=False, counts=counts)
        kept_z: List[np.ndarray] = []
        kept_r: List[float] = []
        censored = 0
        for step in range(1, length + 1):
            state, accepted = mh_step_tempered(state, problem, proposal, 1.0, rng, counts=counts)
            stats.record(accepted)
            if step % thinning == 0:
                kept_z.append(state.z.copy())
                if record_qoi:
                    counts.qoi += 1
                    result = problem.qoi(state.z)
                    censored += int(result.censored)
                    kept_r.append(result.value)
        return np.array(kept_z), np.array(kept_r), stats, counts, censored

    outputs = workers.map(run_chain, range(n_chains))
    traces = np.stack([o[0] for o in outputs])
    qoi = np.stack([o[1] for o in outputs]) if record_qoi else np.empty((n_chains, 0))
    stats, counts = AcceptanceStats(), EvaluationCounts()
    for o in outputs:
        stats = stats + o[2]
        counts = counts + o[3]
    result = MHChainsResult(traces, qoi, stats, counts, proposal, censored=sum(o[4] for o in outputs))
    if n_chains >= 2 and traces.shape[1] >= 4:
        result.r_hat = r_hat(traces)
    logger.info("MH: %d chains x %d steps, acceptance %.3f, max R-hat %.4f",
                n_chains, length, stats.rate, result.max_r_hat)
    return result


PropagateFn = Callable[[ChainState, np.random.Generator, Optional[SubsetConstraint], ProposalSpec],
                       PropagationResult]
