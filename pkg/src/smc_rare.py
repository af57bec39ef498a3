"""
Stage 2 - subset-sampling SMC for P(R(theta) in A).

The rare set is approached through nested sets ``{R >= T_1} ⊇ {R >= T_2} ⊇
...`` (or ``<=`` for leq hazards). At every level the survivors get equal
weight, the ensemble is resampled among them and moved with constrained
MH steps that never leave the current set. The estimate is the product of
the survivor fractions, accumulated in log space.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParticleSystemDied, ThresholdStallError
from .mcmc import (
    AcceptanceStats, ChainState, Direction, EvaluationCounts, PropagateFn, ProposalSpec,
    SubsetConstraint, adapt_step_size, decay_rho, propagate_constrained,
)
from .smc_posterior import ParticleEnsemble, systematic_resample
from .workers import SERIAL, ParticleWorkers

logger = logging.getLogger(__name__)


class ScheduleMode(Enum):
    ADAPTIVE = "adaptive"
    FIXED = "fixed"


class StepControl(Enum):
    """How the proposal evolves from one rare level to the next."""
    DECAY = "decay"
    ADAPT = "adapt"
    FIXED = "fixed"


@dataclass(frozen=True)
class RareEventSpec:
    direction: Direction
    target_threshold: float
    label: str = ""

    def __post_init__(self):
        if not math.isfinite(self.target_threshold):
            raise ValueError("target threshold must be finite")

    def constraint(self, threshold: Optional[float] = None) -> SubsetConstraint:
        return SubsetConstraint(self.target_threshold if threshold is None else threshold,
                                self.direction)


@dataclass
class ThresholdSchedule:
    mode: ScheduleMode = ScheduleMode.ADAPTIVE
    gamma: float = 0.05
    thresholds: List[float] = field(default_factory=list)
    realized: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.mode is ScheduleMode.ADAPTIVE:
            if not 0.0 < self.gamma < 1.0:
                raise ValueError("gamma must be in (0, 1)")
        elif not self.thresholds:
            raise ValueError("a fixed threshold schedule needs at least one threshold")

    @classmethod
    def adaptive(cls, gamma: float) -> "ThresholdSchedule":
        return cls(ScheduleMode.ADAPTIVE, gamma=gamma)

    @classmethod
    def fixed(cls, thresholds: Sequence[float]) -> "ThresholdSchedule":
        return cls(ScheduleMode.FIXED, thresholds=[float(t) for t in thresholds])

    @property
    def n_levels(self) -> Optional[int]:
        return len(self.thresholds) if self.mode is ScheduleMode.FIXED else None

    def validate_for(self, spec: RareEventSpec) -> None:
        if self.mode is not ScheduleMode.FIXED:
            return
        ts = self.thresholds
        if ts[-1] != spec.target_threshold:
            raise ValueError(f"last threshold {ts[-1]} differs from target {spec.target_threshold}")
        for a, b in zip(ts, ts[1:]):
            if not spec.direction.passes(b, a):
                raise ValueError("thresholds must move monotonically toward the target")

    def fresh(self) -> "ThresholdSchedule":
        return replace(self, realized=[])


@dataclass
class LevelRecord:
    level: int
    threshold: float
    survivors: int
    probability: float
    acceptance: float

    def to_dict(self) -> dict:
        return {"k": self.level, "threshold": self.threshold, "survivors": self.survivors,
                "probability": self.probability, "acceptance": self.acceptance}

    @classmethod
    def from_dict(cls, data: dict) -> "LevelRecord":
        return cls(int(data["k"]), float(data["threshold"]), int(data["survivors"]),
                   float(data["probability"]), float(data["acceptance"]))


@dataclass(frozen=True)
class RareStageConfig:
    mh_steps: int = 20
    step_control: StepControl = StepControl.DECAY
    max_levels: int = 500
    propagate_final: bool = True

    def __post_init__(self):
        if self.mh_steps < 0:
            raise ValueError("mh_steps must be nonnegative")
        if self.max_levels < 1:
            raise ValueError("max_levels must be positive")


@dataclass
class RareResult:
    log_estimate: float
    levels: List[LevelRecord]
    ensemble: ParticleEnsemble
    schedule: ThresholdSchedule
    counts: EvaluationCounts
    initial_counts: EvaluationCounts
    proposal: ProposalSpec
    intermediate: Dict[float, float] = field(default_factory=dict)

    @property
    def estimate(self) -> float:
        return math.exp(self.log_estimate)


# ---------------------------------------------------------------------------
# Thresholds and weights
# ---------------------------------------------------------------------------

def subset_weights(ensemble: ParticleEnsemble, threshold: float, direction: Direction,
                   level: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Equal weights on particles inside the level set; raises when none are."""
    values = ensemble.qoi_values()
    if direction is Direction.GEQ:
        inside = values >= threshold
    else:
        inside = values <= threshold
    survivors = np.flatnonzero(inside)
    if survivors.size == 0:
        raise ParticleSystemDied(level, threshold)
    weights = np.zeros(values.size)
    weights[survivors] = 1.0 / survivors.size
    return weights, survivors


def adaptive_threshold(ensemble: ParticleEnsemble, gamma: float, direction: Direction,
                       target: Optional[float] = None) -> Tuple[float, bool]:
    """Order-statistic threshold at index ``ceil(gamma * N)``, clamped to ``target``.

    Returns the threshold and whether it is the final level.
    """
    values = np.sort(ensemble.qoi_values())
    if direction is Direction.LEQ:
        values = values[::-1]
    index = min(int(math.ceil(gamma * values.size)), values.size - 1)
    threshold = float(values[index])
    if target is not None and direction.passes(threshold, target):
        return float(target), True
    return threshold, False


def fixed_log_schedule(first: float, target: float, n_levels: int) -> List[float]:
    """``a log(k) + first`` for ``k = 1..n_levels`` with the last entry exactly ``target``."""
    if n_levels < 2:
        raise ValueError("a logarithmic schedule needs at least 2 levels")
    if first == target:
        raise ValueError("first threshold must differ from the target")
    slope = (target - first) / math.log(n_levels)
    thresholds = [slope * math.log(k) + first for k in range(1, n_levels + 1)]
    thresholds[-1] = float(target)
    return thresholds


def posterior_log_schedule(first: float, target: float, rare_levels: int,
                           posterior_levels: int) -> List[Tuple[int, float]]:
    """Log schedule indexed by the global iteration ``k = K_P + 1 .. K_P + K_R``.

    After tempering ends at iteration ``K_P`` the rare levels continue the
    count, so the threshold at iteration ``k`` is ``a log(k - K_P) + first``.
    """
    if posterior_levels < 0:
        raise ValueError("posterior_levels must be nonnegative")
    thresholds = fixed_log_schedule(first, target, rare_levels)
    return [(posterior_levels + j + 1, t) for j, t in enumerate(thresholds)]


def stepped_schedule(first: float, switch: float, log_levels: int, step: float,
                     target: float) -> List[float]:
    """Logarithmic levels from ``first`` to ``switch``, then constant steps to ``target``.

    With ``3500 -> 100`` over 30 levels and 5-day steps to 60 this yields the
    38 breakthrough-time levels of the transport example.
    """
    thresholds = fixed_log_schedule(first, switch, log_levels)
    sign = 1.0 if target > switch else -1.0
    value = switch
    while (target - value) * sign > 1e-12:
        value = value + sign * abs(step)
        if (value - target) * sign > 0:
            value = target
        thresholds.append(float(value))
    thresholds[-1] = float(target)
    return thresholds


def snap_threshold(thresholds: Sequence[float], value: float) -> Tuple[List[float], int]:
    """Replace the entry closest to ``value`` by ``value``; returns the list and the index."""
    thresholds = list(thresholds)
    index = int(np.argmin([abs(t - value) for t in thresholds]))
    thresholds[index] = float(value)
    return thresholds, index


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def ensure_qoi(ensemble: ParticleEnsemble, problem, workers: ParticleWorkers = SERIAL
               ) -> Tuple[ParticleEnsemble, EvaluationCounts]:
    """Evaluate the QoI for particles that do not carry one yet."""

    def fill(state: ChainState):
        counts = EvaluationCounts()
        if state.qoi is not None:
            return state, counts
        counts.qoi += 1
        return replace(state, qoi=problem.qoi(state.z)), counts

    outputs = workers.map(fill, ensemble.particles)
    counts = EvaluationCounts()
    for _, c in outputs:
        counts = counts + c
    particles = [s for s, _ in outputs]
    return ParticleEnsemble(particles, ensemble.weights, ensemble.alpha, ensemble.level), counts


def _fraction_inside(values: np.ndarray, threshold: float, direction: Direction) -> float:
    if direction is Direction.GEQ:
        return float(np.mean(values >= threshold))
    return float(np.mean(values <= threshold))


def run_smc_rare(ensemble: ParticleEnsemble, spec: RareEventSpec, schedule: ThresholdSchedule,
                 config: RareStageConfig, proposal: ProposalSpec, propagate: PropagateFn,
                 rngs: Sequence[np.random.Generator], resample_rng: np.random.Generator,
                 problem=None, workers: ParticleWorkers = SERIAL,
                 thresholds_of_interest: Sequence[float] = ()) -> RareResult:
    """Estimate P(A) starting from an equally weighted ensemble.

    ``propagate(state, rng, constraint, proposal)`` moves one particle and
    must keep it inside ``constraint``. ``thresholds_of_interest`` get
    partial estimates: the running product times the fraction of the
    ensemble meeting the threshold at the first level that reaches it.
    Thresholds past the target use the final ensemble.
    """
    schedule = schedule.fresh()
    schedule.validate_for(spec)
    n = ensemble.size
    if len(rngs) != n:
        raise ValueError("one generator per particle is required")

    initial_counts = EvaluationCounts()
    if problem is not None:
        ensemble, initial_counts = ensure_qoi(ensemble, problem, workers)
    if not np.allclose(ensemble.weights, 1.0 / n):
        raise ValueError("the rare stage needs an equally weighted ensemble")

    direction = spec.direction
    pending = sorted({float(t) for t in thresholds_of_interest} | {spec.target_threshold},
                     key=lambda t: t if direction is Direction.GEQ else -t)
    intermediate: Dict[float, float] = {}
    levels: List[LevelRecord] = []
    counts = EvaluationCounts()
    log_estimate = 0.0
    level = 0
    final = False

    while not final:
        level += 1
        if level > config.max_levels:
            raise ThresholdStallError(
                f"no level reached target {spec.target_threshold:.6g} within {config.max_levels} levels"
            )
        if schedule.mode is ScheduleMode.ADAPTIVE:
            threshold, final = adaptive_threshold(ensemble, schedule.gamma, direction, spec.target_threshold)
        else:
            threshold = schedule.thresholds[level - 1]
            final = level == len(schedule.thresholds)

        values = ensemble.qoi_values()
        while pending and direction.passes(threshold, pending[0]):
            reached = pending.pop(0)
            intermediate[reached] = math.exp(log_estimate) * _fraction_inside(values, reached, direction)

        weights, survivors = subset_weights(ensemble, threshold, direction, level)
        probability = survivors.size / n
        log_estimate += math.log(probability)
        schedule.realized.append(threshold)

        indices = systematic_resample(weights, resample_rng)
        particles = [ensemble.particles[i] for i in indices]

        stats = AcceptanceStats()
        if config.mh_steps > 0 and (config.propagate_final or not final):
            constraint = SubsetConstraint(threshold, direction)

            def move(index: int, particles=particles, constraint=constraint, proposal=proposal):
                return propagate(particles[index], rngs[index], constraint, proposal)

            results = workers.map(move, range(n))
            particles = [r.state for r in results]
            inner = AcceptanceStats()
            for r in results:
                stats = stats + r.stats
                counts = counts + r.counts
                if r.inner_stats is not None:
                    inner = inner + r.inner_stats
            proposal = _next_proposal(config.step_control, proposal, stats, inner)

        ensemble = ParticleEnsemble.uniform(particles, ensemble.alpha, level)
        levels.append(LevelRecord(level, threshold, int(survivors.size), probability, stats.rate))
        logger.info("rare level %d: T=%.6g survivors=%d/%d P=%.4f acc=%.3f",
                    level, threshold, survivors.size, n, probability, stats.rate)

    target = spec.constraint()
    for particle in ensemble.particles:
        assert target.contains(particle.qoi_value), "final particle outside the rare set"
    intermediate[spec.target_threshold] = math.exp(log_estimate)
    values = ensemble.qoi_values()
    for reached in pending:
        intermediate[reached] = math.exp(log_estimate) * _fraction_inside(values, reached, direction)
    return RareResult(log_estimate, levels, ensemble, schedule, counts, initial_counts,
                      proposal, intermediate)


def _next_proposal(control: StepControl, proposal: ProposalSpec, stats: AcceptanceStats,
                   inner: AcceptanceStats) -> ProposalSpec:
    if control is StepControl.ADAPT:
        return adapt_step_size(inner if inner.proposed else stats, proposal)
    if control is StepControl.DECAY:
        if inner.proposed:
            return adapt_step_size(inner, proposal)
        return decay_rho(proposal)
    return proposal


def constrained_propagator(problem, steps: int, alpha: float) -> PropagateFn:
    """Plain constrained MH moves at temperature ``alpha``."""
    def propagate(state, rng, constraint, proposal):
        return propagate_constrained(state, problem, proposal, alpha, steps, rng, constraint)

    return propagate


# ---------------------------------------------------------------------------
# Bias of adaptive schedules
# ---------------------------------------------------------------------------

@dataclass
class BiasProbeResult:
    adaptive: List[float]
    rerun: List[float]
    schedules: List[List[float]]

    @property
    def adaptive_mean(self) -> float:
        return float(np.mean(self.adaptive))

    @property
    def rerun_mean(self) -> float:
        return float(np.mean(self.rerun))

    def to_dict(self) -> dict:
        return {"adaptive": self.adaptive, "rerun": self.rerun, "schedules": self.schedules,
                "adaptive_mean": self.adaptive_mean, "rerun_mean": self.rerun_mean}


def adaptive_bias_probe(run: Callable[[ThresholdSchedule, int], RareResult],
                        schedule: ThresholdSchedule, n_runs: int) -> BiasProbeResult:
    """Pair each adaptive run with a fresh run on its frozen thresholds.

    ``run(schedule, repetition)`` executes one estimate; the re-run uses a
    repetition index offset by ``n_runs`` so its randomness is independent.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be at least 2")
    if schedule.mode is not ScheduleMode.ADAPTIVE:
        raise ValueError("the bias probe needs an adaptive schedule")
    adaptive, rerun, schedules = [], [], []
    for r in range(n_runs):
        first = run(schedule, r)
        frozen = ThresholdSchedule.fixed(first.schedule.realized)
        second = run(frozen, n_runs + r)
        adaptive.append(first.estimate)
        rerun.append(second.estimate)
        schedules.append(list(first.schedule.realized))
        logger.info("bias probe %d: adaptive %.4g, frozen re-run %.4g", r, first.estimate, second.estimate)
    return BiasProbeResult(adaptive, rerun, schedules)


# ---------------------------------------------------------------------------
# Schedule construction
# ---------------------------------------------------------------------------

class ScheduleKind(Enum):
    ADAPTIVE = "adaptive"
    LOG = "log"
    STEPPED = "stepped"
    LIST = "list"


@dataclass(frozen=True)
class ScheduleSpec:
    """Recipe for a threshold schedule that can be rebuilt for any target."""
    kind: ScheduleKind = ScheduleKind.ADAPTIVE
    gamma: float = 0.05
    first: Optional[float] = None
    n_levels: int = 100
    switch: Optional[float] = None
    step: Optional[float] = None
    thresholds: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind in (ScheduleKind.LOG, ScheduleKind.STEPPED) and self.first is None:
            raise ValueError(f"a {self.kind.value} schedule needs a first threshold")
        if self.kind is ScheduleKind.STEPPED and (self.switch is None or not self.step):
            raise ValueError("a stepped schedule needs switch and step")
        if self.kind is ScheduleKind.LIST and not self.thresholds:
            raise ValueError("a list schedule needs thresholds")

    def build(self, target: float, snap_to: Sequence[float] = ()) -> ThresholdSchedule:
        """Schedule ending at ``target``; fixed kinds get ``snap_to`` values snapped in."""
        if self.kind is ScheduleKind.ADAPTIVE:
            return ThresholdSchedule.adaptive(self.gamma)
        if self.kind is ScheduleKind.LOG:
            thresholds = fixed_log_schedule(self.first, target, self.n_levels)
        elif self.kind is ScheduleKind.STEPPED:
            thresholds = stepped_schedule(self.first, self.switch, self.n_levels, self.step, target)
        else:
            thresholds = list(self.thresholds)
            if thresholds[-1] != target:
                raise ValueError(f"listed thresholds end at {thresholds[-1]}, not {target}")
        low, high = sorted((thresholds[0], target))
        for value in snap_to:
            # values past the target are read off the final ensemble instead
            if not low < value < high:
                continue
            if min(abs(t - value) for t in thresholds) > 0:
                thresholds, _ = snap_threshold(thresholds[:-1], value)
                thresholds.append(float(target))
        return ThresholdSchedule.fixed(thresholds)
