"""
PostRisk-SMC: posterior tempering followed by subset sampling under the
posterior, the nested-step propagation variant, Monte Carlo baselines and
repeated-run summaries.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PostRiskError, StageError
from .mcmc import (
    FORWARD_FAILURES, AcceptanceStats, ChainState, Direction, EvaluationCounts, ProposalKind,
    ProposalSpec, PropagateFn, PropagationResult, SubsetConstraint, mh_step_tempered,
    pilot_tune, run_mh_chains,
)
from .problems import ForwardProblem
from .rng import Purpose, RandomStreams, Stage
from .smc_posterior import (
    SmcPosteriorConfig, SmcPosteriorResult, TemperingSchedule,
    initial_ensemble, run_smc_posterior,
)
from .smc_rare import (
    BiasProbeResult, LevelRecord, RareEventSpec, RareResult, RareStageConfig, ScheduleSpec,
    ThresholdSchedule, adaptive_bias_probe, constrained_propagator, run_smc_rare,
)
from .workers import SERIAL, ParticleWorkers

logger = logging.getLogger(__name__)

INTERMEDIATE_MODES = ("partial", "separate")


def threshold_key(threshold: float) -> str:
    return repr(float(threshold))


# ---------------------------------------------------------------------------
# Configuration and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PostRiskConfig:
    """Both stages of one PostRisk experiment.

    ``posterior=None`` skips tempering and runs the rare stage from prior
    draws. ``nested_steps`` switches stage 2 to nested posterior steps.
    """
    n_particles: int = 20
    posterior: Optional[SmcPosteriorConfig] = None
    tempering: TemperingSchedule = field(default_factory=TemperingSchedule)
    posterior_proposal: ProposalSpec = field(default_factory=ProposalSpec)
    rare: RareStageConfig = field(default_factory=RareStageConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    rare_proposal: Optional[ProposalSpec] = None
    nested_steps: Optional[int] = None
    thresholds_of_interest: Tuple[float, ...] = ()
    intermediate: str = "partial"
    repetitions: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if self.posterior is not None and self.posterior.n_particles != self.n_particles:
            raise ValueError("posterior and rare stages must use the same number of particles")
        if self.nested_steps is not None and self.nested_steps < 1:
            raise ValueError("nested_steps must be at least 1 when set")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.intermediate not in INTERMEDIATE_MODES:
            raise ValueError(f"intermediate must be one of {INTERMEDIATE_MODES}")


@dataclass
class RunRecord:
    """Outcome of one repetition."""
    repetition: int
    estimates: Dict[str, float]
    counts: EvaluationCounts = field(default_factory=EvaluationCounts)
    initial_counts: EvaluationCounts = field(default_factory=EvaluationCounts)
    levels: List[LevelRecord] = field(default_factory=list)
    schedules: Dict[str, List[float]] = field(default_factory=dict)
    diagnostics: List[dict] = field(default_factory=list)
    extras: Dict[str, object] = field(default_factory=dict)

    def to_dict(self, target_key: Optional[str] = None) -> dict:
        return {
            "repetition": self.repetition,
            "estimate": self.estimates.get(target_key) if target_key else None,
            "estimates_by_threshold": self.estimates,
            "counts": self.counts.to_dict(),
            "initial_counts": self.initial_counts.to_dict(),
            "levels": [lv.to_dict() for lv in self.levels],
            "schedules": self.schedules,
            "diagnostics": self.diagnostics,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(
            repetition=int(data["repetition"]),
            estimates={k: float(v) for k, v in data["estimates_by_threshold"].items()},
            counts=EvaluationCounts.from_dict(data.get("counts", {})),
            initial_counts=EvaluationCounts.from_dict(data.get("initial_counts", {})),
            levels=[LevelRecord.from_dict(lv) for lv in data.get("levels", [])],
            schedules={k: list(v) for k, v in data.get("schedules", {}).items()},
            diagnostics=list(data.get("diagnostics", [])),
            extras=dict(data.get("extras", {})),
        )


@dataclass
class RunSummary:
    mean: float
    cov: Optional[float]
    min: float
    max: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "cov": self.cov, "min": self.min, "max": self.max, "n": self.n}

    @classmethod
    def from_dict(cls, data: dict) -> "RunSummary":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def summarize_runs(estimates: Sequence[float]) -> RunSummary:
    """Mean, coefficient of variation (sample sd / mean), min and max.

    The COV is ``None`` when the mean is zero or fewer than two runs exist.
    """
    values = np.asarray(list(estimates), dtype=float)
    if values.size == 0:
        raise ValueError("no estimates to summarize")
    mean = float(values.mean())
    cov = None
    if values.size >= 2 and mean > 0.0:
        cov = float(values.std(ddof=1) / mean)
    return RunSummary(mean, cov, float(values.min()), float(values.max()), int(values.size))


@dataclass
class EstimateReport:
    method: str
    direction: str
    target: float
    per_run: List[RunRecord]
    summary: Dict[str, RunSummary] = field(default_factory=dict)
    intermediate: str = "partial"

    @classmethod
    def from_runs(cls, method: str, spec: RareEventSpec, runs: List[RunRecord]) -> "EstimateReport":
        report = cls(method, spec.direction.value, spec.target_threshold, runs)
        report.summary = {key: summarize_runs([r.estimates[key] for r in runs])
                          for key in runs[0].estimates} if runs else {}
        return report

    def estimates_for(self, threshold: float) -> List[float]:
        key = threshold_key(threshold)
        return [r.estimates[key] for r in self.per_run]

    def total_counts(self) -> EvaluationCounts:
        total = EvaluationCounts()
        for r in self.per_run:
            total = total + r.counts
        return total

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "direction": self.direction,
            "target": self.target,
            "intermediate": self.intermediate,
            "per_run": [r.to_dict(threshold_key(self.target)) for r in self.per_run],
            "summary": {k: s.to_dict() for k, s in self.summary.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateReport":
        return cls(
            method=data["method"],
            direction=data["direction"],
            target=float(data["target"]),
            per_run=[RunRecord.from_dict(r) for r in data["per_run"]],
            summary={k: RunSummary.from_dict(s) for k, s in data.get("summary", {}).items()},
            intermediate=data.get("intermediate", "partial"),
        )


# ---------------------------------------------------------------------------
# Budgets
# ---------------------------------------------------------------------------

def posterior_budget(n_particles: int, posterior_levels: int, posterior_steps: int,
                     rare_levels: int, rare_steps: int, nested_steps: int = 1) -> int:
    """Forward (G) evaluations of a PostRisk run, initial draws excluded."""
    return n_particles * (posterior_levels * posterior_steps + rare_levels * rare_steps * nested_steps)


def qoi_budget(n_particles: int, rare_levels: int, rare_steps: int) -> int:
    """QoI (R) evaluations of the rare stage, initial evaluations excluded."""
    return n_particles * rare_levels * rare_steps


# ---------------------------------------------------------------------------
# Nested propagation
# ---------------------------------------------------------------------------

def propagate_nested(state: ChainState, problem: ForwardProblem, proposal: ProposalSpec,
                     outer_steps: int, nested_steps: int, constraint: SubsetConstraint,
                     rng: np.random.Generator) -> PropagationResult:
    """``outer_steps`` rounds of ``nested_steps`` posterior moves, each round
    accepted only if its end point lies inside ``constraint``.

    Exactly one QoI evaluation happens per round.
    """
    outer, inner = AcceptanceStats(), AcceptanceStats()
    counts = EvaluationCounts()
    for _ in range(outer_steps):
        candidate = state
        for _ in range(nested_steps):
            candidate, accepted = mh_step_tempered(candidate, problem, proposal, 1.0, rng, None, counts)
            inner.record(accepted)
        counts.qoi += 1
        try:
            qoi = problem.qoi(candidate.z)
        except FORWARD_FAILURES as exc:
            counts.failures += 1
            logger.debug("QoI solve failed, nested round rejected: %s", exc)
            outer.record(False)
            continue
        accepted = constraint.contains(qoi.value)
        if accepted:
            state = replace(candidate, qoi=qoi)
        outer.record(accepted)
    assert constraint.contains(state.qoi_value), "particle left the subset"
    return PropagationResult(state, outer, counts, inner)


def nested_propagator(problem: ForwardProblem, outer_steps: int, nested_steps: int) -> PropagateFn:
    def propagate(state, rng, constraint, proposal):
        return propagate_nested(state, problem, proposal, outer_steps, nested_steps, constraint, rng)

    return propagate


# ---------------------------------------------------------------------------
# PostRisk runs
# ---------------------------------------------------------------------------

@dataclass
class PostRiskRun:
    """Everything one repetition produced."""
    rare: RareResult
    posterior: Optional[SmcPosteriorResult] = None

    @property
    def estimate(self) -> float:
        return self.rare.estimate

    @property
    def counts(self) -> EvaluationCounts:
        total = self.rare.counts
        if self.posterior is not None:
            total = self.posterior.counts + total
        return total

    @property
    def initial_counts(self) -> EvaluationCounts:
        total = self.rare.initial_counts
        if self.posterior is not None:
            total = self.posterior.initial_counts + total
        return total

    def record(self, repetition: int, estimates: Dict[str, float]) -> RunRecord:
        schedules = {"thresholds": list(self.rare.schedule.realized)}
        diagnostics = []
        if self.posterior is not None:
            schedules["alphas"] = list(self.posterior.schedule.realized)
            diagnostics = [d.to_dict() for d in self.posterior.diagnostics]
        return RunRecord(repetition, estimates, self.counts, self.initial_counts,
                         list(self.rare.levels), schedules, diagnostics)


def run_postrisk_once(problem: ForwardProblem, spec: RareEventSpec, config: PostRiskConfig,
                      repetition: int = 0, workers: ParticleWorkers = SERIAL,
                      schedule: Optional[ThresholdSchedule] = None) -> PostRiskRun:
    """One PostRisk estimate: tempering to the posterior, then subset sampling at alpha = 1.

    Stage failures are re-raised as ``StageError`` tagged with the stage name.
    """
    streams = RandomStreams(config.seed, repetition)
    n = config.n_particles
    rare_rngs = streams.particles(Stage.RARE, n)
    posterior: Optional[SmcPosteriorResult] = None

    if config.posterior is not None:
        try:
            posterior = run_smc_posterior(problem, config.posterior, config.tempering,
                                          config.posterior_proposal, streams, workers)
        except PostRiskError as exc:
            raise StageError("posterior", exc) from exc
        ensemble = posterior.ensemble
        alpha = 1.0
        proposal = config.rare_proposal or posterior.proposal
    else:
        ensemble, _ = initial_ensemble(problem.without_data(), rare_rngs, workers=workers)
        alpha = 0.0
        proposal = config.rare_proposal or config.posterior_proposal

    stage_problem = problem if alpha > 0 else problem.without_data()
    if config.nested_steps is not None and alpha > 0:
        propagate = nested_propagator(stage_problem, config.rare.mh_steps, config.nested_steps)
    else:
        propagate = constrained_propagator(stage_problem, config.rare.mh_steps, alpha)

    schedule = schedule or config.schedule.build(spec.target_threshold, config.thresholds_of_interest)
    try:
        rare = run_smc_rare(
            ensemble, spec, schedule, config.rare, proposal, propagate,
            rare_rngs, streams.resample(Stage.RARE),
            problem=stage_problem, workers=workers,
            thresholds_of_interest=config.thresholds_of_interest,
        )
    except PostRiskError as exc:
        raise StageError("rare", exc) from exc
    return PostRiskRun(rare, posterior)


def run_postrisk(problem: ForwardProblem, spec: RareEventSpec, config: PostRiskConfig,
                 workers: ParticleWorkers = SERIAL,
                 method: str = "postrisk") -> Tuple[EstimateReport, List[PostRiskRun]]:
    """Repeat ``run_postrisk_once`` and summarize every threshold of interest."""
    runs: List[PostRiskRun] = []
    records: List[RunRecord] = []
    thresholds = sorted({spec.target_threshold, *config.thresholds_of_interest})

    for r in range(config.repetitions):
        run = run_postrisk_once(problem, spec, config, r, workers)
        estimates = {threshold_key(t): run.rare.intermediate.get(t, 0.0) for t in thresholds}
        record = run.record(r, estimates)

        if config.intermediate == "separate":
            others = [t for t in thresholds if t != spec.target_threshold]
            for j, t in enumerate(others):
                sub_spec = replace(spec, target_threshold=t)
                sub_config = replace(config, thresholds_of_interest=())
                separate = run_postrisk_once(problem, sub_spec, sub_config,
                                             (j + 1) * config.repetitions + r, workers)
                record.estimates[threshold_key(t)] = separate.estimate
                record.counts = record.counts + separate.counts
        logger.info("%s repetition %d: estimate %.4g", method, r, run.estimate)
        runs.append(run)
        records.append(record)
    report = EstimateReport.from_runs(method, spec, records)
    report.intermediate = config.intermediate
    return report, runs


def run_bias_probe(problem: ForwardProblem, spec: RareEventSpec, config: PostRiskConfig,
                   n_runs: int, workers: ParticleWorkers = SERIAL) -> BiasProbeResult:
    """Adaptive-threshold estimates paired with re-runs on their frozen thresholds."""
    adaptive = config.schedule.build(spec.target_threshold)

    def run(schedule: ThresholdSchedule, repetition: int) -> RareResult:
        return run_postrisk_once(problem, spec, config, repetition, workers, schedule).rare

    return adaptive_bias_probe(run, adaptive, n_runs)


# ---------------------------------------------------------------------------
# Monte Carlo baselines
# ---------------------------------------------------------------------------

def _fractions(values: np.ndarray, thresholds: Sequence[float], direction: Direction) -> Dict[str, float]:
    result = {}
    for t in thresholds:
        inside = values >= t if direction is Direction.GEQ else values <= t
        result[threshold_key(t)] = float(np.mean(inside)) if values.size else 0.0
    return result


def mc_prior_estimate(problem: ForwardProblem, spec: RareEventSpec, n_samples: int,
                      streams: RandomStreams, thresholds: Sequence[float] = (),
                      workers: ParticleWorkers = SERIAL, repetition: int = 0) -> RunRecord:
    """Fraction of prior draws whose QoI lies in the rare set."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")

    def draw(index: int):
        rng = streams.stream(Stage.BASELINE, Purpose.PARTICLE, index)
        return problem.qoi(rng.standard_normal(problem.dimension))

    results = workers.map(draw, range(n_samples))
    values = np.array([r.value for r in results])
    thresholds = sorted({spec.target_threshold, *thresholds})
    counts = EvaluationCounts(qoi=n_samples)
    extras = {"censored": int(sum(r.censored for r in results))}
    return RunRecord(repetition, _fractions(values, thresholds, spec.direction), counts, extras=extras)


def mc_posterior_estimate(problem: ForwardProblem, spec: RareEventSpec, n_chains: int,
                          chain_length: int, thinning: int, proposal: ProposalSpec,
                          streams: RandomStreams, thresholds: Sequence[float] = (),
                          workers: ParticleWorkers = SERIAL, pilot_steps: int = 0,
                          repetition: int = 0) -> RunRecord:
    """Indicator average over thinned posterior MH samples, with R-hat on the traces."""
    if chain_length < thinning:
        raise ValueError("chain_length must be at least the thinning interval")
    initial = EvaluationCounts()
    if pilot_steps > 0 and proposal.kind is ProposalKind.GAUSSIAN_WALK:
        proposal, initial = pilot_tune(problem, proposal, streams.pilot(Stage.BASELINE), pilot_steps)
    rngs = [streams.stream(Stage.BASELINE, Purpose.PARTICLE, c) for c in range(n_chains)]
    result = run_mh_chains(problem, proposal, n_chains, chain_length, rngs, thinning, workers)
    thresholds = sorted({spec.target_threshold, *thresholds})
    extras = {
        "acceptance": result.stats.rate,
        "max_r_hat": result.max_r_hat if math.isfinite(result.max_r_hat) else None,
        "censored": result.censored,
        "kept_samples": int(result.qoi.size),
    }
    return RunRecord(repetition, _fractions(result.qoi.ravel(), thresholds, spec.direction),
                     result.counts, initial, extras=extras)


def repeat(method: str, spec: RareEventSpec, repetitions: int,
           run: Callable[[int], RunRecord]) -> EstimateReport:
    """Collect ``run(r)`` for every repetition into one report."""
    records = [run(r) for r in range(repetitions)]
    return EstimateReport.from_runs(method, spec, records)
