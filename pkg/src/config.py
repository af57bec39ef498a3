"""
Experiment configuration - JSON-backed dataclasses with validation and
builders for the library's runtime objects.
"""

import json
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Union

from .errors import ConfigError
from .mcmc import Direction, ProposalKind, ProposalSpec
from .postrisk import INTERMEDIATE_MODES, PostRiskConfig
from .problems import TEST_CASES, default_target
from .smc_posterior import SmcPosteriorConfig, TemperingSchedule
from .smc_rare import RareEventSpec, RareStageConfig, ScheduleKind, ScheduleSpec, StepControl

PRESET_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          "assets", "configs")

METHODS = ("postrisk", "smc-posterior", "smc-rare", "mh", "mc-prior", "bias-probe")


def _section(cls, data):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    return cls.from_dict(data)


@dataclass
class CaseSection:
    test_case: str = "flow1d"
    truth_seed: int = 2024
    use_data: bool = True
    grid_n: int = 51
    toy_dimension: int = 1
    toy_noise_sd: float = 1.0
    noise_scale: float = 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "CaseSection":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class ProposalSection:
    kind: str = "gaussian-walk"
    rho: float = 1.0
    step_scale: float = 0.5
    rho_decay: float = 0.9
    pilot_steps: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ProposalSection":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})

    def build(self) -> ProposalSpec:
        return ProposalSpec(ProposalKind(self.kind), self.rho, self.step_scale, self.rho_decay)


@dataclass
class PosteriorSection:
    enabled: bool = True
    mh_steps: int = 20
    cess_fraction: float = 0.9
    ess_resample_fraction: float = 0.3
    fixed_alphas: Optional[List[float]] = None
    adapt: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorSection":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class RareSection:
    direction: Optional[str] = None
    target: Optional[float] = None
    thresholds_of_interest: List[float] = field(default_factory=list)
    schedule: str = "adaptive"
    gamma: float = 0.05
    first_threshold: Optional[float] = None
    n_levels: int = 100
    switch_threshold: Optional[float] = None
    step: Optional[float] = None
    thresholds: List[float] = field(default_factory=list)
    mh_steps: int = 20
    nested_steps: Optional[int] = None
    step_control: str = "decay"
    intermediate: str = "partial"
    max_levels: int = 500
    proposal: Optional[ProposalSection] = None

    @classmethod
    def from_dict(cls, data: dict) -> "RareSection":
        values = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if values.get("proposal") is not None:
            values["proposal"] = _section(ProposalSection, values["proposal"])
        return cls(**values)


@dataclass
class BaselineSection:
    n_samples: int = 10000
    n_chains: int = 10
    chain_length: int = 55000
    thinning: int = 1
    bias_runs: int = 10

    @classmethod
    def from_dict(cls, data: dict) -> "BaselineSection":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class ExperimentConfig:
    """One experiment: test case, method, both SMC stages and baselines."""
    name: str = "experiment"
    method: str = "postrisk"
    seed: int = 0
    repetitions: int = 1
    threads: int = 1
    n_particles: int = 20
    output_dir: str = "runs"
    desk_scale: bool = False
    case: CaseSection = field(default_factory=CaseSection)
    proposal: ProposalSection = field(default_factory=ProposalSection)
    posterior: PosteriorSection = field(default_factory=PosteriorSection)
    rare: RareSection = field(default_factory=RareSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        values = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        sections = {"case": CaseSection, "proposal": ProposalSection, "posterior": PosteriorSection,
                    "rare": RareSection, "baseline": BaselineSection}
        for key, section in sections.items():
            values[key] = _section(section, values.get(key))
        return cls(**values)

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        """Raise ConfigError on the first invalid or inconsistent value."""
        checks = [
            (self.method in METHODS, f"method must be one of {METHODS}, got {self.method!r}"),
            (self.case.test_case in TEST_CASES,
             f"test_case must be one of {TEST_CASES}, got {self.case.test_case!r}"),
            (self.repetitions >= 1, "repetitions must be at least 1"),
            (self.threads >= 1, "threads must be at least 1"),
            (self.n_particles >= 2, "n_particles must be at least 2"),
            (self.case.grid_n >= 2, "grid_n must be at least 2"),
            (self.case.noise_scale > 0, "noise_scale must be positive"),
            (self.rare.schedule in [k.value for k in ScheduleKind],
             f"unknown threshold schedule {self.rare.schedule!r}"),
            (self.rare.step_control in [c.value for c in StepControl],
             f"unknown step_control {self.rare.step_control!r}"),
            (self.rare.intermediate in INTERMEDIATE_MODES,
             f"intermediate must be one of {INTERMEDIATE_MODES}"),
            (self.rare.direction in (None, "geq", "leq"), "direction must be 'geq' or 'leq'"),
            (self.rare.nested_steps is None or self.rare.nested_steps >= 1,
             "nested_steps must be at least 1 when set"),
            (self.baseline.thinning >= 1, "thinning must be at least 1"),
            (self.baseline.chain_length >= self.baseline.thinning,
             "chain_length must be at least the thinning interval"),
            (self.baseline.n_samples >= 1, "n_samples must be at least 1"),
            (self.method != "bias-probe" or self.rare.schedule == "adaptive",
             "bias-probe needs the adaptive threshold schedule"),
            (self.method != "bias-probe" or self.baseline.bias_runs >= 2, "bias_runs must be at least 2"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        # constructing the runtime objects runs their own checks
        spec = self.rare_event_spec()
        runtime = self.postrisk_config()
        try:
            schedule = runtime.schedule.build(spec.target_threshold, runtime.thresholds_of_interest)
            schedule.validate_for(spec)
        except ValueError as exc:
            raise ConfigError(f"invalid threshold schedule: {exc}") from exc
        return self

    # ------------------------------------------------------------------
    # Builders
    # ------------------------------------------------------------------

    def rare_event_spec(self) -> RareEventSpec:
        default = default_target(self.case.test_case)
        direction = self.rare.direction or default.direction
        target = default.threshold if self.rare.target is None else self.rare.target
        try:
            return RareEventSpec(Direction(direction), float(target), self.case.test_case)
        except ValueError as exc:
            raise ConfigError(f"invalid rare event: {exc}") from exc

    def thresholds_of_interest(self) -> tuple:
        if self.rare.thresholds_of_interest:
            return tuple(float(t) for t in self.rare.thresholds_of_interest)
        if self.rare.target is not None:
            return (float(self.rare.target),)
        return tuple(default_target(self.case.test_case).thresholds_of_interest)

    def schedule_spec(self) -> ScheduleSpec:
        r = self.rare
        try:
            return ScheduleSpec(ScheduleKind(r.schedule), r.gamma, r.first_threshold, r.n_levels,
                                r.switch_threshold, r.step, tuple(r.thresholds))
        except ValueError as exc:
            raise ConfigError(f"invalid threshold schedule: {exc}") from exc

    def postrisk_config(self, with_posterior: Optional[bool] = None) -> PostRiskConfig:
        """Runtime configuration; ``with_posterior`` overrides ``posterior.enabled``."""
        enabled = self.posterior.enabled if with_posterior is None else with_posterior
        p = self.posterior
        try:
            posterior = None
            if enabled:
                posterior = SmcPosteriorConfig(self.n_particles, p.mh_steps, p.ess_resample_fraction,
                                               p.adapt, self.proposal.pilot_steps)
            tempering = TemperingSchedule(adaptive=p.fixed_alphas is None,
                                          cess_fraction=p.cess_fraction,
                                          fixed_alphas=p.fixed_alphas)
            rare_proposal = self.rare.proposal.build() if self.rare.proposal else None
            return PostRiskConfig(
                n_particles=self.n_particles,
                posterior=posterior,
                tempering=tempering,
                posterior_proposal=self.proposal.build(),
                rare=RareStageConfig(self.rare.mh_steps, StepControl(self.rare.step_control),
                                     self.rare.max_levels),
                schedule=self.schedule_spec(),
                rare_proposal=rare_proposal,
                nested_steps=self.rare.nested_steps,
                thresholds_of_interest=self.thresholds_of_interest(),
                intermediate=self.rare.intermediate,
                repetitions=self.repetitions,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def preset_names() -> List[str]:
    if not os.path.isdir(PRESET_DIR):
        return []
    return sorted(f[:-5] for f in os.listdir(PRESET_DIR) if f.endswith(".json"))


def load_config(path_or_name: Union[str, os.PathLike]) -> ExperimentConfig:
    """Load a JSON config file, or a shipped preset by name."""
    path = os.fspath(path_or_name)
    if not os.path.isfile(path):
        preset = os.path.join(PRESET_DIR, f"{path}.json")
        if not os.path.isfile(preset):
            raise ConfigError(f"no config file or preset named {path!r} (presets: {', '.join(preset_names())})")
        path = preset
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except (json.JSONDecodeError, OSError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        config = ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config.validate()


def save_config(config: ExperimentConfig, path: str) -> None:
    tmp_path = path + ".tmp"
    with open(tmp_path, "w") as f:
        json.dump(config.to_dict(), f, indent=2)
    os.replace(tmp_path, path)
