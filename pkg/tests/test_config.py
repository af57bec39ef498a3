"""Tests for experiment configs and the shipped presets."""

import json

import pytest

from src.config import ExperimentConfig, load_config, preset_names, save_config
from src.errors import ConfigError
from src.mcmc import Direction, ProposalKind
from src.smc_rare import ScheduleKind, StepControl


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestPresets:

    def test_every_preset_loads(self):
        names = preset_names()
        assert "flow1d_baseline" in names
        assert "transport2d_posterior" in names
        for name in names:
            assert load_config(name).name == name

    def test_flow_sweep_presets(self):
        baseline = load_config("flow1d_baseline")
        knobs = (baseline.n_particles, baseline.posterior.cess_fraction, baseline.rare.mh_steps,
                 baseline.rare.n_levels)
        assert knobs == (20, 0.9, 20, 100)
        assert load_config("flow1d_n200").n_particles == 200
        assert load_config("flow1d_cess9999").posterior.cess_fraction == 0.9999
        assert load_config("flow1d_steps200").rare.mh_steps == 200
        assert load_config("flow1d_levels1330").rare.n_levels == 1330

    def test_transport_posterior_runtime_objects(self):
        config = load_config("transport2d_posterior")
        spec = config.rare_event_spec()
        assert spec.direction is Direction.LEQ
        assert spec.target_threshold == 60.0
        runtime = config.postrisk_config()
        assert runtime.nested_steps == 100
        assert runtime.posterior_proposal.kind is ProposalKind.PCN
        assert runtime.rare.step_control is StepControl.DECAY
        schedule = runtime.schedule.build(spec.target_threshold)
        assert len(schedule.thresholds) == 38

    def test_prior_only_preset(self):
        runtime = load_config("transport2d_prior").postrisk_config()
        assert runtime.posterior is None
        assert runtime.schedule.kind is ScheduleKind.STEPPED


class TestLoading:

    def test_defaults_fill_missing_sections(self, tmp_path):
        config = load_config(write_config(tmp_path, {"name": "bare"}))
        assert config.method == "postrisk"
        assert config.case.test_case == "flow1d"
        assert config.rare.schedule == "adaptive"

    def test_unknown_keys_ignored(self, tmp_path):
        config = load_config(write_config(tmp_path, {"name": "x", "colour": "red",
                                                     "case": {"test_case": "gaussian_toy", "x": 1}}))
        assert config.case.test_case == "gaussian_toy"

    def test_round_trip(self, tmp_path):
        original = load_config("transport2d_desk_posterior")
        path = str(tmp_path / "saved.json")
        save_config(original, path)
        assert load_config(path) == original

    def test_from_dict_accepts_sections(self):
        config = ExperimentConfig.from_dict({"rare": {"proposal": {"kind": "pcn", "rho": 0.3}}})
        assert config.rare.proposal.rho == 0.3
        assert config.postrisk_config().rare_proposal.kind is ProposalKind.PCN

    def test_thresholds_of_interest_default_to_target(self, tmp_path):
        path = write_config(tmp_path, {"case": {"test_case": "gaussian_toy"},
                                       "rare": {"direction": "geq", "target": 2.5}})
        assert load_config(path).thresholds_of_interest() == (2.5,)


class TestErrors:

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="no config file or preset"):
            load_config("no_such_preset")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(path))

    @pytest.mark.parametrize("data", [
        {"method": "importance-sampling"},
        {"case": {"test_case": "heat3d"}},
        {"n_particles": 1},
        {"rare": {"schedule": "geometric"}},
        {"rare": {"direction": "above"}},
        {"rare": {"schedule": "log"}},
        {"method": "bias-probe", "rare": {"schedule": "log", "first_threshold": 0.0}},
        {"baseline": {"chain_length": 5, "thinning": 10}},
        {"posterior": {"cess_fraction": 1.5}},
        {"rare": {"schedule": "list", "thresholds": [1.0, 2.0, 3.0], "target": 4.0}},
        {"rare": {"schedule": "list", "thresholds": [1.0, 0.5, 4.0], "target": 4.0}},
    ])
    def test_invalid_values(self, tmp_path, data):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, data))
