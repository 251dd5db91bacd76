"""
Unit tests for configuration validation and the typed config view
"""
import copy

import pytest

from modules.attack_driver import AttackMode
from modules.exceptions import ConfigError, ValidationError
from modules.experiment_config import ExperimentConfig, ExperimentGuard


class TestExperimentGuard:
    """Schema and consistency checks"""

    @pytest.fixture(autouse=True)
    def setup(self, config):
        self.config = copy.deepcopy(config)

    def test_project_config_passes(self):
        result = ExperimentGuard(self.config).ensure_valid()
        assert result.passed
        assert result.issues == []

    def test_empty_config_passes(self):
        assert ExperimentGuard({}).ensure_valid().passed

    def test_unknown_key_rejected(self):
        self.config['attack']['learning_rte'] = 0.1
        result = ExperimentGuard(self.config).ensure_valid(enforce=False)
        assert not result.passed
        assert any('learning_rte' in issue for issue in result.issues)

    def test_enforce_raises(self):
        self.config['dataset']['num_classes'] = 12
        with pytest.raises(ConfigError):
            ExperimentGuard(self.config).ensure_valid()

    @pytest.mark.parametrize("section,key,value,fragment", [
        ('dataset', 'v_min', 2.0, 'v_min'),
        ('channel', 'crosstalk', [[1, 0], [0, 1]], 'crosstalk'),
        ('channel', 'ambient', [0.0], 'ambient'),
        ('channel', 'rise_alpha', 0, 'rise_alpha'),
        ('baselines', 'linf_pct', [5, 0], 'linf_pct'),
        ('model', 'checkpoint', '/nonexistent/model.flkm', 'checkpoint'),
    ])
    def test_consistency_issues(self, section, key, value, fragment):
        self.config[section][key] = value
        result = ExperimentGuard(self.config).ensure_valid(enforce=False)
        assert not result.passed
        assert any(fragment in issue for issue in result.issues)

    def test_debug_warning(self):
        self.config['logging']['level'] = 'DEBUG'
        result = ExperimentGuard(self.config).ensure_valid()
        assert result.passed
        assert result.warnings

    def test_to_dict_dedupes(self):
        self.config['dataset']['v_min'] = 5.0
        payload = ExperimentGuard(self.config).ensure_valid(enforce=False).to_dict()
        assert len(payload['issues']) == len(set(payload['issues']))


class TestExperimentConfig:
    """Typed view and attack-setting layering"""

    @pytest.fixture(autouse=True)
    def setup(self, config):
        self.raw = copy.deepcopy(config)
        self.settings = ExperimentConfig.from_dict(self.raw)

    def test_defaults_from_empty(self):
        settings = ExperimentConfig.from_dict({})
        assert settings.dataset.dims.shape == (16, 32, 32, 3)
        assert settings.sweep == [5.0, 10.0, 15.0, 20.0]

    def test_seed_propagates(self):
        settings = ExperimentConfig.from_dict(self.raw, seed=42)
        assert settings.seed == 42
        assert settings.dataset.seed == 42
        assert settings.train.seed == 42
        assert settings.attack_config("universal").seed == 42

    def test_explicit_dataset_seed_wins(self):
        self.raw['dataset']['seed'] = 9
        assert ExperimentConfig.from_dict(self.raw, seed=42).dataset.seed == 9

    def test_profile_layering(self):
        cfg = self.settings.attack_config("universal")
        assert cfg.iterations == self.raw['attack_profiles']['universal']['iterations']
        assert cfg.eval_every == self.raw['attack_profiles']['universal']['eval_every']
        assert cfg.margin.m == self.raw['attack']['margin']['m']
        assert cfg.weights.lam == self.raw['attack']['weights']['lambda']

    def test_nested_profile_merge(self):
        self.raw['attack_profiles']['universal']['margin'] = {'m': 0.2}
        cfg = ExperimentConfig.from_dict(self.raw).attack_config("universal")
        assert cfg.margin.m == 0.2
        assert cfg.margin.space.value == self.raw['attack']['margin']['space']

    def test_single_video_batch_forced(self):
        cfg = self.settings.attack_config("single_video", batch_size=4)
        assert cfg.mode is AttackMode.SINGLE_VIDEO
        assert cfg.batch_size == 1

    def test_linf_pct_to_zeta(self):
        cfg = self.settings.attack_config("universal", linf_pct=20)
        assert cfg.zeta == pytest.approx(0.4)
        with pytest.raises(ValidationError):
            self.settings.attack_config("universal", linf_pct=-1)

    def test_config_file_budget(self):
        self.raw['attack']['linf_pct'] = 10
        cfg = ExperimentConfig.from_dict(self.raw).attack_config("universal")
        assert cfg.zeta == pytest.approx(0.2)

    def test_scene_attack_settings(self):
        cfg = self.settings.scene_attack_config()
        assert cfg.mode is AttackMode.SINGLE_CLASS
        assert cfg.time_invariant is True
        assert cfg.select_on_margin is True
        assert cfg.patience is None
        assert cfg.margin.m == self.raw['ota']['scene_margin']
        assert cfg.iterations == self.raw['ota']['scene_iterations']
        assert cfg.weights.lam == self.raw['attack']['weights']['lambda']

    def test_overrides(self):
        cfg = self.settings.attack_config("single_class", target_class=2, time_invariant=None)
        assert cfg.target_class == 2
        assert cfg.time_invariant is False

    def test_with_seed(self):
        other = self.settings.with_seed(5)
        assert (other.seed, other.dataset.seed, other.train.seed) == (5, 5, 5)

    def test_to_dict_has_no_workers(self):
        payload = self.settings.to_dict()
        assert 'n_jobs' not in payload
        assert 'n_jobs' not in payload['training']
