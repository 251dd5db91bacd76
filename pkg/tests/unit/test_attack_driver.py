"""
Unit tests for the attack loop, evaluation and campaigns
"""
import pytest
import numpy as np

from conftest import random_clip
from modules.attack_core import MarginSpec, RegWeights, percent_to_linf
from modules.attack_driver import (AttackConfig, AttackMode, AttackResult, FlickeringAttack,
                                   beta_sweep, class_campaign, evaluate, single_video_attacks,
                                   single_video_campaign, transfer_eval)
from modules.diffnet import init_params, zero_params
from modules.exceptions import OptimizationError, ValidationError
from modules.video_data import Dims, Perturbation


class TestAttackConfig:

    def test_batch_size_defaults(self):
        assert AttackConfig(mode="single_video").batch_size == 1
        assert AttackConfig(mode="universal").batch_size == 8

    @pytest.mark.parametrize("kwargs", [
        {'iterations': 0}, {'learning_rate': 0.0}, {'zeta': -0.1}, {'eval_every': 0},
        {'patience': 0}, {'mode': 'everything'},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AttackConfig(**kwargs)

    def test_dict_round_trip(self):
        cfg = AttackConfig(mode="single_class", target_class=2, zeta=0.2, n_jobs=3,
                           margin={'m': 0.1, 'space': 'logit'}, weights={'lambda': 2.0})
        payload = cfg.to_dict()
        assert 'n_jobs' not in payload
        restored = AttackConfig.from_dict(payload)
        assert restored.margin == MarginSpec(m=0.1, space="logit")
        assert restored.weights == RegWeights(lam=2.0)
        assert restored.to_dict() == payload


class TestFlickeringAttack:
    """Optimization loop on a small untrained model"""

    @pytest.fixture(autouse=True)
    def setup(self, model_a, tiny_dataset):
        self.params = model_a
        self.data = tiny_dataset
        self.attacker = FlickeringAttack(model_a)
        self.cfg = AttackConfig(mode="universal", iterations=12, learning_rate=0.05,
                                eval_every=4, batch_size=3, seed=5)

    def test_history_schedule(self):
        result = self.attacker.attack(self.data, self.cfg)
        assert [r['iteration'] for r in result.history] == [0, 4, 8, 12]
        assert result.history[0]['linf_pct'] == 0.0
        assert result.stopped_iteration == 12
        assert result.best['iteration'] == result.best_iteration

    def test_best_checkpoint_selection(self):
        result = self.attacker.attack(self.data, self.cfg)
        best_ratio = max(r['fooling_ratio'] for r in result.history)
        assert result.best['fooling_ratio'] == best_ratio
        ties = [r['thickness_pct'] for r in result.history if r['fooling_ratio'] == best_ratio]
        assert result.best['thickness_pct'] == min(ties)

    def test_linf_budget(self):
        zeta = 0.01
        cfg = AttackConfig(mode="universal", iterations=8, learning_rate=0.05, eval_every=4,
                           batch_size=3, seed=5, zeta=zeta)
        result = self.attacker.attack(self.data, cfg)
        assert result.delta.linf <= zeta

    def test_deterministic_across_workers(self):
        first = self.attacker.attack(self.data, self.cfg)
        cfg = AttackConfig(mode="universal", iterations=12, learning_rate=0.05, eval_every=4,
                           batch_size=3, seed=5, n_jobs=2)
        second = self.attacker.attack(self.data, cfg)
        assert first.delta == second.delta
        assert first.history == second.history

    def test_time_invariant_runs(self):
        cfg = AttackConfig(mode="universal", iterations=4, learning_rate=0.05, eval_every=2,
                           batch_size=3, seed=5, time_invariant=True)
        first = self.attacker.attack(self.data, cfg)
        second = self.attacker.attack(self.data, cfg)
        assert first.delta == second.delta

    def test_result_json(self, tmp_path):
        result = self.attacker.attack(self.data, self.cfg)
        path = result.to_json(tmp_path / "result.json", delta_file="delta.flkp")
        restored = AttackResult.from_json(path)
        assert restored.delta == result.delta
        assert restored.model_fingerprint == self.attacker.fingerprint

    def test_config_section_defaults(self, config):
        attacker = FlickeringAttack(self.params, config)
        assert attacker.config['iterations'] == config['attack']['iterations']

    def test_config_section_budget(self):
        section = {'iterations': 6, 'learning_rate': 0.5, 'eval_every': 3, 'batch_size': 3,
                   'linf_pct': 5}
        attacker = FlickeringAttack(self.params, {'attack': section})
        zeta = percent_to_linf(5, self.params.dims)
        assert attacker.default_config().zeta == pytest.approx(zeta)
        assert attacker.attack(self.data).delta.linf <= zeta + 1e-12
        assert 'linf_pct' in attacker.config

    def test_explicit_zeta_wins(self):
        attacker = FlickeringAttack(self.params, {'attack': {'linf_pct': 5, 'zeta': 0.01}})
        assert attacker.default_config().zeta == 0.01

    def test_mode_checks(self):
        with pytest.raises(ValidationError):
            self.attacker.attack(self.data[:2], AttackConfig(mode="single_video", iterations=1))
        with pytest.raises(ValidationError):
            self.attacker.attack(self.data, AttackConfig(mode="single_class", iterations=1))
        with pytest.raises(ValidationError):
            self.attacker.attack([c for c in self.data if c.label == 0],
                                 AttackConfig(mode="single_class", target_class=1, iterations=1))
        with pytest.raises(ValidationError):
            self.attacker.attack(self.data, AttackConfig(
                iterations=1, margin=MarginSpec(direction="targeted", target=5)))

    def test_non_finite_objective(self, mocker):
        mocker.patch('modules.attack_driver.objective', return_value=(float('nan'), np.zeros((6, 3))))
        with pytest.raises(OptimizationError) as info:
            self.attacker.attack(self.data, self.cfg)
        assert info.value.iteration == 1


class TestPatience:

    def test_stops_once_fooling_held(self, small_dims, rng):
        # constant model predicts class 0, so label-1 clips are fooled from the start
        params = zero_params("A", small_dims, 3)
        clips = [random_clip(small_dims, rng, label=1, clip_id=f"c{i}") for i in range(2)]
        cfg = AttackConfig(mode="universal", iterations=50, eval_every=1, patience=2, batch_size=2)
        result = FlickeringAttack(params).attack(clips, cfg)
        assert result.stopped_iteration == 1
        assert result.best_iteration == 0

    def test_margin_selection_ignores_bare_misclassification(self, small_dims, rng):
        params = zero_params("A", small_dims, 3)
        clips = [random_clip(small_dims, rng, label=1, clip_id=f"c{i}") for i in range(2)]
        cfg = AttackConfig(mode="universal", iterations=5, eval_every=1, patience=2, batch_size=2,
                           select_on_margin=True)
        result = FlickeringAttack(params).attack(clips, cfg)
        assert result.stopped_iteration == 5
        assert all(r['fooling_ratio'] == 1.0 for r in result.history)
        assert all(r['margin_ratio'] == 0.0 for r in result.history)


class TestEvaluation:

    @pytest.fixture(autouse=True)
    def setup(self, small_dims, rng):
        self.params = zero_params("A", small_dims, 3)
        self.clips = [random_clip(small_dims, rng, label=k, clip_id=f"c{i}")
                      for i, k in enumerate([0, 1, 1, 2])]
        self.delta = Perturbation(small_dims, np.full((small_dims.T, 3), 0.02))

    def test_per_class_breakdown(self):
        report = evaluate(self.params, self.clips, self.delta)
        assert report.fooling_ratio == pytest.approx(0.75)
        assert report.per_class == {0: 0.0, 1: 1.0, 2: 1.0}
        assert report.thickness_pct == pytest.approx(1.0)
        assert report.shift_std is None

    def test_sweep_all(self):
        report = evaluate(self.params, self.clips, self.delta, "sweep-all")
        assert report.fooling_ratio == pytest.approx(0.75)
        assert report.shift_std == pytest.approx(0.0)

    def test_random_needs_seed(self):
        with pytest.raises(ValidationError):
            evaluate(self.params, self.clips, self.delta, "random")

    def test_transfer_incompatible(self):
        other = zero_params("A", Dims(T=6, H=8, W=8, v_min=0.0, v_max=1.0), 3)
        with pytest.raises(ValidationError):
            transfer_eval(self.delta, other, self.clips)

    def test_transfer_across_variants(self, small_dims):
        model_b = zero_params("B", small_dims, 3)
        assert transfer_eval(self.delta, model_b, self.clips).fooling_ratio == pytest.approx(0.75)


class TestCampaigns:

    @pytest.fixture(autouse=True)
    def setup(self, model_a, tiny_dataset):
        self.params = model_a
        self.data = tiny_dataset
        self.cfg = AttackConfig(mode="single_video", iterations=4, learning_rate=0.05, eval_every=2, seed=1)

    def test_single_video_workers_invariant(self):
        serial = single_video_attacks(self.params, self.data[:3], self.cfg, n_jobs=1)
        parallel = single_video_attacks(self.params, self.data[:3], self.cfg, n_jobs=2)
        assert [r.delta for r in serial] == [r.delta for r in parallel]

    def test_single_video_summary(self):
        summary = single_video_campaign(self.params, self.data[:3], self.cfg)
        assert summary.count == 3
        assert [item['clip_id'] for item in summary.items] == [c.clip_id for c in self.data[:3]]
        assert 0.0 <= summary.fooling_ratio <= 1.0

    def test_class_campaign(self, small_dims, rng):
        params = zero_params("A", small_dims, 3)
        train = [random_clip(small_dims, rng, label=k, clip_id=f"t{k}") for k in range(3)]
        held_out = [random_clip(small_dims, rng, label=k, clip_id=f"e{k}") for k in (0, 1)]
        cfg = AttackConfig(iterations=2, eval_every=1)
        summary = class_campaign(params, train, held_out, cfg)
        assert [item['label'] for item in summary.items] == [0, 1]
        assert [item['fooling_ratio'] for item in summary.items] == [0.0, 1.0]
        assert summary.fooling_ratio == pytest.approx(0.5)

    def test_beta_sweep(self):
        rows = beta_sweep(self.params, self.data[0], self.cfg, beta1_values=[1.0, 0.0])
        assert [(r['beta1'], r['beta2']) for r in rows] == [(1.0, 0.0), (0.0, 1.0)]
