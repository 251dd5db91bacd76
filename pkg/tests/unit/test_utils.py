"""
Unit tests for shared helpers
"""
import logging

import pytest
import numpy as np

from modules.utils import (load_config, make_rng, parallel_map, parse_float_list, read_json,
                           sanitize_filename, setup_logging, write_json, RNG_ATTACK, RNG_DATASET)


def _square(x):
    return x * x


class TestSeeding:

    def test_same_path_same_stream(self):
        a = make_rng(7, RNG_DATASET, 2, 3).integers(0, 2 ** 32, size=5)
        b = make_rng(7, RNG_DATASET, 2, 3).integers(0, 2 ** 32, size=5)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("other", [(8, RNG_DATASET, 2, 3), (7, RNG_ATTACK, 2, 3), (7, RNG_DATASET, 3, 2)])
    def test_paths_are_independent(self, other):
        a = make_rng(7, RNG_DATASET, 2, 3).integers(0, 2 ** 32, size=5)
        b = make_rng(*other).integers(0, 2 ** 32, size=5)
        assert not np.array_equal(a, b)

    def test_large_seed(self):
        make_rng(2 ** 63 + 5, 1).random()


class TestHelpers:

    def test_parse_float_list(self):
        assert parse_float_list("5,10, 12.5,") == [5.0, 10.0, 12.5]
        assert parse_float_list([1, 2]) == [1.0, 2.0]

    def test_sanitize_filename(self):
        assert sanitize_filename('eval a/b:c') == 'eval_abc'

    def test_write_json_is_stable(self, tmp_path):
        path = write_json(tmp_path / "nested" / "out.json", {'b': 1, 'a': [1.5, None]})
        assert path.read_text() == '{\n  "a": [\n    1.5,\n    null\n  ],\n  "b": 1\n}\n'
        assert read_json(path) == {'a': [1.5, None], 'b': 1}

    def test_parallel_map_keeps_order(self):
        assert parallel_map(_square, range(6), n_jobs=2) == [0, 1, 4, 9, 16, 25]
        assert parallel_map(_square, [], n_jobs=2) == []


class TestConfigAndLogging:

    def test_load_missing_config(self, tmp_path):
        assert load_config(str(tmp_path / "absent.yaml")) == {}

    def test_load_env_override(self, tmp_path, monkeypatch):
        path = tmp_path / "alt.yaml"
        path.write_text("runtime:\n  seed: 4\n")
        monkeypatch.setenv('FLICKER_LAB_CONFIG', str(path))
        assert load_config() == {'runtime': {'seed': 4}}

    def test_project_config_loads(self, config):
        assert config['dataset']['T'] == 16
        assert config['attack']['margin']['m'] == 0.05

    def test_setup_logging_levels(self, tmp_path, monkeypatch):
        monkeypatch.delenv('FLICKER_LAB_LOG_LEVEL', raising=False)
        log_file = tmp_path / "logs" / "run.log"
        setup_logging({'logging': {'level': 'WARNING', 'log_file': str(log_file)}})
        assert logging.getLogger().level == logging.WARNING
        assert log_file.parent.exists()
        setup_logging({'logging': {'level': 'WARNING'}}, level='debug')
        assert logging.getLogger().level == logging.DEBUG
