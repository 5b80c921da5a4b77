"""Run configuration loading and validation."""

import json

import pytest

from shapespace.errors import ConfigValidationError
from shapespace.run_config import load_run_config


def test_defaults():
    cfg = load_run_config()
    assert cfg.fit.tau == 10.0
    assert cfg.train.models == ["global", "local"]
    assert cfg.evaluate.occlusion_preset == "left_eye_hand"
    assert cfg.jobs == 1


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"fit": {"tau": 5.0, "model": "local"}, "hierarchy": {"levels": 3}}))
    cfg = load_run_config(path, {"fit.c": 2.0, "fit.tau": None, "paths.run_name": "demo"})
    assert cfg.fit.tau == 5.0
    assert cfg.fit.c == 2.0
    assert cfg.fit.model == "local"
    assert cfg.hierarchy.levels == 3
    assert cfg.paths.run_name == "demo"
    resolved = cfg.resolved()
    assert resolved["fit"]["c"] == 2.0
    assert load_run_config(None, {"fit.c": 2.0, "fit.tau": 5.0, "fit.model": "local",
                                  "hierarchy.levels": 3, "paths.run_name": "demo"}).resolved() == resolved


def test_unknown_keys_name_the_key(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"fit": {"bogus": 1}}))
    with pytest.raises(ConfigValidationError, match="fit.bogus"):
        load_run_config(path)


@pytest.mark.parametrize("override, key", [
    ({"fit.tau": 0.0}, "fit.tau"),
    ({"fit.samples_per_parameter": 1}, "fit.samples_per_parameter"),
    ({"fit.max_level_sweep": [0, -1]}, "fit.max_level_sweep"),
    ({"hierarchy.base_rows": 1}, "hierarchy.base_rows"),
    ({"evaluate.occlusion_preset": "glasses"}, "evaluate.occlusion_preset"),
    ({"jobs": 0}, "jobs"),
])
def test_invalid_values(override, key):
    with pytest.raises(ConfigValidationError, match=key.replace(".", r"\.")):
        load_run_config(None, override)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / "missing.json")
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigValidationError):
        load_run_config(path)
    path.write_text(json.dumps({"fit": 3}))
    with pytest.raises(ConfigValidationError):
        load_run_config(path, {"fit.tau": 1.0})
