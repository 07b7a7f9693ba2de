import json

import pytest

from config.run_config import RunConfig
from utils.errors import ConfigError, IoFailureError


def test_defaults_are_fully_resolved():
    resolved = RunConfig().resolved()
    assert set(resolved) == {"metric", "loss", "solve", "io"}
    assert resolved["metric"]["weights"] == {"a": 1.1, "b": 4.0, "c": 3.3, "d": 8.3}
    assert resolved["loss"]["lambda1"] == 1000.0
    assert resolved["loss"]["lambda2"] == 8.0
    assert resolved["solve"]["levels"] == 3


def test_partial_file_keeps_other_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"loss": {"lambda1": 0.0}, "solve": {"seed": 4}}))
    cfg = RunConfig.from_json(path)
    assert cfg.loss.lambda1 == 0.0
    assert cfg.loss.lambda2 == 8.0
    assert cfg.solve.seed == 4
    assert cfg.solve_config().loss_weights.lambda1 == 0.0


def test_none_path_means_defaults():
    assert RunConfig.from_json(None) == RunConfig()


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"solve": {"levels": 0}}', '{"unknown": {}}',
                                  '{"metric": {"weights": {"a": 0, "b": 0, "c": 0, "d": 0}}}'])
def test_bad_documents_raise_config_error(tmp_path, text):
    path = tmp_path / "cfg.json"
    path.write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.from_json(path)


def test_missing_file_is_an_io_failure(tmp_path):
    with pytest.raises(IoFailureError):
        RunConfig.from_json(tmp_path / "absent.json")


def test_override_ignores_none_and_validates():
    cfg = RunConfig()
    assert cfg.override("solve", seed=None) is cfg
    assert cfg.override("solve", seed=7).solve.seed == 7
    with pytest.raises(ConfigError):
        cfg.override("solve", levels=-1)


def test_loss_and_solve_switches_reach_the_solver(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"loss": {"dice_paper_literal": True}, "solve": {"backtracking": False}}))
    cfg = RunConfig.from_json(path)
    assert cfg.resolved()["loss"]["dice_paper_literal"] is True
    assert cfg.solve_config().loss_weights.dice_paper_literal
    assert not cfg.solve_config().backtracking
