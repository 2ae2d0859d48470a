import json

import pytest

from app.core.config_manager import ConfigManager, load_document
from app.core.exceptions import ConfigError, MissingReference
from app.core.schemas import validate
from app.utils.utils import apply_overrides, parse_overrides
from tests.conftest import REPO_CONFIGS


def test_bundled_configs_all_load():
    manager = ConfigManager(config_dir=REPO_CONFIGS)
    assert set(manager.names("machines")) == {"g2-ieee9-like", "g1-ne68-like"}
    assert {"clean", "gaussian", "gaussian_biased", "laplace", "cauchy"} <= set(manager.names("profiles"))
    assert set(manager.names("experiments")) >= {"ieee9-gaussian", "ne68-gaussian", "ieee9-sweep"}
    for name in manager.names("scenarios"):
        scenario = manager.scenario(name)
        manager.machine(scenario.params_ref)
        manager.profile(scenario.noise_profile_ref)


def test_machine_and_profile_resolution(config_dir):
    manager = ConfigManager(config_dir=config_dir)
    params = manager.machine("g2-ieee9-like")
    assert params.T_J == pytest.approx(12.8)
    profile = manager.profile("gaussian", seed=42)
    assert profile.seed == 42
    assert profile.channels["omega"].family == "gaussian"


def test_unknown_reference(config_dir):
    manager = ConfigManager(config_dir=config_dir)
    with pytest.raises(MissingReference) as info:
        manager.scenario("nowhere")
    assert info.value.ref == "nowhere"
    assert info.value.exit_code == 2


def test_invalid_file_is_skipped(config_dir):
    with open(f"{config_dir}/machines/broken.json", "w", encoding="utf-8") as f:
        json.dump({"name": "broken", "T_J": -1.0}, f)
    manager = ConfigManager(config_dir=config_dir)
    assert "broken" not in manager.names("machines")


def test_schema_error_names_the_path(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "x", "scenario_ref": "s", "seeds": [1], "huber": {"c": -2}}), encoding="utf-8")
    with pytest.raises(ConfigError, match="huber/c"):
        load_document(str(path), "experiments")


def test_unknown_kind():
    with pytest.raises(ConfigError):
        validate("plants", {})


def test_experiment_overrides_are_revalidated(config_dir):
    manager = ConfigManager(config_dir=config_dir)
    document = manager.experiment("short-gaussian", [("huber.c", 1.8), ("seeds", [9])])
    assert document["huber"]["c"] == 1.8 and document["seeds"] == [9]
    assert manager.experiment("short-gaussian")["huber"]["c"] == 1.5
    with pytest.raises(ConfigError):
        manager.experiment("short-gaussian", [("filters", ["ukf"])])
    with pytest.raises(ConfigError):
        manager.experiment("short-gaussian", [("huber.c.x", 1)])


def test_experiment_by_path(config_dir):
    manager = ConfigManager(config_dir=config_dir)
    document = manager.experiment(f"{config_dir}/experiments/short-gaussian.json")
    assert document["name"] == "short-gaussian"


def test_parse_overrides_forms():
    assert parse_overrides(["--huber.c", "1.8", "--timing=true", "--out", "runs"]) == [
        ("huber.c", 1.8), ("timing", True), ("out", "runs")]
    with pytest.raises(ValueError):
        parse_overrides(["huber.c", "1.8"])
    with pytest.raises(ValueError):
        parse_overrides(["--huber.c"])


def test_apply_overrides_copies():
    config = {"huber": {"c": 1.5}}
    result = apply_overrides(config, [("huber.c", 2.0), ("metrics.warmup", 10)])
    assert result == {"huber": {"c": 2.0}, "metrics": {"warmup": 10}}
    assert config == {"huber": {"c": 1.5}}
