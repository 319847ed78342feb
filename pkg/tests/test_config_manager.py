import json

import pytest

from src.config_manager import ConfigManager
from src.errors import ConfigError


def test_defaults_are_valid():
    manager = ConfigManager()
    assert manager.validate() == (True, None)
    assert manager.get("scatter_paths") == 5
    assert manager.get("n_coarse") == 64


@pytest.mark.parametrize("preset", sorted(ConfigManager.PRESETS))
def test_presets_are_valid(preset):
    manager = ConfigManager()
    assert manager.apply_preset(preset)
    assert manager.validate() == (True, None)


def test_unknown_preset():
    assert not ConfigManager().apply_preset("huge")


def test_load_merges_over_defaults(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"iterations": 10, "seed": 3}))
    manager = ConfigManager(str(path))
    assert manager.get("iterations") == 10
    assert manager.get("seed") == 3
    assert manager.get("lr_field") == ConfigManager.DEFAULT_CONFIG["lr_field"]


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "typo.json"
    path.write_text(json.dumps({"iteratons": 10}))
    with pytest.raises(ConfigError, match="iteratons"):
        ConfigManager(str(path))


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ConfigManager(str(path))


def test_missing_file():
    with pytest.raises(ConfigError):
        ConfigManager("/nonexistent/config.json")


def test_update_rejects_unknown_key():
    with pytest.raises(ConfigError, match="warp_speed"):
        ConfigManager().update({"warp_speed": 9})


@pytest.mark.parametrize("updates, message", [
    ({"scatter_paths": 4}, "odd"),
    ({"l_min": 0.6}, "l_min"),
    ({"n_virtual": 0}, "n_virtual"),
    ({"lr_pose": 0.0}, "lr_pose"),
    ({"lr_decay": 1.5}, "lr_decay"),
    ({"islm_mode": "everywhere"}, "islm_mode"),
    ({"near": 5.0}, "near"),
    ({"n_coarse": 2, "n_fine": 1, "scatter_paths": 5}, "scattering origins"),
])
def test_validation_failures(updates, message):
    manager = ConfigManager()
    manager.update(updates)
    is_valid, error = manager.validate()
    assert not is_valid
    assert message in error


def test_even_paths_allowed_without_scattering():
    manager = ConfigManager()
    manager.update({"scatter_paths": 4, "train_scattering": False, "render_scattering": False})
    assert manager.validate() == (True, None)


def test_few_samples_allowed_without_adjacent_origins():
    manager = ConfigManager()
    manager.update({"n_coarse": 2, "n_fine": 1, "scatter_paths": 5, "train_scattering": False,
                    "render_scattering": False})
    assert manager.validate() == (True, None)
    manager.update({"train_scattering": True, "islm_mode": "single-point"})
    assert manager.validate() == (True, None)


def test_save_and_load_roundtrip(tmp_path):
    manager = ConfigManager()
    manager.apply_preset("smoke")
    path = str(tmp_path / "out" / "config.json")
    assert manager.save(path)
    assert ConfigManager(path).get_all() == manager.get_all()


def test_save_without_a_path():
    assert not ConfigManager().save()


def test_merge_file_keeps_preset_values(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"iterations": 12}))
    manager = ConfigManager()
    manager.apply_preset("smoke")
    manager.merge_file(str(path))
    assert manager.get("iterations") == 12
    assert manager.get("image_width") == ConfigManager.PRESETS["smoke"]["image_width"]

    path.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError, match="JSON object"):
        manager.merge_file(str(path))
