"""
Configuration Manager for IsNeRF
Handles loading, saving, and validating run configuration
"""

import json
import os
from typing import Dict, Any, Optional
import logging
from copy import deepcopy

from src.errors import ConfigError


class ConfigManager:
    """Manages run configuration with presets and validation"""

    DEFAULT_CONFIG = {
        # General Settings
        "seed": 0,
        "output_dir": "runs/latest",
        "log_file": "",
        "log_level": "INFO",
        "timezone": "UTC",

        # Dataset Forge
        "image_width": 64,
        "image_height": 64,
        "fov_deg": 40.0,
        "views": 20,
        "n_virtual": 8,
        "blur_endpoint": "exclusive",  # exclusive: t/n, inclusive: t/(n-1)
        "ring_radius": 2.5,
        "ring_height": 0.8,
        "ring_target": [0.0, 0.0, 0.0],
        "blur_arc_deg": 4.0,
        "blur_shake": 0.03,
        "near": 1.0,
        "far": 4.5,
        "scene_bounds_min": [-1.0, -1.0, -1.0],
        "scene_bounds_max": [1.0, 1.0, 1.0],
        "background": [0.2, 0.2, 0.2],

        # Radiance Field
        "field_trunk_depth": 4,
        "field_trunk_width": 64,
        "field_color_width": 32,
        "encoding_order_x": 6,
        "encoding_order_d": 4,

        # Sampling
        "n_coarse": 64,
        "n_fine": 64,
        "chunk_size": 4096,

        # In-Scattering Lightpath Model
        "islm_depth": 3,
        "islm_width": 64,
        "islm_mode": "adjacent",  # adjacent: 1 ray at each of K points, single-point: K rays at 1 point
        "scatter_paths": 5,
        "scatter_samples": 8,
        "l_min": 0.01,
        "l_max": 0.5,
        "weighted_scatter": False,
        "train_scattering": True,
        "render_scattering": True,

        # Optimization
        "iterations": 20000,
        "batch_rays": 1024,
        "lr_field": 5e-4,
        "lr_islm": 5e-4,
        "lr_pose": 1e-3,
        "lr_decay": 0.1,  # learning rates end at lr * lr_decay
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "loss_reduction": "sum",
        "scatter_warmup_iters": 1000,
        "pose_noise_rot": 0.01,  # radians
        "pose_noise_trans": 0.01,

        # Monitoring
        "holdout_interval": 500,
        "holdout_views": 4,
        "log_interval": 100,
        "checkpoint_interval": 0
    }

    PRESETS = {
        "desk": {},
        "smoke": {
            "image_width": 16,
            "image_height": 16,
            "views": 4,
            "n_virtual": 3,
            "field_trunk_depth": 2,
            "field_trunk_width": 32,
            "field_color_width": 16,
            "encoding_order_x": 4,
            "encoding_order_d": 2,
            "n_coarse": 16,
            "n_fine": 16,
            "chunk_size": 1024,
            "islm_depth": 2,
            "islm_width": 32,
            "scatter_samples": 4,
            "iterations": 40,
            "batch_rays": 128,
            "scatter_warmup_iters": 10,
            "holdout_interval": 20,
            "holdout_views": 2,
            "log_interval": 10
        },
        "gradcheck": {
            "image_width": 8,
            "image_height": 8,
            "views": 2,
            "n_virtual": 2,
            "field_trunk_depth": 2,
            "field_trunk_width": 16,
            "field_color_width": 8,
            "encoding_order_x": 3,
            "encoding_order_d": 2,
            "n_coarse": 8,
            "n_fine": 8,
            "islm_depth": 2,
            "islm_width": 16,
            "scatter_paths": 3,
            "scatter_samples": 3,
            "batch_rays": 16,
            "scatter_warmup_iters": 0,
            "iterations": 1
        }
    }

    CHOICES = {
        "islm_mode": ("adjacent", "single-point"),
        "blur_endpoint": ("exclusive", "inclusive"),
        "loss_reduction": ("sum", "mean"),
        "log_level": ("DEBUG", "INFO", "WARNING", "ERROR"),
    }

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize configuration manager

        Args:
            config_path: Optional JSON file merged over the defaults
        """
        self.config_path = config_path
        self.config = deepcopy(self.DEFAULT_CONFIG)
        self.logger = logging.getLogger("IsNeRF.Config")

        if config_path:
            self.load()
        else:
            self.logger.debug("No config file given, using defaults")

    def _check_keys(self, values: Dict[str, Any], source: str):
        unknown = sorted(set(values) - set(self.DEFAULT_CONFIG))
        if unknown:
            raise ConfigError(f"Unknown config keys in {source}: {', '.join(unknown)}")

    def _read(self, path: str) -> Dict[str, Any]:
        """Keys set in a JSON config file, checked against the known keys"""
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, 'r') as f:
                values = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed config {path}: {e}")

        if not isinstance(values, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        self._check_keys(values, path)
        return values

    def load(self) -> Dict[str, Any]:
        """
        Load configuration from file

        Returns:
            Configuration dictionary

        Raises:
            ConfigError: missing file, malformed JSON or unknown keys
        """
        loaded_config = self._read(self.config_path)

        # Merge with defaults
        self.config = deepcopy(self.DEFAULT_CONFIG)
        self.config.update(loaded_config)

        self.logger.info(f"Loaded config from {self.config_path}")
        return self.config

    def merge_file(self, path: str) -> Dict[str, Any]:
        """Merge a config file over the current values, keeping keys it does not set"""
        values = self._read(path)
        self.config.update(values)
        self.logger.info(f"Merged {len(values)} values from {path}")
        return self.config

    def save(self, path: Optional[str] = None) -> bool:
        """
        Save configuration to file

        Args:
            path: Target file (defaults to the loaded path)

        Returns:
            True if successful
        """
        target = path or self.config_path
        if not target:
            self.logger.error("No path to save the config to")
            return False
        try:
            directory = os.path.dirname(target)
            if directory:
                os.makedirs(directory, exist_ok=True)

            with open(target, 'w') as f:
                json.dump(self.config, f, indent=2, sort_keys=True)

            self.logger.info(f"Saved config to {target}")
            return True

        except OSError as e:
            self.logger.error(f"Error saving config: {e}")
            return False

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value"""
        return self.config.get(key, default)

    def update(self, updates: Dict[str, Any]) -> bool:
        """
        Update multiple configuration values

        Args:
            updates: Dictionary of key-value pairs to update

        Returns:
            True if successful
        """
        self._check_keys(updates, "update()")
        self.config.update(updates)
        self.logger.debug(f"Updated {len(updates)} config values")
        return True

    def apply_preset(self, preset_name: str) -> bool:
        """
        Apply a configuration preset

        Args:
            preset_name: Name of preset (desk, smoke, gradcheck)

        Returns:
            True if successful
        """
        if preset_name not in self.PRESETS:
            self.logger.error(f"Unknown preset: {preset_name}")
            return False

        self.config.update(self.PRESETS[preset_name])
        self.logger.info(f"Applied {preset_name} preset")
        return True

    def validate(self) -> tuple[bool, Optional[str]]:
        """
        Validate current configuration

        Returns:
            Tuple of (is_valid, error_message)
        """
        cfg = self.config

        for key, allowed in self.CHOICES.items():
            if cfg[key] not in allowed:
                return False, f"{key} must be one of {', '.join(allowed)}"

        positive_counts = [
            "image_width", "image_height", "views", "n_virtual", "n_fine", "chunk_size",
            "scatter_samples", "batch_rays", "field_trunk_depth", "field_trunk_width",
            "field_color_width", "islm_depth", "islm_width", "holdout_interval", "log_interval"
        ]
        for key in positive_counts:
            if int(cfg[key]) < 1:
                return False, f"{key} must be at least 1"

        if cfg["n_coarse"] < 2:
            return False, "n_coarse must be at least 2"

        if cfg["iterations"] < 0 or cfg["checkpoint_interval"] < 0 or cfg["scatter_warmup_iters"] < 0:
            return False, "iterations, checkpoint_interval and scatter_warmup_iters must be non-negative"

        scattering = cfg["train_scattering"] or cfg["render_scattering"]
        if cfg["scatter_paths"] < 0:
            return False, "scatter_paths must be non-negative"
        if scattering and cfg["scatter_paths"] > 0 and cfg["scatter_paths"] % 2 == 0:
            return False, "scatter_paths must be odd when scattering is enabled"
        samples = cfg["n_coarse"] + cfg["n_fine"]
        if scattering and cfg["islm_mode"] == "adjacent" and samples < cfg["scatter_paths"]:
            return False, f"n_coarse + n_fine = {samples} cannot host {cfg['scatter_paths']} scattering origins"

        if not 0 < cfg["l_min"] < cfg["l_max"]:
            return False, "Need 0 < l_min < l_max"

        if not 0 <= cfg["near"] < cfg["far"]:
            return False, "Need 0 <= near < far"

        for key in ("lr_field", "lr_islm", "lr_pose", "adam_eps", "fov_deg"):
            if cfg[key] <= 0:
                return False, f"{key} must be positive"

        if not 0 < cfg["lr_decay"] <= 1:
            return False, "lr_decay must be in (0, 1]"

        if not (0 <= cfg["adam_beta1"] < 1 and 0 <= cfg["adam_beta2"] < 1):
            return False, "Adam betas must be in [0, 1)"

        if cfg["pose_noise_rot"] < 0 or cfg["pose_noise_trans"] < 0:
            return False, "Pose noise must be non-negative"

        if any(lo >= hi for lo, hi in zip(cfg["scene_bounds_min"], cfg["scene_bounds_max"])):
            return False, "scene_bounds_min must lie below scene_bounds_max on every axis"

        return True, None

    def get_all(self) -> Dict[str, Any]:
        """Get entire configuration dictionary"""
        return deepcopy(self.config)
