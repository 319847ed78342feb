"""Shared fixtures for the IsNeRF test suite"""

import json
import math
import os

import pytest
import torch

from src.config_manager import ConfigManager
from src.islm import IslmParams, IslmShape
from src.radiance_field import ConstantBox, EmissiveSphere, FieldParams, FieldShape, unflatten
from src.sampler import Intrinsics, Ray
from src.scene_forge import ForgeSettings, TrajectorySpec, default_desk_scene, generate_dataset
from src.utils import DTYPE, make_generator
from src.volume_renderer import RenderConfig

GOLDENS_FILE = os.path.join(os.path.dirname(__file__), "goldens.json")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return make_generator(1234)


@pytest.fixture
def tiny_field_shape():
    return FieldShape(trunk_depth=2, trunk_width=16, color_width=8, order_x=3, order_d=2)


@pytest.fixture
def tiny_islm_shape():
    return IslmShape(depth=2, width=16, order_x=3, order_d=2)


@pytest.fixture
def tiny_field(tiny_field_shape):
    return FieldParams.initialize(tiny_field_shape, make_generator(7, 0))


@pytest.fixture
def tiny_islm(tiny_islm_shape):
    return IslmParams.initialize(tiny_islm_shape, make_generator(7, 2))


@pytest.fixture
def small_cfg():
    return RenderConfig(n_coarse=16, n_fine=16, scatter_paths=3, scatter_samples=4, near=1.0, far=4.0)


@pytest.fixture
def tiny_intrinsics():
    return Intrinsics.from_fov(8, 6, 50.0)


@pytest.fixture
def unit_box():
    """Unit-depth box along z, 1.5 density"""
    return ConstantBox(1.5, (0.2, 0.6, 0.9), (-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))


@pytest.fixture
def centered_sphere():
    return EmissiveSphere((0.0, 0.0, 0.0), 0.4, 5.0, (1.0, 0.5, 0.25))


def axis_rays(count=1, origin_z=-2.0, near=1.0, far=3.0):
    """Rays from (0, 0, origin_z) straight along +z"""
    origins = torch.zeros(count, 3, dtype=DTYPE)
    origins[:, 2] = origin_z
    directions = torch.zeros(count, 3, dtype=DTYPE)
    directions[:, 2] = 1.0
    return Ray(origins, directions, torch.full((count,), near, dtype=DTYPE),
               torch.full((count,), far, dtype=DTYPE))


def random_rays(count, generator, near=1.0, far=4.0):
    """Rays from a shell of radius 2.5 aimed roughly at the origin"""
    directions = torch.randn(count, 3, generator=generator, dtype=DTYPE)
    directions = directions / torch.linalg.norm(directions, dim=-1, keepdim=True)
    jitter = 0.3 * torch.randn(count, 3, generator=generator, dtype=DTYPE)
    origins = -2.5 * directions + jitter
    to_center = -origins / torch.linalg.norm(origins, dim=-1, keepdim=True)
    return Ray(origins, to_center, torch.full((count,), near, dtype=DTYPE),
               torch.full((count,), far, dtype=DTYPE))


@pytest.fixture
def smoke_config():
    manager = ConfigManager()
    manager.apply_preset("smoke")
    return manager.get_all()


@pytest.fixture
def gradcheck_config():
    manager = ConfigManager()
    manager.apply_preset("gradcheck")
    return manager.get_all()


def forge(out_dir, config):
    generate_dataset(default_desk_scene(), TrajectorySpec.from_config(config),
                     ForgeSettings.from_config(config), str(out_dir))
    return str(out_dir)


@pytest.fixture
def smoke_dataset(tmp_path, smoke_config):
    return forge(tmp_path / "smoke_data", smoke_config)


@pytest.fixture
def gradcheck_dataset(tmp_path, gradcheck_config):
    return forge(tmp_path / "gradcheck_data", gradcheck_config)


@pytest.fixture(scope="session")
def golden():
    """
    Pinned values from tests/goldens.json; a missing file or key fails the test

    Every pin is the closed-form value for a hand-set field.
    """
    if not os.path.exists(GOLDENS_FILE):
        pytest.fail(f"Pinned values file is missing: {GOLDENS_FILE}")
    with open(GOLDENS_FILE, 'r') as f:
        values = json.load(f)

    def check(key, value, rel=1e-9):
        if key not in values:
            pytest.fail(f"No pinned value for {key!r} in {GOLDENS_FILE}")
        value = [float(v) for v in value] if isinstance(value, (list, tuple)) else float(value)
        expected = values[key]
        if isinstance(value, list):
            assert len(value) == len(expected), key
            for got, want in zip(value, expected):
                assert math.isclose(got, want, rel_tol=rel, abs_tol=1e-12), key
        else:
            assert math.isclose(value, expected, rel_tol=rel, abs_tol=1e-12), key

    return check


@pytest.fixture
def constant_field(tiny_field_shape):
    """Zero weights; sigma = softplus(1) and color = (0.5, 0.75, 0.25) everywhere"""
    params = FieldParams.zeros(tiny_field_shape)
    with torch.no_grad():
        layout = unflatten(params.vector, tiny_field_shape.layout())
        layout["sigma.bias"].fill_(1.0)
        layout["color_out.bias"].copy_(torch.tensor([0.0, math.log(3.0), -math.log(3.0)], dtype=DTYPE))
    return params
