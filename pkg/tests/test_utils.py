import logging

import pytest
import torch

from src.errors import DimensionMismatch
from src.utils import (
    PixelDraws, ZonedFormatter, derive_seed, load_mask, load_png, make_generator, save_png, setup_logging,
    to_uint8, uniform,
)
from src.utils import DTYPE


def test_derive_seed_is_stable():
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
    assert derive_seed(3, 1, 2) != derive_seed(3, 2, 1)
    assert derive_seed(3) != derive_seed(4)


def test_generators():
    assert make_generator(None) is None
    a = torch.rand(4, generator=make_generator(5, 1), dtype=DTYPE)
    b = torch.rand(4, generator=make_generator(5, 1), dtype=DTYPE)
    assert torch.equal(a, b)
    assert torch.equal(uniform((2, 3), None), torch.full((2, 3), 0.5, dtype=DTYPE))


def test_pixel_draws_depend_only_on_pixel_index():
    whole = PixelDraws.per_pixel(7, torch.arange(6), 5)
    tail = PixelDraws.per_pixel(7, torch.arange(4, 6), 5)
    assert torch.equal(whole.take((6, 5))[4:], tail.take((2, 5)))

    draws = PixelDraws.per_pixel(7, torch.arange(3), 5)
    first, second = uniform((3, 2), draws), uniform((3, 3), draws)
    assert torch.equal(torch.cat([first, second], dim=-1), draws.table)
    with pytest.raises(ValueError):
        draws.take((3, 1))
    with pytest.raises(DimensionMismatch):
        PixelDraws.per_pixel(7, torch.arange(3), 5).take((2, 1))


def test_uint8_mapping():
    values = torch.tensor([[[-0.5, 0.5, 1.7]]], dtype=DTYPE)
    assert to_uint8(values).tolist() == [[[0, 128, 255]]]


def test_png_roundtrip(tmp_path):
    levels = torch.arange(48, dtype=DTYPE).reshape(4, 4, 3) / 255.0
    path = str(tmp_path / "img" / "a.png")
    save_png(levels, path)
    assert torch.allclose(load_png(path), levels, atol=1e-12)


def test_mask_roundtrip(tmp_path):
    mask = torch.tensor([[True, False], [False, True]])
    path = str(tmp_path / "mask.png")
    save_png(mask, path)
    assert torch.equal(load_mask(path), mask)


def test_setup_logging_replaces_handlers(tmp_path):
    log_file = str(tmp_path / "logs" / "run.log")
    setup_logging(log_file, "DEBUG", "Europe/Berlin")
    logger = setup_logging(log_file, "INFO", "UTC")
    assert len(logger.handlers) == 2
    assert logger.level == logging.INFO
    assert all(isinstance(h.formatter, ZonedFormatter) for h in logger.handlers)
    logging.getLogger("IsNeRF.Test").info("hello")
    for handler in logger.handlers:
        handler.flush()
    with open(log_file) as f:
        assert "IsNeRF.Test - INFO - hello" in f.read()
