import pytest
import torch

from src.blur_synthesis import (
    INCLUSIVE, ExposureModel, exposure_fractions, render_blurred, render_blurred_pixels, synthesize_blur,
    virtual_poses,
)
from src.errors import DimensionMismatch
from src.se3_geometry import Pose, Twist, se3_exp
from src.utils import DTYPE, as_tensor, derive_seed, make_generator
from src.volume_renderer import FieldPair, render_image


def translation(x, y=0.0, z=-2.5):
    return Pose(torch.eye(3, dtype=DTYPE), as_tensor([x, y, z]))


class TestVirtualPoses:
    def test_single_frame_is_start(self):
        start = translation(0.0)
        poses = virtual_poses(ExposureModel(start, translation(1.0), 1))
        assert len(poses) == 1 and poses[0] is start

    def test_two_frames_translate_linearly(self):
        poses = virtual_poses(ExposureModel(Pose.identity(), translation(1.0, 0.0, 0.0), 2))
        assert torch.allclose(poses[0].translation, as_tensor([0.0, 0.0, 0.0]))
        assert torch.allclose(poses[1].translation, as_tensor([0.5, 0.0, 0.0]), atol=1e-12)

    def test_static_exposure(self):
        pose = se3_exp(Twist.from_vector([0.1, 0.2, 0.0, 0, 0, -2]))
        poses = virtual_poses(ExposureModel(pose, pose, 5))
        assert all(p is pose for p in poses)

    def test_fractions(self):
        assert exposure_fractions(4) == [0.0, 0.25, 0.5, 0.75]
        assert exposure_fractions(5, INCLUSIVE) == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert exposure_fractions(1, INCLUSIVE) == [0.0]

    def test_inclusive_ends_at_end_pose(self):
        end = translation(1.0)
        poses = virtual_poses(ExposureModel(translation(0.0), end, 3), INCLUSIVE)
        assert torch.allclose(poses[-1].translation, end.translation, atol=1e-12)

    def test_needs_one_frame(self):
        with pytest.raises(ValueError):
            ExposureModel(Pose.identity(), Pose.identity(), 0)

    def test_unknown_endpoint(self):
        with pytest.raises(ValueError):
            exposure_fractions(3, "both")


class TestSynthesizeBlur:
    def test_identical_images(self):
        image = torch.rand(4, 5, 3, generator=make_generator(1), dtype=DTYPE)
        assert torch.equal(synthesize_blur([image, image.clone(), image.clone()]), image)

    def test_black_and_white(self):
        black = torch.zeros(2, 2, 3, dtype=DTYPE)
        assert torch.equal(synthesize_blur([black, torch.ones_like(black)]), torch.full_like(black, 0.5))

    def test_matches_scalar_mean(self):
        generator = make_generator(2)
        images = [torch.rand(3, 4, 3, generator=generator, dtype=DTYPE) for _ in range(3)]
        blurred = synthesize_blur(images)
        for idx in [(0, 0, 0), (2, 3, 1), (1, 2, 2)]:
            scalar = sum(float(img[idx]) for img in images) / 3.0
            assert abs(float(blurred[idx]) - scalar) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            synthesize_blur([torch.zeros(2, 2, 3, dtype=DTYPE), torch.zeros(2, 3, 3, dtype=DTYPE)])

    def test_empty_stack(self):
        with pytest.raises(ValueError):
            synthesize_blur([])


class TestRenderBlurred:
    def test_static_camera_equals_sharp_render(self, tiny_field, tiny_islm, tiny_intrinsics, small_cfg):
        pose = translation(0.1)
        fields = FieldPair.shared(tiny_field)
        blurred = render_blurred(ExposureModel(pose, pose, 4), tiny_intrinsics, fields, tiny_islm, small_cfg)
        sharp = render_image(pose, tiny_intrinsics, fields, tiny_islm, small_cfg)
        assert torch.equal(blurred, sharp)

    def test_mean_of_virtual_renders(self, centered_sphere, tiny_intrinsics, small_cfg):
        cfg = small_cfg.with_scattering(False)
        fields = FieldPair.shared(centered_sphere)
        em = ExposureModel(translation(-0.2), translation(0.2), 3)
        blurred = render_blurred(em, tiny_intrinsics, fields, None, cfg, seed=4)
        renders = [render_image(p, tiny_intrinsics, fields, None, cfg, derive_seed(4, t))
                   for t, p in enumerate(virtual_poses(em))]
        expected = sum(renders) / 3.0
        assert torch.allclose(blurred, expected, atol=1e-12)

    def test_pixel_batch_matches_image(self, centered_sphere, tiny_intrinsics, small_cfg):
        cfg = small_cfg.with_scattering(False)
        fields = FieldPair.shared(centered_sphere)
        em = ExposureModel(translation(-0.2), translation(0.2), 3)
        image = render_blurred(em, tiny_intrinsics, fields, None, cfg)
        index = torch.tensor([0, 9, 23, 47])
        pixels = render_blurred_pixels(virtual_poses(em), tiny_intrinsics, index, fields, None, cfg)
        assert torch.allclose(pixels.color, image.reshape(-1, 3)[index], atol=1e-12)
        assert len(pixels.plans) == 3

    def test_gradients_reach_the_trajectory(self, tiny_field, tiny_islm, tiny_intrinsics, small_cfg):
        xi = torch.zeros(6, dtype=DTYPE, requires_grad=True)
        start = translation(0.0)
        moved = se3_exp(Twist.from_vector(xi + as_tensor([0.0, 0.05, 0.0, 0.1, 0.0, 0.0])))
        end = Pose(moved.rotation, moved.translation + start.translation)
        pixels = render_blurred_pixels(virtual_poses(ExposureModel(start, end, 2)), tiny_intrinsics,
                                       torch.arange(6), FieldPair.shared(tiny_field), tiny_islm, small_cfg)
        pixels.color.sum().backward()
        assert torch.isfinite(xi.grad).all()
        assert xi.grad.abs().sum() > 0
