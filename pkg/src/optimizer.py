"""
Joint optimization for IsNeRF
Photometric loss, reverse-mode gradients for both fields, the ISLM and the
exposure pose twists, adaptive-moment updates and the training loop
"""

import logging
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch.optim.lr_scheduler import LambdaLR

from src.blur_synthesis import EXCLUSIVE, ExposureModel, render_blurred_pixels, virtual_poses
from src.dataset import BlurDataset, save_checkpoint
from src.errors import NonFiniteGradient, ShapeMismatch
from src.image_metrics import psnr
from src.islm import IslmParams, IslmShape
from src.radiance_field import FieldParams, FieldShape
from src.sampler import Intrinsics
from src.se3_geometry import Twist, compose, se3_exp
from src.performance_tracker import PerformanceTracker
from src.utils import DTYPE, as_tensor, derive_seed, make_generator
from src.volume_renderer import FieldPair, RenderConfig, SamplePlan, render_image

logger = logging.getLogger("IsNeRF.Trainer")

GROUPS = ("field_coarse", "field_fine", "islm", "twists")
SUM = "sum"
MEAN = "mean"


# ---------------------------------------------------------------------------
# Loss

def photometric_loss(pred: torch.Tensor, gt: torch.Tensor, reduction: str = SUM) -> torch.Tensor:
    """
    Squared photometric error between predicted and observed pixel batches

    Args:
        pred: [B, 3] predicted blurred colors
        gt: [B, 3] observed blurred colors
        reduction: "sum" over pixels and channels, or "mean"

    Returns:
        Scalar loss tensor
    """
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"Prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    squared = (pred - gt) ** 2
    if reduction == SUM:
        return squared.sum()
    if reduction == MEAN:
        return squared.mean()
    raise ValueError(f"Unknown loss reduction: {reduction}")


# ---------------------------------------------------------------------------
# State

@dataclass
class OptimizerHyper:
    """Adam settings with per-group learning rates and exponential decay over the run"""
    lr_field: float = 5e-4
    lr_islm: float = 5e-4
    lr_pose: float = 1e-3
    lr_decay: float = 0.1
    total_steps: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_config(cls, config: Dict) -> "OptimizerHyper":
        return cls(
            lr_field=config.get("lr_field", 5e-4),
            lr_islm=config.get("lr_islm", 5e-4),
            lr_pose=config.get("lr_pose", 1e-3),
            lr_decay=config.get("lr_decay", 0.1),
            total_steps=config.get("iterations", 20000),
            beta1=config.get("adam_beta1", 0.9),
            beta2=config.get("adam_beta2", 0.999),
            eps=config.get("adam_eps", 1e-8),
        )

    def decay_factor(self, step: int) -> float:
        return self.lr_decay ** (step / max(self.total_steps, 1))


@dataclass
class BlurPipeline:
    """Everything the forward pass needs besides the trainables"""
    intrinsics: Intrinsics
    render: RenderConfig
    endpoint: str = EXCLUSIVE
    reduction: str = SUM


@dataclass
class TrainBatch:
    """B pixels drawn from the blurred inputs"""
    image_index: torch.Tensor
    pixel_index: torch.Tensor
    target: torch.Tensor

    def __post_init__(self):
        count = self.image_index.shape[0]
        if self.pixel_index.shape != (count,) or tuple(self.target.shape) != (count, 3):
            raise ShapeMismatch(
                f"Batch parts disagree: {tuple(self.image_index.shape)}, "
                f"{tuple(self.pixel_index.shape)}, {tuple(self.target.shape)}"
            )

    def __len__(self) -> int:
        return self.image_index.shape[0]

    def groups(self) -> Iterator[Tuple[int, torch.Tensor]]:
        """(image index, batch rows) for every image present, ascending"""
        for m in torch.unique(self.image_index).tolist():
            yield int(m), torch.nonzero(self.image_index == m, as_tuple=True)[0]


@dataclass
class GradientBundle:
    field_coarse: torch.Tensor
    field_fine: torch.Tensor
    islm: torch.Tensor
    twists: torch.Tensor

    def as_dict(self) -> Dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in GROUPS}

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(g).all()) for g in self.as_dict().values())


@dataclass
class TrainState:
    """
    Trainable parameters plus optimizer bookkeeping

    Exposure m is T_start = T0_start * exp(twists[m, 0]) and
    T_end = T0_end * exp(twists[m, 1]) around the initial estimates.
    """
    field_coarse: FieldParams
    field_fine: FieldParams
    islm: IslmParams
    twists: torch.Tensor
    initial: List[ExposureModel]
    pipeline: BlurPipeline
    seed: int = 0
    step_count: int = 0
    scattering: bool = True
    optimizer: Optional[torch.optim.Adam] = None
    scheduler: Optional[LambdaLR] = None

    @classmethod
    def create(cls, initial: List[ExposureModel], pipeline: BlurPipeline, field_shape: FieldShape,
               islm_shape: IslmShape, seed: int = 0) -> "TrainState":
        coarse = FieldParams.initialize(field_shape, make_generator(seed, 0))
        fine = FieldParams.initialize(field_shape, make_generator(seed, 1))
        islm = IslmParams.initialize(islm_shape, make_generator(seed, 2))
        for vector in (coarse.vector, fine.vector, islm.vector):
            vector.requires_grad_(True)
        twists = torch.zeros(len(initial), 2, 6, dtype=DTYPE, requires_grad=True)
        return cls(coarse, fine, islm, twists, list(initial), pipeline, seed)

    def trainables(self) -> Dict[str, torch.Tensor]:
        return {
            "field_coarse": self.field_coarse.vector,
            "field_fine": self.field_fine.vector,
            "islm": self.islm.vector,
            "twists": self.twists,
        }

    def fields(self) -> FieldPair:
        return FieldPair(self.field_coarse, self.field_fine)

    def exposure(self, m: int) -> ExposureModel:
        base = self.initial[m]
        t_start = compose(base.t_start, se3_exp(Twist.from_vector(self.twists[m, 0])))
        t_end = compose(base.t_end, se3_exp(Twist.from_vector(self.twists[m, 1])))
        return ExposureModel(t_start, t_end, base.n)

    def exposures(self) -> List[ExposureModel]:
        """Current trajectories, detached"""
        with torch.no_grad():
            result = []
            for m in range(len(self.initial)):
                em = self.exposure(m)
                result.append(ExposureModel(em.t_start.detach(), em.t_end.detach(), em.n))
            return result

    def render_config(self) -> RenderConfig:
        render = self.pipeline.render
        return render.with_scattering(render.scattering_enabled and self.scattering)


# ---------------------------------------------------------------------------
# Forward and backward

@dataclass
class ForwardPass:
    loss: torch.Tensor
    fine_loss: torch.Tensor
    coarse_loss: torch.Tensor
    plans: Dict[int, List[SamplePlan]]


def forward_loss(batch: TrainBatch, state: TrainState, rng: Optional[torch.Generator] = None,
                 plans: Optional[Dict[int, List[SamplePlan]]] = None) -> ForwardPass:
    """
    Blurred-pixel prediction and loss for a batch

    Per image: interpolate the virtual poses, render coarse-to-fine with
    scattering, average, then compare. The coarse field's own blurred
    prediction adds its loss to the fine loss.

    Args:
        batch: pixel batch
        state: trainables and pipeline
        rng: sampling generator (ignored for images covered by plans)
        plans: frozen sample plans per image and virtual pose
    """
    pipeline = state.pipeline
    cfg = state.render_config()
    fields = state.fields()

    preds, coarse, targets, used = [], [], [], {}
    for m, rows in batch.groups():
        poses = virtual_poses(state.exposure(m), pipeline.endpoint)
        frozen = plans.get(m) if plans is not None else None
        out = render_blurred_pixels(poses, pipeline.intrinsics, batch.pixel_index[rows], fields,
                                    state.islm, cfg, rng, frozen)
        preds.append(out.color)
        coarse.append(out.coarse)
        targets.append(batch.target[rows])
        used[m] = out.plans

    target = torch.cat(targets)
    fine_loss = photometric_loss(torch.cat(preds), target, pipeline.reduction)
    coarse_loss = photometric_loss(torch.cat(coarse), target, pipeline.reduction)
    return ForwardPass(fine_loss + coarse_loss, fine_loss, coarse_loss, used)


def backward(batch: TrainBatch, state: TrainState, rng: Optional[torch.Generator] = None,
             plans: Optional[Dict[int, List[SamplePlan]]] = None) -> Tuple[torch.Tensor, GradientBundle]:
    """
    Loss and gradients for every trainable group

    Sample placement is constant to the backward pass; trainables that the
    forward pass never touched (the ISLM with scattering off) get zeros.

    Returns:
        (detached loss, GradientBundle)

    Raises:
        NonFiniteGradient: any NaN or Inf gradient entry
    """
    result = forward_loss(batch, state, rng, plans)
    params = state.trainables()
    grads = torch.autograd.grad(result.loss, list(params.values()), allow_unused=True)
    filled = [torch.zeros_like(p) if g is None else g for p, g in zip(params.values(), grads)]
    bundle = GradientBundle(*filled)
    if not bundle.is_finite():
        raise NonFiniteGradient(f"Non-finite gradient at step {state.step_count}")
    return result.loss.detach(), bundle


# ---------------------------------------------------------------------------
# Updates

def build_optimizer(groups: Dict[str, Tuple[List[torch.Tensor], float]],
                    hyper: OptimizerHyper) -> Tuple[torch.optim.Adam, LambdaLR]:
    """
    Adam over named parameter groups with the exponential learning-rate decay

    Args:
        groups: name -> (tensors, base learning rate)
        hyper: optimizer hyperparameters
    """
    optimizer = torch.optim.Adam(
        [{"params": tensors, "lr": lr, "name": name} for name, (tensors, lr) in groups.items()],
        betas=(hyper.beta1, hyper.beta2),
        eps=hyper.eps,
    )
    return optimizer, LambdaLR(optimizer, lr_lambda=hyper.decay_factor)


def step(state: TrainState, grads: GradientBundle, hyper: OptimizerHyper) -> TrainState:
    """
    One adaptive-moment update of all trainables

    Fields, ISLM and twists are separate groups with their own learning
    rates. The state is updated in place and returned.
    """
    if not grads.is_finite():
        raise NonFiniteGradient(f"Refusing to apply non-finite gradients at step {state.step_count}")

    if state.optimizer is None:
        state.optimizer, state.scheduler = build_optimizer({
            "fields": ([state.field_coarse.vector, state.field_fine.vector], hyper.lr_field),
            "islm": ([state.islm.vector], hyper.lr_islm),
            "twists": ([state.twists], hyper.lr_pose),
        }, hyper)

    for name, tensor in state.trainables().items():
        tensor.grad = getattr(grads, name).detach().clone()
    state.optimizer.step()
    state.scheduler.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step_count += 1
    return state


def current_lr(state: TrainState, group: str = "fields") -> float:
    if state.optimizer is None:
        return 0.0
    for param_group in state.optimizer.param_groups:
        if param_group.get("name") == group:
            return float(param_group["lr"])
    return 0.0


# ---------------------------------------------------------------------------
# Gradient check

def sample_check_coordinates(state: TrainState, total: int = 200, min_twists: int = 12,
                             seed: int = 0) -> List[Tuple[str, int]]:
    """
    Random (group, flat index) coordinates spanning every trainable group

    Twists get at least min_twists coordinates (or all of them); the rest is
    split evenly over the coarse field, fine field and ISLM.
    """
    rng = np.random.default_rng(derive_seed(seed, total))
    params = state.trainables()
    twist_count = min(params["twists"].numel(), max(min_twists, total // 8))
    coords = [("twists", int(i)) for i in rng.choice(params["twists"].numel(), twist_count, replace=False)]

    networks = ["field_coarse", "field_fine", "islm"]
    remaining = total - twist_count
    for k, name in enumerate(networks):
        share = remaining // len(networks) + (1 if k < remaining % len(networks) else 0)
        share = min(share, params[name].numel())
        coords.extend((name, int(i)) for i in rng.choice(params[name].numel(), share, replace=False))
    return coords


def gradient_check(state: TrainState, batch: TrainBatch, coords: Sequence[Tuple[str, int]],
                   eps: float = 1e-4, rng: Optional[torch.Generator] = None) -> pd.DataFrame:
    """
    Compare autograd gradients with central finite differences

    Sample placement is recorded once and reused for every evaluation, so
    both sides differentiate the same function.

    Returns:
        DataFrame with columns group, index, analytic, numeric, rel_error
    """
    with torch.no_grad():
        plans = forward_loss(batch, state, rng).plans
    _, bundle = backward(batch, state, plans=plans)
    analytic_all = bundle.as_dict()
    params = state.trainables()

    rows = []
    for group, index in coords:
        with torch.no_grad():
            flat = params[group].view(-1)
            original = flat[index].item()
            flat[index] = original + eps
            plus = forward_loss(batch, state, plans=plans).loss.item()
            flat[index] = original - eps
            minus = forward_loss(batch, state, plans=plans).loss.item()
            flat[index] = original

        numeric = (plus - minus) / (2.0 * eps)
        analytic = analytic_all[group].reshape(-1)[index].item()
        scale = max(abs(analytic), abs(numeric), 1e-12)
        rows.append({"group": group, "index": index, "analytic": analytic, "numeric": numeric,
                     "rel_error": abs(analytic - numeric) / scale})

    report = pd.DataFrame(rows, columns=["group", "index", "analytic", "numeric", "rel_error"])
    logger.debug(f"Gradient check over {len(report)} coordinates, max relative error {report['rel_error'].max():.2e}")
    return report


# ---------------------------------------------------------------------------
# Training loop

def perturb_exposure(em: ExposureModel, rot_sigma: float, trans_sigma: float, seed: int, m: int) -> ExposureModel:
    """Initial estimate: each endpoint times exp of a seeded Gaussian twist"""
    if rot_sigma == 0.0 and trans_sigma == 0.0:
        return em
    poses = []
    for end, pose in enumerate((em.t_start, em.t_end)):
        rng = np.random.default_rng(derive_seed(seed, m, end))
        omega = rng.normal(0.0, rot_sigma, size=3) if rot_sigma > 0 else np.zeros(3)
        v = rng.normal(0.0, trans_sigma, size=3) if trans_sigma > 0 else np.zeros(3)
        poses.append(compose(pose, se3_exp(Twist(as_tensor(omega), as_tensor(v)))))
    return ExposureModel(poses[0], poses[1], em.n)


class Trainer:
    """Runs the joint deblurring optimization over a blurred dataset"""

    def __init__(self, config: Dict, dataset: BlurDataset, out_dir: Optional[str] = None):
        """
        Initialize trainer

        Args:
            config: Run configuration dictionary
            dataset: Loaded blurred dataset
            out_dir: Checkpoint/metrics directory (defaults to config "output_dir")
        """
        self.config = config
        self.dataset = dataset
        self.out_dir = out_dir or config.get("output_dir", "runs/latest")
        self.logger = logging.getLogger("IsNeRF.Trainer")

        dataset.validate()
        self.stack = dataset.blurred_stack()

        self.seed = int(config.get("seed", 0))
        self.hyper = OptimizerHyper.from_config(config)
        self.batch_size = int(config.get("batch_rays", 1024))
        self.warmup = int(config.get("scatter_warmup_iters", 1000))
        self.holdout_interval = int(config.get("holdout_interval", 500))
        self.log_interval = int(config.get("log_interval", 100))
        self.checkpoint_interval = int(config.get("checkpoint_interval", 0))
        self.holdout_views = int(config.get("holdout_views", 4))

        # Near/far come from the dataset
        render_values = dict(config, near=dataset.near, far=dataset.far)
        self.render_cfg = RenderConfig.from_config(render_values)
        train_cfg = self.render_cfg.with_scattering(bool(config.get("train_scattering", True)))
        self.pipeline = BlurPipeline(
            dataset.views[0].intrinsics,
            train_cfg,
            config.get("blur_endpoint", dataset.blur_endpoint),
            config.get("loss_reduction", SUM),
        )
        self.field_shape = FieldShape.from_config(config)
        self.islm_shape = IslmShape.from_config(config)

    def initial_state(self) -> TrainState:
        initial = [
            perturb_exposure(view.exposure, float(self.config.get("pose_noise_rot", 0.0)),
                             float(self.config.get("pose_noise_trans", 0.0)), self.seed, m)
            for m, view in enumerate(self.dataset.views)
        ]
        return TrainState.create(initial, self.pipeline, self.field_shape, self.islm_shape, self.seed)

    def sample_batch(self, iteration: int) -> TrainBatch:
        """Uniformly drawn (image, pixel) pairs; depends only on (seed, iteration)"""
        generator = make_generator(self.seed, iteration, 0)
        pixels = self.dataset.width * self.dataset.height
        image_index = torch.randint(len(self.dataset), (self.batch_size,), generator=generator)
        pixel_index = torch.randint(pixels, (self.batch_size,), generator=generator)
        return TrainBatch(image_index, pixel_index, self.stack[image_index, pixel_index])

    def holdout_indices(self) -> List[int]:
        available = [i for i in range(len(self.dataset)) if self.dataset.sharp(i) is not None]
        if not available or self.holdout_views <= 0:
            return []
        picks = np.linspace(0, len(available) - 1, min(self.holdout_views, len(available)))
        return sorted({available[int(round(p))] for p in picks})

    def holdout_psnr(self, state: TrainState) -> Optional[float]:
        """Mean PSNR of midpoint renders against the held-out sharp views"""
        indices = self.holdout_indices()
        if not indices:
            return None
        cfg = self.render_cfg.with_scattering(self.render_cfg.scattering_enabled and state.scattering)
        exposures = state.exposures()
        values = []
        for m in indices:
            image = render_image(exposures[m].midpoint(), self.dataset.views[m].intrinsics,
                                 state.fields(), state.islm, cfg, seed=None)
            values.append(psnr(image.clamp(0.0, 1.0), self.dataset.sharp(m)))
        return float(np.mean(values))

    def save(self, state: TrainState):
        save_checkpoint(self.out_dir, state.field_coarse, state.field_fine, state.islm,
                        state.exposures(), self.config, self.camera(), state.step_count)

    def camera(self) -> Dict:
        return {
            "width": self.dataset.width,
            "height": self.dataset.height,
            "near": self.dataset.near,
            "far": self.dataset.far,
            "intrinsics": self.dataset.views[0].intrinsics.to_dict(),
        }

    def gradient_report(self, coords: int = 200, eps: float = 1e-4) -> pd.DataFrame:
        """Finite-difference check of the full loss at the initial state, scattering on"""
        state = self.initial_state()
        batch = self.sample_batch(0)
        return gradient_check(state, batch, sample_check_coordinates(state, coords, seed=self.seed),
                              eps, make_generator(self.seed, 0, 1))

    def train(self, iterations: Optional[int] = None) -> TrainState:
        """
        Run the optimization

        Args:
            iterations: Step budget (defaults to the configured iterations)

        Returns:
            Final TrainState; checkpoints and metrics.csv land in out_dir
        """
        iterations = self.hyper.total_steps if iterations is None else int(iterations)
        self.hyper.total_steps = max(iterations, 1)
        state = self.initial_state()

        os.makedirs(self.out_dir, exist_ok=True)
        tracker = PerformanceTracker(os.path.join(self.out_dir, "metrics.csv"))

        self.logger.info(f"Training {iterations} iterations on {len(self.dataset)} views "
                         f"({self.batch_size} rays/batch, scattering warmup {self.warmup})")

        scatter_on = bool(self.pipeline.render.scattering_enabled)
        state.scattering = scatter_on and self.warmup <= 0

        for iteration in range(iterations):
            if scatter_on and not state.scattering and iteration >= self.warmup:
                state.scattering = True
                self.logger.info(f"Scattering term enabled at iteration {iteration}")

            batch = self.sample_batch(iteration)
            loss, grads = backward(batch, state, make_generator(self.seed, iteration, 1))
            step(state, grads, self.hyper)

            done = iteration + 1
            holdout = None
            if done % self.holdout_interval == 0 or done == iterations:
                holdout = self.holdout_psnr(state)
            if holdout is not None or done % self.log_interval == 0 or done == 1:
                tracker.log_iteration(done, loss.item(), current_lr(state), holdout)

            if self.checkpoint_interval and done % self.checkpoint_interval == 0:
                self.save(state)

        self.save(state)
        summary = tracker.summary()
        self.logger.info(f"Training finished: {summary}")
        curve = tracker.holdout_curve()
        if curve:
            self.logger.info(f"Held-out PSNR by evaluation: {', '.join(f'{p:.2f}' for p in curve)} dB")
        return state


def train(dataset: BlurDataset, config: Dict, out_dir: Optional[str] = None) -> TrainState:
    """Train on a dataset with a run configuration"""
    return Trainer(config, dataset, out_dir).train()
