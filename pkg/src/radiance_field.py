"""
Radiance fields for IsNeRF
Flat-vector MLP field F(x, d) -> (sigma, color), analytic test fields and
the parameter checkpoint format shared with the ISLM
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from src.errors import ShapeMismatch
from src.utils import DTYPE, as_tensor

Layout = List[Tuple[str, Tuple[int, ...]]]


@dataclass
class FieldOutput:
    """Density (1/length, >= 0) and linear RGB color in [0, 1]"""
    sigma: torch.Tensor
    color: torch.Tensor


class RadianceField(Protocol):
    """Anything the renderer can query for density and color"""

    def evaluate(self, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
        ...


def positional_encoding(x: torch.Tensor, order: int) -> torch.Tensor:
    """
    Frequency encoding [x, sin(2^0 pi x), cos(2^0 pi x), ..., cos(2^(L-1) pi x)]

    Args:
        x: [..., 3] coordinates
        order: number of frequency bands L (0 returns x unchanged)

    Returns:
        [..., 3 + 6L] encoding
    """
    if order < 0:
        raise ValueError(f"Encoding order must be >= 0, got {order}")
    parts = [x]
    for k in range(order):
        scaled = (2.0 ** k) * math.pi * x
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    return torch.cat(parts, dim=-1)


def encoded_size(order: int) -> int:
    return 3 + 6 * order


def layout_size(layout: Layout) -> int:
    return sum(int(np.prod(shape)) for _, shape in layout)


def unflatten(vector: torch.Tensor, layout: Layout) -> Dict[str, torch.Tensor]:
    """Differentiable views of a flat parameter vector, in layout order"""
    tensors = {}
    offset = 0
    for name, shape in layout:
        count = int(np.prod(shape))
        tensors[name] = vector[offset:offset + count].view(*shape)
        offset += count
    return tensors


def init_vector(layout: Layout, generator: Optional[torch.Generator]) -> torch.Tensor:
    """Uniform fan-in initialisation of weights, zero biases"""
    chunks = []
    for name, shape in layout:
        if name.endswith(".bias"):
            chunks.append(torch.zeros(shape, dtype=DTYPE).flatten())
            continue
        bound = math.sqrt(6.0 / shape[1])
        weights = torch.empty(shape, dtype=DTYPE).uniform_(-bound, bound, generator=generator)
        chunks.append(weights.flatten())
    return torch.cat(chunks)


def check_unit(d: torch.Tensor, tol: float = 1e-6):
    norms = torch.linalg.norm(d.detach(), dim=-1)
    if norms.numel() and (norms - 1.0).abs().max().item() > tol:
        raise ValueError("View directions must be unit-norm")


@dataclass
class FieldShape:
    """
    Layer-shape descriptor of the field network

    The density trunk sees only the encoded position; the view direction joins
    after the density head, so sigma is view-invariant by construction.
    """
    trunk_depth: int = 4
    trunk_width: int = 64
    color_width: int = 32
    order_x: int = 6
    order_d: int = 4
    bounds_min: Tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bounds_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @classmethod
    def from_config(cls, config: Dict) -> "FieldShape":
        return cls(
            trunk_depth=config.get("field_trunk_depth", 4),
            trunk_width=config.get("field_trunk_width", 64),
            color_width=config.get("field_color_width", 32),
            order_x=config.get("encoding_order_x", 6),
            order_d=config.get("encoding_order_d", 4),
            bounds_min=tuple(config.get("scene_bounds_min", (-1.0, -1.0, -1.0))),
            bounds_max=tuple(config.get("scene_bounds_max", (1.0, 1.0, 1.0))),
        )

    @classmethod
    def from_dict(cls, data: Dict) -> "FieldShape":
        data = dict(data)
        data["bounds_min"] = tuple(data["bounds_min"])
        data["bounds_max"] = tuple(data["bounds_max"])
        return cls(**data)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["bounds_min"] = list(self.bounds_min)
        data["bounds_max"] = list(self.bounds_max)
        return data

    def layout(self) -> Layout:
        width = self.trunk_width
        layers: Layout = []
        in_dim = encoded_size(self.order_x)
        for i in range(self.trunk_depth):
            layers.append((f"trunk{i}.weight", (width, in_dim)))
            layers.append((f"trunk{i}.bias", (width,)))
            in_dim = width
        layers += [
            ("sigma.weight", (1, in_dim)), ("sigma.bias", (1,)),
            ("feature.weight", (width, in_dim)), ("feature.bias", (width,)),
            ("color_hidden.weight", (self.color_width, width + encoded_size(self.order_d))),
            ("color_hidden.bias", (self.color_width,)),
            ("color_out.weight", (3, self.color_width)), ("color_out.bias", (3,)),
        ]
        return layers

    def param_count(self) -> int:
        return layout_size(self.layout())


def normalize_points(x: torch.Tensor, bounds_min: Sequence[float], bounds_max: Sequence[float]) -> torch.Tensor:
    """Map the scene box onto [-1, 1]^3"""
    lo = as_tensor(bounds_min)
    hi = as_tensor(bounds_max)
    return (x - 0.5 * (lo + hi)) / (0.5 * (hi - lo))


@dataclass
class FieldParams:
    """Flat parameter vector of one field network plus its shape descriptor"""
    vector: torch.Tensor
    shape: FieldShape

    def __post_init__(self):
        expected = self.shape.param_count()
        if self.vector.dim() != 1 or self.vector.numel() != expected:
            raise ShapeMismatch(
                f"Field parameter vector has {self.vector.numel()} entries, descriptor implies {expected}"
            )

    @classmethod
    def initialize(cls, shape: FieldShape, generator: Optional[torch.Generator] = None) -> "FieldParams":
        return cls(init_vector(shape.layout(), generator), shape)

    @classmethod
    def zeros(cls, shape: FieldShape) -> "FieldParams":
        return cls(torch.zeros(shape.param_count(), dtype=DTYPE), shape)

    def evaluate(self, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
        return eval_field(self, x, d)


def eval_field(params: FieldParams, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
    """
    Evaluate the field network at points x with view directions d

    Args:
        params: field parameters
        x: [..., 3] world points
        d: [..., 3] unit view directions

    Returns:
        FieldOutput with softplus density and logistic color
    """
    expected = params.shape.param_count()
    if params.vector.numel() != expected:
        raise ShapeMismatch(f"Field parameter vector has {params.vector.numel()} entries, expected {expected}")
    check_unit(d)

    shape = params.shape
    p = unflatten(params.vector, shape.layout())

    h = positional_encoding(normalize_points(x, shape.bounds_min, shape.bounds_max), shape.order_x)
    for i in range(shape.trunk_depth):
        h = F.relu(F.linear(h, p[f"trunk{i}.weight"], p[f"trunk{i}.bias"]))

    sigma = F.softplus(F.linear(h, p["sigma.weight"], p["sigma.bias"])).squeeze(-1)
    feature = F.linear(h, p["feature.weight"], p["feature.bias"])

    view = positional_encoding(d, shape.order_d)
    hidden = F.relu(F.linear(torch.cat([feature, view], dim=-1),
                             p["color_hidden.weight"], p["color_hidden.bias"]))
    color = torch.sigmoid(F.linear(hidden, p["color_out.weight"], p["color_out.bias"]))
    return FieldOutput(sigma, color)


# ---------------------------------------------------------------------------
# Analytic fields

@dataclass
class ConstantBox:
    """Axis-aligned box of constant density and color"""
    sigma: float
    color: Tuple[float, float, float]
    bounds_min: Tuple[float, float, float]
    bounds_max: Tuple[float, float, float]
    name: str = ""
    kind: str = field(default="box", init=False)

    def inside(self, x: torch.Tensor) -> torch.Tensor:
        lo = as_tensor(self.bounds_min)
        hi = as_tensor(self.bounds_max)
        return ((x >= lo) & (x <= hi)).all(dim=-1)

    def intersect(self, origins: torch.Tensor, directions: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Slab test; returns (t_in, t_out) with t_in > t_out when missed"""
        lo = as_tensor(self.bounds_min)
        hi = as_tensor(self.bounds_max)
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
        # 0 * inf on rays parallel to a slab
        t0 = torch.nan_to_num(t0, nan=-math.inf)
        t1 = torch.nan_to_num(t1, nan=math.inf)
        t_in = torch.minimum(t0, t1).max(dim=-1).values
        t_out = torch.maximum(t0, t1).min(dim=-1).values
        return t_in, t_out

    def evaluate(self, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
        inside = self.inside(x)
        sigma = torch.where(inside, torch.full_like(x[..., 0], self.sigma), torch.zeros_like(x[..., 0]))
        color = inside[..., None] * as_tensor(self.color)
        return FieldOutput(sigma, color)

    def to_dict(self) -> Dict:
        return {"type": "box", "name": self.name, "sigma": self.sigma, "color": list(self.color),
                "bounds_min": list(self.bounds_min), "bounds_max": list(self.bounds_max)}


@dataclass
class EmissiveSphere:
    """Sphere of constant density and color; the boundary counts as inside"""
    center: Tuple[float, float, float]
    radius: float
    sigma: float
    color: Tuple[float, float, float]
    name: str = ""
    kind: str = field(default="sphere", init=False)

    def inside(self, x: torch.Tensor) -> torch.Tensor:
        return torch.linalg.norm(x - as_tensor(self.center), dim=-1) <= self.radius

    def intersect(self, origins: torch.Tensor, directions: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        offset = origins - as_tensor(self.center)
        b = (offset * directions).sum(-1)
        c = (offset * offset).sum(-1) - self.radius ** 2
        disc = b * b - c
        root = torch.sqrt(torch.clamp(disc, min=0.0))
        t_in = torch.where(disc >= 0, -b - root, torch.full_like(b, math.inf))
        t_out = torch.where(disc >= 0, -b + root, torch.full_like(b, -math.inf))
        return t_in, t_out

    def evaluate(self, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
        inside = self.inside(x)
        sigma = torch.where(inside, torch.full_like(x[..., 0], self.sigma), torch.zeros_like(x[..., 0]))
        color = inside[..., None] * as_tensor(self.color)
        return FieldOutput(sigma, color)

    def to_dict(self) -> Dict:
        return {"type": "sphere", "name": self.name, "center": list(self.center), "radius": self.radius,
                "sigma": self.sigma, "color": list(self.color)}


Primitive = Union[ConstantBox, EmissiveSphere]


@dataclass
class AnalyticUnion:
    """
    Overlay of primitives

    Densities add; color is the density-weighted mean of the overlapping primitives.
    """
    primitives: List[Primitive]

    def evaluate(self, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
        sigma = torch.zeros_like(x[..., 0])
        weighted = torch.zeros_like(x)
        for primitive in self.primitives:
            out = primitive.evaluate(x, d)
            sigma = sigma + out.sigma
            weighted = weighted + out.sigma[..., None] * out.color
        safe = torch.where(sigma > 0, sigma, torch.ones_like(sigma))
        color = torch.where(sigma[..., None] > 0, weighted / safe[..., None], torch.zeros_like(weighted))
        return FieldOutput(sigma, color)


AnalyticField = Union[ConstantBox, EmissiveSphere, AnalyticUnion]


def eval_analytic(field_: AnalyticField, x: torch.Tensor, d: torch.Tensor) -> FieldOutput:
    """Exact closed-form density and color of an analytic field"""
    return field_.evaluate(x, d)


def primitive_from_dict(data: Dict) -> Primitive:
    kind = data.get("type")
    if kind == "box":
        return ConstantBox(float(data["sigma"]), tuple(data["color"]), tuple(data["bounds_min"]),
                           tuple(data["bounds_max"]), data.get("name", ""))
    if kind == "sphere":
        return EmissiveSphere(tuple(data["center"]), float(data["radius"]), float(data["sigma"]),
                              tuple(data["color"]), data.get("name", ""))
    raise ValueError(f"Unknown primitive type: {kind}")


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then little-endian float64 values

def write_params(path: str, kind: str, descriptor: Dict, vector: torch.Tensor):
    """
    Write a parameter checkpoint

    Args:
        path: Output file
        kind: "field" or "islm"
        descriptor: Shape descriptor as a JSON-able dict
        vector: Flat parameter vector
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    values = vector.detach().cpu().numpy().astype("<f8")
    header = json.dumps({"kind": kind, "count": int(values.size), "shape": descriptor}, sort_keys=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        f.write(values.tobytes())


def read_params(path: str) -> Tuple[str, Dict, torch.Tensor]:
    """Read a checkpoint written by write_params -> (kind, descriptor, vector)"""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        payload = f.read()
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != header["count"]:
        raise ShapeMismatch(f"{path}: header announces {header['count']} values, found {values.size}")
    return header["kind"], header["shape"], torch.from_numpy(values.astype(np.float64))


def save_field(params: FieldParams, path: str):
    write_params(path, "field", params.shape.to_dict(), params.vector)


def load_field(path: str) -> FieldParams:
    kind, descriptor, vector = read_params(path)
    if kind != "field":
        raise ShapeMismatch(f"{path} holds '{kind}' parameters, not a field")
    return FieldParams(vector, FieldShape.from_dict(descriptor))
