"""Generator and embedder abstractions plus the shipped toy instances.

Generators map an ordered set of named condition tensors to an image in
``[0, 1]``.  All parameters are frozen numpy arrays created from a seed;
nothing in the package ever updates them.

Images are ``HxW`` (single channel) or ``CxHxW``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConditionError, ConfigError, DegenerateDirectionError

ROLES = ("image", "mask", "style-reference")


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    shape: tuple
    role: str = "image"


@dataclass
class Condition:
    """One condition tensor plus its perturbation settings.

    ``perturb_mask`` (same shape as ``value``, entries in {0, 1}) limits
    which elements the attack may change; ``None`` means all of them.
    """

    value: np.ndarray
    perturbable: bool = True
    perturb_mask: np.ndarray | None = None

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        if self.perturb_mask is not None:
            self.perturb_mask = np.array(self.perturb_mask, dtype=np.float64)


class ConditionSet(dict):
    """Ordered mapping ``name -> Condition``."""

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], fixed=()):
        return cls({k: Condition(v, perturbable=k not in fixed) for k, v in arrays.items()})

    def values_dict(self) -> dict:
        return {k: c.value for k, c in self.items()}

    def perturbable_names(self) -> list:
        return [k for k, c in self.items() if c.perturbable]


def _freeze(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class GeneratorModel(ABC):
    """A deterministic conditional generator ``y = f_theta(conditions)``."""

    identifier: str = "generator"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    @property
    @abstractmethod
    def condition_schema(self) -> list[ConditionSpec]:
        ...

    @abstractmethod
    def forward(self, inputs: Mapping[str, Tensor]) -> Tensor:
        """Differentiable forward pass on already validated inputs."""

    def default_conditions(self) -> ConditionSet:
        """A small synthetic condition set for demos and the CLI."""
        raise NotImplementedError

    def validate(self, conditions: Mapping) -> None:
        schema = self.condition_schema
        names = [s.name for s in schema]
        if list(conditions) != names:
            raise ConditionError(f"{self.identifier}: expected conditions {names}, got {list(conditions)}")
        for spec in schema:
            cond = conditions[spec.name]
            value = cond.value if isinstance(cond, Condition) else np.asarray(cond)
            if tuple(value.shape) != tuple(spec.shape):
                raise ConditionError(f"condition {spec.name!r}: shape {value.shape} != {tuple(spec.shape)}")
            if not np.all(np.isfinite(value)):
                raise ConditionError(f"condition {spec.name!r} has non-finite values")
            if spec.role == "mask" and not np.all((value == 0) | (value == 1)):
                raise ConditionError(f"condition {spec.name!r} must be binary")
            if spec.role != "mask" and (value.min() < 0 or value.max() > 1):
                raise ConditionError(f"condition {spec.name!r} outside [0, 1]")
            if isinstance(cond, Condition) and cond.perturb_mask is not None:
                if cond.perturb_mask.shape != value.shape:
                    raise ConditionError(f"perturb_mask for {spec.name!r} has wrong shape")


def generate(model: GeneratorModel, conditions: Mapping) -> Tensor:
    """Validate ``conditions`` and run the model.  Output lies in [0, 1]."""
    model.validate(conditions)
    inputs = {}
    for name, cond in conditions.items():
        value = cond.value if isinstance(cond, Condition) else cond
        inputs[name] = value if isinstance(value, Tensor) else Tensor(value)
    return model.forward(inputs)


# -- diffusion-fill inpainter ----------------------------------------------

_CROSS = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def _check_mask(mask: np.ndarray, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != tuple(shape):
        raise ConditionError(f"mask shape {mask.shape} != image shape {tuple(shape)}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ConditionError("mask must be binary")
    return mask


def diffusion_fill(image, mask, k_iters: int) -> Tensor:
    """Harmonic fill of the masked (==1) pixels by Jacobi iteration.

    Each iteration replaces every masked pixel by the mean of its available
    4-neighbours; unmasked pixels keep their input value.  The map is
    linear in ``image``.
    """
    if k_iters < 1:
        raise ConfigError("k_iters must be a positive integer")
    image = ad.as_tensor(image)
    if image.ndim != 2:
        raise ConditionError(f"diffusion_fill expects an HxW image, got {image.shape}")
    mask = _check_mask(mask, image.shape)
    if not mask.any():
        return image
    counts = ad.conv2d(np.ones(image.shape), _CROSS, padding="zero").data
    weight = Tensor(mask / counts)
    keep = image * Tensor(1.0 - mask)
    u = image
    for _ in range(k_iters):
        u = keep + weight * ad.conv2d(u, _CROSS, padding="zero")
    return u


class DiffusionFillInpainter(GeneratorModel):
    """Linear toy inpainter: conditions ``image`` and binary ``mask``."""

    identifier = "diffusion_fill"

    def __init__(self, shape=(32, 32), k_iters: int = 50):
        super().__init__()
        self.shape = tuple(shape)
        self.k_iters = int(k_iters)

    @property
    def condition_schema(self):
        return [ConditionSpec("image", self.shape, "image"), ConditionSpec("mask", self.shape, "mask")]

    def forward(self, inputs):
        filled = diffusion_fill(inputs["image"], inputs["mask"].data, self.k_iters)
        return ad.clamp(filled, 0.0, 1.0)

    def default_conditions(self, hole: int | None = None) -> ConditionSet:
        h, w = self.shape
        hole = hole if hole is not None else min(h, w) // 2
        return ConditionSet(
            image=Condition(demo_image(self.shape)),
            mask=Condition(center_mask(self.shape, hole), perturbable=False),
        )


def center_mask(shape, size: int) -> np.ndarray:
    h, w = shape
    mask = np.zeros((h, w))
    top, left = (h - size) // 2, (w - size) // 2
    mask[top : top + size, left : left + size] = 1.0
    return mask


def demo_image(shape) -> np.ndarray:
    """Smooth synthetic scene in roughly [0.2, 0.8]."""
    h, w = shape[-2:]
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    img = 0.5 + 0.2 * np.sin(2 * np.pi * xx) * np.cos(np.pi * yy) + 0.1 * (xx - yy)
    if len(shape) == 3:
        img = np.stack([np.roll(img, c * 3, axis=1) for c in range(shape[0])])
    return img


# -- conv generator ----------------------------------------------------------


class ConvGenerator(GeneratorModel):
    """Three seeded 3x3 conv layers with tanh; output ``0.5 + 0.5 tanh(.)``.

    ``conditions`` lists ``(name, role)`` pairs; their channels are
    concatenated, so e.g. ``[("content", "image"), ("style",
    "style-reference")]`` gives a two-condition style-transfer toy.
    """

    identifier = "conv"

    def __init__(
        self,
        shape=(16, 16),
        seed: int = 42,
        hidden: int = 8,
        conditions=(("image", "image"),),
        zero_bias: bool = False,
        weight_scale: float = 1.0,
    ):
        super().__init__()
        self.shape = tuple(shape)
        self.seed = int(seed)
        self.hidden = int(hidden)
        self.conditions = tuple((str(n), str(r)) for n, r in conditions)
        self.zero_bias = bool(zero_bias)
        self.weight_scale = float(weight_scale)
        for _, role in self.conditions:
            if role not in ROLES or role == "mask":
                raise ConfigError(f"unsupported condition role {role!r}")
        c_in = self._channels * len(self.conditions)
        c_out = self._channels
        rng = np.random.default_rng(self.seed)
        widths = [(hidden, c_in), (hidden, hidden), (c_out, hidden)]
        for i, (o, c) in enumerate(widths, 1):
            w = rng.normal(scale=weight_scale / np.sqrt(9 * c), size=(o, c, 3, 3))
            b = np.zeros(o) if zero_bias else rng.normal(scale=0.1, size=o)
            self.params[f"w{i}"] = _freeze(w)
            self.params[f"b{i}"] = _freeze(b)

    @property
    def _channels(self):
        return self.shape[0] if len(self.shape) == 3 else 1

    @property
    def condition_schema(self):
        return [ConditionSpec(n, self.shape, r) for n, r in self.conditions]

    def forward(self, inputs):
        spatial = self.shape[-2:]
        xs = [ad.reshape(inputs[n], (self._channels, *spatial)) for n, _ in self.conditions]
        h = xs[0] if len(xs) == 1 else ad.concat(xs, axis=0)
        p = self.params
        h = ad.tanh(ad.conv2d(h, p["w1"], p["b1"]))
        h = ad.tanh(ad.conv2d(h, p["w2"], p["b2"]))
        o = ad.tanh(ad.conv2d(h, p["w3"], p["b3"]))
        y = 0.5 + 0.5 * o
        return ad.clamp(ad.reshape(y, self.shape), 0.0, 1.0)

    def default_conditions(self) -> ConditionSet:
        out = ConditionSet()
        for i, (name, _) in enumerate(self.conditions):
            out[name] = Condition(np.roll(demo_image(self.shape), 5 * i, axis=-1))
        return out


class ConstantGenerator(GeneratorModel):
    """Ignores its input and returns a fixed image (zero gradient)."""

    identifier = "constant"

    def __init__(self, shape=(8, 8), value: float = 0.5):
        super().__init__()
        self.shape = tuple(shape)
        self.params["value"] = _freeze(np.full(self.shape, value))

    @property
    def condition_schema(self):
        return [ConditionSpec("image", self.shape, "image")]

    def forward(self, inputs):
        return inputs["image"] * 0.0 + Tensor(self.params["value"])

    def default_conditions(self):
        return ConditionSet(image=Condition(demo_image(self.shape)))


# -- embedder ----------------------------------------------------------------


class Embedder(ABC):
    """Differentiable image encoder producing unit-norm vectors."""

    identifier = "embedder"
    dim: int

    @abstractmethod
    def embed(self, image) -> Tensor:
        ...


class ToyEmbedder(Embedder):
    """Two seeded conv+tanh layers, spatial mean pooling, L2 normalisation."""

    identifier = "toy_embedder"

    def __init__(self, channels: int = 1, dim: int = 16, hidden: int = 8, seed: int = 7):
        self.channels = int(channels)
        self.dim = int(dim)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.params = {
            "w1": _freeze(rng.normal(scale=2.0 / np.sqrt(9 * channels), size=(hidden, channels, 3, 3))),
            "b1": _freeze(rng.normal(scale=0.5, size=hidden)),
            "w2": _freeze(rng.normal(scale=2.0 / np.sqrt(9 * hidden), size=(dim, hidden, 3, 3))),
            "b2": _freeze(rng.normal(scale=0.5, size=dim)),
        }

    def embed(self, image) -> Tensor:
        image = ad.as_tensor(image)
        if image.ndim == 2 and self.channels == 1:
            image = ad.reshape(image, (1, *image.shape))
        if image.ndim != 3 or image.shape[0] != self.channels or min(image.shape[1:]) < 3:
            raise ConditionError(f"embedder expects {self.channels}xHxW (H, W >= 3), got {image.shape}")
        p = self.params
        h = ad.tanh(ad.conv2d(image, p["w1"], p["b1"]))
        h = ad.tanh(ad.conv2d(h, p["w2"], p["b2"]))
        v = ad.mean(h, axis=(1, 2))
        norm = ad.l2_norm(v)
        if norm.item() <= ad.NORM_EPSILON:
            raise DegenerateDirectionError("embedding has zero norm")
        return v / norm


def embed(embedder: Embedder, image) -> Tensor:
    return embedder.embed(image)


def normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    n = float(np.linalg.norm(vec))
    if n <= ad.NORM_EPSILON:
        raise DegenerateDirectionError("cannot normalise a zero vector")
    return vec / n


def load_reference_embedding(path, dim: int | None = None) -> Tensor:
    """Read a plain-text vector (one float per line) and L2-normalise it."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        values = [float(tok) for tok in text.split()]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not values or (dim is not None and len(values) != dim):
        raise ConfigError(f"{path}: expected {dim} values, found {len(values)}")
    return Tensor(normalize(values))


def save_reference_embedding(vec, path) -> None:
    vec = np.asarray(ad.as_tensor(vec).data).reshape(-1)
    Path(path).write_text("".join(f"{v!r}\n" for v in vec.tolist()), encoding="utf-8")


# -- registry ----------------------------------------------------------------

MODELS = {
    "diffusion_fill": DiffusionFillInpainter,
    "conv": ConvGenerator,
    "constant": ConstantGenerator,
}


def build_model(model_id: str, **params) -> GeneratorModel:
    try:
        cls = MODELS[model_id]
    except KeyError:
        raise ConfigError(f"unknown model {model_id!r}; choose from {sorted(MODELS)}") from None
    if "shape" in params:
        params["shape"] = tuple(params["shape"])
    if "conditions" in params:
        params["conditions"] = tuple(tuple(c) for c in params["conditions"])
    return cls(**params)
