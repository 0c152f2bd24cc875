"""Sign-gradient attacks on deterministic conditional generators.

The attack perturbs the *conditions* of a frozen generator so that its
output moves away from the default output (untargeted) or along a
reference direction in embedding space (targeted).  Losses are always
ascended.

Loop, per perturbable condition ``k``::

    x_1 = x + z_0,  z_0 ~ N(0, delta^2)
    z_i = grad_{x_i} L(X_i, y)                 (all k at the snapshot X_i)
    x_{i+1} = x + clip(x_i - x + eps_i sign(z_i), c_min, c_max)
    eps_{i+1} = decay * eps_i
    Y_{i+1} = f(X_{i+1})
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DegenerateDirectionError, NumericError
from .models import Condition, ConditionSet, Embedder, GeneratorModel, generate

TRUNCATIONS = ("noise_trunc", "sample_clip")
VARIANTS = ("untargeted_l1", "untargeted_var", "targeted_directional")


@dataclass(frozen=True)
class LossSpec:
    """Which loss to ascend.

    Targeted losses take exactly one reference: ``embedding_pair`` as
    ``(e_ref, e_src)`` (text-style guidance) or ``reference_image``.  An
    ``e_src`` of ``None`` stands for the embedding of the default output.
    """

    variant: str = "untargeted_l1"
    embedding_pair: tuple | None = None
    reference_image: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if self.variant == "targeted_directional":
            if (self.embedding_pair is None) == (self.reference_image is None):
                raise ConfigError("targeted loss needs exactly one of embedding_pair / reference_image")

    @property
    def targeted(self):
        return self.variant == "targeted_directional"


@dataclass(frozen=True)
class BaseAttackConfig:
    steps: int = 10
    delta: float = 1e-4
    c_min: float = -0.09
    c_max: float = 0.09
    truncation: str = "noise_trunc"
    loss: LossSpec = LossSpec()
    seed: int = 0
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if not self.c_min <= 0 <= self.c_max:
            raise ConfigError("need c_min <= 0 <= c_max")
        if self.truncation not in TRUNCATIONS:
            raise ConfigError(f"truncation must be one of {TRUNCATIONS}")
        if self.domain[0] > self.domain[1]:
            raise ConfigError("domain bounds reversed")

    @property
    def budget(self):
        return max(self.c_max, -self.c_min)


@dataclass(frozen=True)
class AttackConfig(BaseAttackConfig):
    """Sign-attack hyperparameters.

    ``epsilon0`` is a float, an interval ``(lo, hi)`` sampled uniformly once
    per condition, or a mapping from condition name to either.  An
    ``epsilon0`` of exactly 0 switches the update off (the conditions keep
    their initial noise), which gives a deterministic reference run.
    """

    epsilon0: object = 0.01
    decay: float = 0.95

    def __post_init__(self):
        super().__post_init__()
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must lie in (0, 1]")
        specs = self.epsilon0.values() if isinstance(self.epsilon0, Mapping) else [self.epsilon0]
        for spec in specs:
            lo, hi = _interval(spec)
            if not (lo == hi == 0 or 0 < lo <= hi):
                raise ConfigError("epsilon0 must be 0 or an interval with 0 < lo <= hi")


def _interval(spec):
    if isinstance(spec, (int, float)):
        return float(spec), float(spec)
    lo, hi = spec
    return float(lo), float(hi)


@dataclass
class StepRecord:
    step: int
    loss: float
    eps: dict
    linf_perturbation: dict
    l1_output_delta: float


@dataclass
class AttackTrace:
    records: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    default_output: np.ndarray | None = None
    final_conditions: dict = field(default_factory=dict)
    final_loss: float | None = None
    step_sizes: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        """CSV text.  ``eps`` is the first perturbable condition's step size;
        ``linf_perturbation`` is the max over conditions."""
        lines = ["step,loss,eps,linf_perturbation,l1_output_delta"]
        for r in self.records:
            eps = next(iter(r.eps.values())) if r.eps else 0.0
            linf = max(r.linf_perturbation.values()) if r.linf_perturbation else 0.0
            lines.append(f"{r.step},{r.loss!r},{eps!r},{linf!r},{r.l1_output_delta!r}")
        return "\n".join(lines) + "\n"


# -- primitives --------------------------------------------------------------


def sample_epsilon(interval, rng: np.random.Generator) -> float:
    """Uniform draw from ``[lo, hi]``; a degenerate interval returns ``lo``."""
    lo, hi = _interval(interval)
    if not 0 < lo <= hi:
        raise ConfigError(f"invalid epsilon interval [{lo}, {hi}]")
    if lo == hi:
        return lo
    return float(rng.uniform(lo, hi))


def init_perturbation(x, delta: float, rng: np.random.Generator, domain=(0.0, 1.0), mask=None) -> np.ndarray:
    """``x + N(0, delta^2)`` noise, clamped to ``domain``."""
    if delta < 0:
        raise ConfigError("delta must be >= 0")
    x = np.asarray(ad.as_tensor(x).data)
    noise = rng.normal(0.0, delta, size=x.shape) if delta > 0 else np.zeros(x.shape)
    if mask is not None:
        noise = noise * mask
    return np.clip(x + noise, *domain)


def untargeted_loss(variant: str, y_cur: Tensor, y_default) -> Tensor:
    """``l1``: sum |y_cur - y_default|;  ``var``: population variance of y_cur."""
    if variant in ("l1", "untargeted_l1"):
        return ad.sum_abs(ad.sub(y_cur, y_default))
    if variant in ("var", "untargeted_var"):
        return ad.variance(y_cur)
    raise ConfigError(f"unknown untargeted variant {variant!r}")


def reference_direction(spec: LossSpec, embedder: Embedder, y_default) -> np.ndarray:
    """Constant direction dR for the targeted loss."""
    if spec.embedding_pair is not None:
        e_ref, e_src = spec.embedding_pair
        if e_src is None:
            e_src = embedder.embed(y_default)
        d_r = np.asarray(ad.as_tensor(e_ref).data).reshape(-1) - np.asarray(ad.as_tensor(e_src).data).reshape(-1)
    else:
        d_r = embedder.embed(spec.reference_image).data - embedder.embed(y_default).data
    if np.linalg.norm(d_r) < ad.NORM_EPSILON:
        raise DegenerateDirectionError("reference direction has zero norm")
    return d_r


def directional_deltas(y_cur: Tensor, y_default, spec: LossSpec, embedder: Embedder, d_r=None):
    """Return ``(dI, dR)``; ``dI`` stays on ``y_cur``'s graph."""
    if d_r is None:
        d_r = reference_direction(spec, embedder, y_default)
    d_i = ad.sub(embedder.embed(y_cur), Tensor(embedder.embed(y_default).data))
    return d_i, Tensor(d_r)


def directional_loss(d_i: Tensor, d_r) -> Tensor:
    """Cosine between the two deltas; 0 with zero gradient when ``dI`` vanishes."""
    d_r = ad.as_tensor(d_r)
    if np.linalg.norm(d_r.data) <= ad.NORM_EPSILON:
        raise DegenerateDirectionError("reference direction has zero norm")
    if np.linalg.norm(d_i.data) <= ad.NORM_EPSILON:
        return Tensor(0.0, (d_i,), lambda g: (np.zeros(d_i.shape),), "cosine0")
    return ad.cosine_similarity(d_i, d_r)


def _masked(new, old, mask):
    return new if mask is None else np.where(mask > 0, new, old)


def attack_step_noise_trunc(x, x_i, grad, eps_i, c_min, c_max, domain=(0.0, 1.0), mask=None) -> np.ndarray:
    """Truncate the cumulative perturbation, not the sample."""
    if eps_i <= 0:
        raise ConfigError("eps_i must be > 0")
    x, x_i, grad = (np.asarray(ad.as_tensor(a).data) for a in (x, x_i, grad))
    delta_x = np.clip(x_i - x + eps_i * np.sign(grad), c_min, c_max)
    new = np.clip(x + delta_x, *domain)
    return _masked(new, x_i, mask)


def attack_step_sample_clip(x_i, grad, eps_i, d_min=0.0, d_max=1.0, mask=None) -> np.ndarray:
    """Plain sign step with the sample clamped to the value range."""
    if eps_i <= 0:
        raise ConfigError("eps_i must be > 0")
    x_i, grad = (np.asarray(ad.as_tensor(a).data) for a in (x_i, grad))
    new = np.clip(x_i + eps_i * np.sign(grad), d_min, d_max)
    return _masked(new, x_i, mask)


def truncate(x, x_new_raw, x_i, cfg: BaseAttackConfig, mask=None) -> np.ndarray:
    """Project an unconstrained proposal the way ``cfg.truncation`` says."""
    if cfg.truncation == "noise_trunc":
        new = np.clip(x + np.clip(x_new_raw - x, cfg.c_min, cfg.c_max), *cfg.domain)
    else:
        new = np.clip(x_new_raw, *cfg.domain)
    return _masked(new, x_i, mask)


# -- the loop ----------------------------------------------------------------


class _Objective:
    """Loss on generator outputs, with the targeted reference cached."""

    def __init__(self, spec: LossSpec, y_default: np.ndarray, embedder: Embedder | None):
        self.spec = spec
        self.y_default = y_default
        self.embedder = embedder
        self.d_r = None
        if spec.targeted:
            if embedder is None:
                raise ConfigError("targeted loss needs an embedder")
            self.d_r = reference_direction(spec, embedder, y_default)
            self.e_default = Tensor(embedder.embed(y_default).data)

    def __call__(self, y: Tensor) -> Tensor:
        if self.spec.targeted:
            d_i = ad.sub(self.embedder.embed(y), self.e_default)
            return directional_loss(d_i, self.d_r)
        return untargeted_loss(self.spec.variant, y, self.y_default)


def _resolve_epsilons(cfg: AttackConfig, names, rng):
    eps = {}
    for name in names:
        spec = cfg.epsilon0[name] if isinstance(cfg.epsilon0, Mapping) else cfg.epsilon0
        eps[name] = 0.0 if _interval(spec) == (0.0, 0.0) else sample_epsilon(spec, rng)
    return eps


def _drive(model, conditions, cfg, embedder, make_updater):
    """Shared loop for the sign attack and the optimizer baseline.

    ``make_updater(names, rng)`` returns ``(step_sizes, update)`` where
    ``update(i, name, x, x_i, grad, mask) -> x_next`` and ``step_sizes(i)``
    gives the per-condition step size recorded in the trace.
    """
    conditions = ConditionSet(conditions)
    model.validate(conditions)
    rng = np.random.default_rng(cfg.seed)
    names = conditions.perturbable_names()
    x0 = {k: c.value for k, c in conditions.items()}
    masks = {k: conditions[k].perturb_mask for k in names}
    y_default = generate(model, x0).data
    objective = _Objective(cfg.loss, y_default, embedder)

    x_cur = dict(x0)
    for k in names:
        x_cur[k] = init_perturbation(x0[k], cfg.delta, rng, cfg.domain, masks[k])
    step_sizes, update = make_updater(names, rng)

    trace = AttackTrace(default_output=y_default)
    for i in range(1, cfg.steps + 1):
        leaves = {k: Tensor(v) for k, v in x_cur.items()}
        loss = objective(model.forward(leaves))
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericError(f"non-finite loss at step {i}", step=i)
        grads = ad.grad(loss, [leaves[k] for k in names]) if names else []
        # all gradients are taken at the snapshot X_i before any update
        x_next = dict(x_cur)
        for k, g in zip(names, grads):
            if not np.all(np.isfinite(g.data)):
                raise NumericError(f"non-finite gradient for {k!r} at step {i}", step=i)
            x_next[k] = update(i, k, x0[k], x_cur[k], g.data, masks[k])
        trace.step_sizes.append(
            float(np.mean(np.concatenate([np.abs(x_next[k] - x_cur[k]).reshape(-1) for k in names])))
            if names
            else 0.0
        )
        x_cur = x_next
        y_next = generate(model, x_cur).data
        trace.records.append(
            StepRecord(
                step=i,
                loss=loss_value,
                eps=step_sizes(i),
                linf_perturbation={k: float(np.max(np.abs(x_cur[k] - x0[k]))) for k in names},
                l1_output_delta=float(np.abs(y_next - y_default).sum()),
            )
        )
        trace.outputs.append(y_next)
    trace.final_conditions = {k: x_cur[k] for k in names}
    trace.final_loss = objective(Tensor(trace.outputs[-1])).item()
    return trace.outputs[-1], trace


def run_attack(
    model: GeneratorModel,
    conditions: ConditionSet,
    config: AttackConfig,
    embedder: Embedder | None = None,
):
    """Run the multi-step sign attack.  Returns ``(final_output, trace)``."""

    def make_updater(names, rng):
        eps0 = _resolve_epsilons(config, names, rng)

        def eps_at(i):
            return {k: eps0[k] * config.decay ** (i - 1) for k in names}

        def update(i, k, x, x_i, g, mask):
            eps_i = eps0[k] * config.decay ** (i - 1)
            if eps_i == 0.0:
                return x_i
            if config.truncation == "noise_trunc":
                return attack_step_noise_trunc(x, x_i, g, eps_i, config.c_min, config.c_max, config.domain, mask)
            return attack_step_sample_clip(x_i, g, eps_i, *config.domain, mask=mask)

        return eps_at, update

    return _drive(model, conditions, config, embedder, make_updater)


def random_perturbation(conditions: ConditionSet, budget: float, rng, domain=(0.0, 1.0)) -> ConditionSet:
    """Perturb each perturbable condition by i.i.d. uniform noise in ``[-budget, budget]``."""
    out = ConditionSet()
    for k, c in conditions.items():
        if c.perturbable:
            noise = rng.uniform(-budget, budget, size=c.value.shape)
            if c.perturb_mask is not None:
                noise = noise * c.perturb_mask
            value = np.clip(c.value + noise, *domain)
            out[k] = Condition(value, True, c.perturb_mask)
        else:
            out[k] = c
    return out


def with_seed(config, seed: int):
    return dataclasses.replace(config, seed=seed)
