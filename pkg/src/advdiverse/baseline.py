"""Optimizer baseline: ascend the attack loss with Adam on the conditions.

Shares initialisation, truncation, domain clamp, loss and trace format
with :func:`advdiverse.attack.run_attack`; only the update rule differs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .attack import AttackConfig, BaseAttackConfig, _drive, _resolve_epsilons, run_attack, truncate
from .errors import ConfigError


@dataclass(frozen=True)
class AdamConfig(BaseAttackConfig):
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        super().__post_init__()
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.lr < 0 or self.adam_eps <= 0:
            raise ConfigError("need lr >= 0 and adam_eps > 0")


def adam_step(x, x_i, m, v, grad, t: int, cfg: AdamConfig, mask=None):
    """One bias-corrected Adam ascent step, then the attack's truncation.

    Returns ``(x_next, m, v)``.
    """
    if t < 1:
        raise ConfigError("Adam step index starts at 1")
    grad = np.asarray(grad, dtype=np.float64)
    m = cfg.beta1 * m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    proposal = x_i + cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return truncate(np.asarray(x), proposal, np.asarray(x_i), cfg, mask), m, v


def run_optimizer_attack(model, conditions, cfg: AdamConfig, embedder=None):
    """Adam counterpart of :func:`run_attack`; the trace records ``lr`` as eps."""

    def make_updater(names, rng):
        moments = {}

        def update(i, k, x, x_i, g, mask):
            m, v = moments.get(k, (np.zeros_like(g), np.zeros_like(g)))
            x_next, m, v = adam_step(x, x_i, m, v, g, i, cfg, mask)
            moments[k] = (m, v)
            return x_next

        return (lambda i: {k: cfg.lr for k in names}), update

    return _drive(model, conditions, cfg, embedder, make_updater)


@dataclass
class DivergenceReport:
    method: str
    trials: int
    distances: list = field(default_factory=list)
    mean_distance: float = 0.0
    metric: str = "pairwise"

    def to_dict(self):
        return dataclasses.asdict(self)


def _final_perturbation(trace, conditions):
    parts = [trace.final_conditions[k] - conditions[k].value for k in trace.final_conditions]
    return np.concatenate([p.reshape(-1) for p in parts]) if parts else np.zeros(0)


def path_divergence_experiment(
    model,
    conditions,
    method: str,
    trials: int = 5,
    delta: float = 1e-7,
    cfg=None,
    seeds=None,
    metric: str = "pairwise",
    embedder=None,
) -> DivergenceReport:
    """How far apart do attack paths end up from different tiny inits?

    Runs ``method`` ("sign" or "adam") ``trials`` times, differing only in
    the seed of the N(0, delta^2) initial noise, and reports the mean
    absolute difference between each pair of final perturbations
    ``x_final - x``.  With ``metric="consecutive"`` it instead reports, for
    every trial and step, the mean absolute step ``x_{i+1} - x_i``.
    """
    if trials < 2:
        raise ConfigError("need at least two trials")
    if method not in ("sign", "adam"):
        raise ConfigError(f"unknown method {method!r}")
    if metric not in ("pairwise", "consecutive"):
        raise ConfigError(f"unknown metric {metric!r}")
    if cfg is None:
        cfg = AttackConfig() if method == "sign" else AdamConfig()
    if method == "sign" and not isinstance(cfg, AttackConfig):
        raise ConfigError("sign method needs an AttackConfig")
    if method == "adam" and not isinstance(cfg, AdamConfig):
        raise ConfigError("adam method needs an AdamConfig")
    if seeds is None:
        seeds = [cfg.seed + t for t in range(trials)]
    if len(seeds) != trials:
        raise ConfigError("need one seed per trial")
    if method == "sign":
        # step sizes are drawn once so that only the initial noise varies
        names = [k for k, c in conditions.items() if c.perturbable]
        eps = _resolve_epsilons(cfg, names, np.random.default_rng(cfg.seed))
        cfg = dataclasses.replace(cfg, epsilon0=eps)
    runner = run_attack if method == "sign" else run_optimizer_attack

    finals, steps = [], []
    for s in seeds:
        trial_cfg = dataclasses.replace(cfg, seed=int(s), delta=delta)
        _, trace = runner(model, conditions, trial_cfg, embedder)
        finals.append(_final_perturbation(trace, conditions))
        steps.append(trace.step_sizes)

    if metric == "pairwise":
        distances = [float(np.mean(np.abs(a - b))) for a, b in combinations(finals, 2)]
    else:
        distances = [d for per_trial in steps for d in per_trial]
    return DivergenceReport(method, trials, distances, float(np.mean(distances)), metric)
