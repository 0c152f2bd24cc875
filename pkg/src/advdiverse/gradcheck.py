"""Randomized autodiff-vs-finite-difference verification suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

KINK_MARGIN = 1e-4


@dataclass
class GradcheckResult:
    n_graphs: int
    max_rel_error: float
    errors: list = field(default_factory=list)
    descriptions: list = field(default_factory=list)
    resampled: int = 0

    def passed(self, tol=1e-6):
        return self.max_rel_error <= tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error ``|a - n|_inf / |n|_inf`` (floored at 1e-8)."""
    diff = np.max(np.abs(analytic - numeric))
    return float(diff / max(np.max(np.abs(numeric)), 1e-8))


class _RandomGraph:
    """A randomly composed scalar function of one input tensor.

    Records the arguments passed to abs-style ops during each evaluation so
    samples too close to a kink can be rejected.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.kink_args: list[np.ndarray] = []
        if rng.random() < 0.5:
            h = int(rng.integers(3, 9))
            w = int(rng.integers(3, min(8, 64 // h) + 1))
            self.shape = (h, w)
        else:
            self.shape = (int(rng.integers(2, 65)),)
        self.steps = [self._pick_transform() for _ in range(int(rng.integers(1, 5)))]
        self.head = self._pick_head()
        self.desc = "->".join([s[0] for s in self.steps] + [self.head[0]])

    def _const(self, shape=None):
        return ad.Tensor(self.rng.normal(size=shape or self.shape))

    def _pick_transform(self):
        rng = self.rng
        kinds = ["add", "sub", "mul", "square", "tanh", "scale", "abs"]
        if len(self.shape) == 2:
            kinds.append("conv")
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind in ("add", "sub", "mul"):
            c = self._const()
            fn = {"add": ad.add, "sub": ad.sub, "mul": ad.mul}[kind]
            return kind, lambda t: fn(t, c)
        if kind == "square":
            return kind, lambda t: t * t
        if kind == "tanh":
            return kind, ad.tanh
        if kind == "scale":
            s = ad.Tensor([rng.normal()])
            return kind, lambda t: s * t
        if kind == "abs":
            return kind, self._abs
        k = ad.Tensor(rng.normal(size=(3, 3)) / 3.0)
        pad = ["reflect", "zero"][int(rng.integers(2))]
        return f"conv[{pad}]", lambda t: ad.conv2d(t, k, padding=pad)

    def _abs(self, t):
        self.kink_args.append(t.data)
        return ad.absolute(t)

    def _pick_head(self):
        rng = self.rng
        n = int(np.prod(self.shape))
        kinds = ["mean", "sum_abs", "variance", "dot", "l2_norm", "cosine", "mix"]
        kind = kinds[int(rng.integers(len(kinds)))]
        c = ad.Tensor(rng.normal(size=n))

        def flat(t):
            return ad.reshape(t, (n,))

        if kind == "mean":
            return kind, ad.mean
        if kind == "sum_abs":
            return kind, self._sum_abs
        if kind == "variance":
            return kind, ad.variance
        if kind == "dot":
            return kind, lambda t: ad.dot(flat(t), c)
        if kind == "l2_norm":
            return kind, lambda t: ad.l2_norm(flat(t))
        if kind == "cosine":
            return kind, lambda t: ad.cosine_similarity(flat(t), c)
        a, b = rng.normal(size=2)
        return kind, lambda t: a * ad.variance(t) + b * ad.mean(t)

    def _sum_abs(self, t):
        self.kink_args.append(t.data)
        return ad.sum_abs(t)

    def __call__(self, x):
        for _, fn in self.steps:
            x = fn(x)
        return self.head[1](x)

    def near_kink(self, x) -> bool:
        self.kink_args = []
        self(x)
        return any(np.min(np.abs(a)) < KINK_MARGIN for a in self.kink_args)


def run_gradcheck(n_graphs: int = 100, seed: int = 0, h: float = 1e-5) -> GradcheckResult:
    """Compare :func:`autodiff.grad` with central differences on random graphs."""
    rng = np.random.default_rng(seed)
    errors, descs = [], []
    resampled = 0
    while len(errors) < n_graphs:
        graph = _RandomGraph(rng)
        x = ad.Tensor(rng.normal(size=graph.shape))
        if graph.near_kink(x):
            resampled += 1
            continue
        analytic = ad.grad(graph(x), x).data
        numeric = ad.finite_diff_grad(graph, x, h).data
        errors.append(relative_error(analytic, numeric))
        descs.append(graph.desc)
    return GradcheckResult(len(errors), max(errors), errors, descs, resampled)
