"""Trusting the gradients.

Every attack step relies on reverse-mode gradients through the generator.
This script compares them with central finite differences on randomly
composed graphs and on the two toy generators.

Run:  python3 demos/gradient_check.py
"""

import numpy as np

from advdiverse import autodiff as ad
from advdiverse import ConvGenerator, DiffusionFillInpainter
from advdiverse.gradcheck import run_gradcheck


def check_model(name, model):
    conditions = model.default_conditions()
    key = model.condition_schema[0].name
    small = {k: c.value for k, c in conditions.items()}
    x = ad.Tensor(small[key])

    def f(t):
        return ad.variance(model.forward({**small, key: t}))

    analytic = ad.grad(f(x), x).data
    numeric = ad.finite_diff_grad(f, x).data
    err = np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric))
    print(f"{name:12s} relative error {err:.2e}")


def main():
    result = run_gradcheck(n_graphs=100, seed=0)
    print(f"random graphs: {result.n_graphs}, max relative error {result.max_rel_error:.2e}, "
          f"{result.resampled} points resampled away from |x| kinks")
    check_model("inpainter", DiffusionFillInpainter((8, 8), k_iters=10))
    check_model("conv", ConvGenerator((8, 8)))


if __name__ == "__main__":
    main()
