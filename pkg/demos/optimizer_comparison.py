"""Why a sign step and not Adam?

Both methods ascend the same loss under the same budget.  The sign step
moves every pixel by the full step size, so tiny differences in the
random start flip signs and send runs down different paths.  Adam's
normalised steps shrink where the gradient is consistent, and the runs
stay close together.  Path divergence measures this: the mean distance
between final perturbations over runs that differ only in their 1e-7
initial noise.

Run:  python3 demos/optimizer_comparison.py
"""

from advdiverse import AdamConfig, AttackConfig, DiffusionFillInpainter, LossSpec
from advdiverse.baseline import path_divergence_experiment


def main():
    model = DiffusionFillInpainter((32, 32))
    conditions = model.default_conditions()
    for variant in ("untargeted_var", "untargeted_l1"):
        loss = LossSpec(variant)
        sign = path_divergence_experiment(model, conditions, "sign", 5, 1e-7, AttackConfig(loss=loss))
        adam = path_divergence_experiment(model, conditions, "adam", 5, 1e-7, AdamConfig(loss=loss))
        print(f"{variant:15s} sign {sign.mean_distance:.3e}  adam {adam.mean_distance:.3e}  "
              f"ratio {sign.mean_distance / adam.mean_distance:.1f}")
    # With the L1 loss the gradient at the start is driven entirely by the
    # initial noise, and Adam's first step equals lr * sign(g); both methods
    # then inherit the same sensitivity and the ratio drops to about 1.


if __name__ == "__main__":
    main()
