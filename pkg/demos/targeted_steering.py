"""Steering a generator towards a reference image.

Instead of pushing the output anywhere, the targeted loss asks the change
in the output's embedding to point the same way as the change from the
default output to a reference.  The cosine between those two directions
is printed per step; it climbs as the attack proceeds.

Run:  python3 demos/targeted_steering.py
"""

import numpy as np

from advdiverse import AttackConfig, ConvGenerator, LossSpec, ToyEmbedder, run_attack


def main():
    model = ConvGenerator((16, 16), seed=42)
    conditions = model.default_conditions()
    reference = np.random.default_rng(2024).random((16, 16))
    embedder = ToyEmbedder()

    loss = LossSpec("targeted_directional", reference_image=reference)
    cfg = AttackConfig(steps=10, epsilon0=0.02, loss=loss, seed=0)
    _, trace = run_attack(model, conditions, cfg, embedder)

    # the step-1 value is measured right after the tiny random init, so it is
    # close to a coin flip; later steps follow the gradient
    for rec in trace.records:
        print(f"step {rec.step:2d}  cosine {rec.loss:+.4f}  eps {rec.eps['image']:.4f}")
    print(f"final    cosine {trace.final_loss:+.4f}")


if __name__ == "__main__":
    main()
