"""Diverse inpainting from a deterministic generator.

The diffusion-fill inpainter always returns the same completion for a
given masked image.  Attacking its image condition with different seeds
turns it into a sampler: each run finds a different small perturbation
of the known pixels that pushes the filled hole somewhere new.

Run:  python3 demos/untargeted_inpainting.py [out_dir]
"""

import sys
from pathlib import Path

from advdiverse import AttackConfig, DiffusionFillInpainter, generate, run_attack
from advdiverse.imageio import contact_sheet, save_image
from advdiverse.metrics import diversity_report


def main(out_dir="demo_out/untargeted"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    model = DiffusionFillInpainter((32, 32))
    conditions = model.default_conditions()
    default = generate(model, conditions).data
    print("default output: a smooth harmonic fill of the 16x16 hole")

    samples = []
    for seed in range(5):
        cfg = AttackConfig(steps=10, epsilon0=(0.01, 0.05), seed=seed)
        sample, trace = run_attack(model, conditions, cfg)
        samples.append(sample)
        last = trace.records[-1]
        print(f"seed {seed}: L1 from default {last.l1_output_delta:8.3f}, "
              f"max perturbation {last.linf_perturbation['image']:.4f}")

    report = diversity_report(samples)
    print(f"mean pairwise L1 over {report.k} samples: {report.mean_l1_255:.3f} (0-255 scale)")
    print("without the attack every run returns the default, so that number would be 0")
    save_image(contact_sheet([default, *samples]), out / "grid.pgm")
    print(f"wrote {out / 'grid.pgm'} (default first, then the five samples)")


if __name__ == "__main__":
    main(*sys.argv[1:])
