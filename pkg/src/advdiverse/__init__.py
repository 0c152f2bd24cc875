"""Diverse and steerable generation from deterministic conditional generators.

Adversarial (sign-gradient) perturbations of a generator's input
conditions make a fixed, pretrained-style model produce varied outputs,
or push its output along a direction in an embedding space, without
touching the model's parameters.
"""

from .attack import (
    AttackConfig,
    AttackTrace,
    LossSpec,
    attack_step_noise_trunc,
    attack_step_sample_clip,
    directional_deltas,
    directional_loss,
    init_perturbation,
    run_attack,
    sample_epsilon,
    untargeted_loss,
)
from .baseline import AdamConfig, DivergenceReport, adam_step, path_divergence_experiment, run_optimizer_attack
from .metrics import DiversityReport, diversity_report, pairwise_embedding_distance, pairwise_l1, patch_frechet_distance, psnr
from .models import (
    Condition,
    ConstantGenerator,
    ConditionSet,
    ConvGenerator,
    DiffusionFillInpainter,
    Embedder,
    GeneratorModel,
    ToyEmbedder,
    diffusion_fill,
    embed,
    generate,
    load_reference_embedding,
)

__version__ = "0.1.0"
