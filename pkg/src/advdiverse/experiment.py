"""JSON-configured, seeded experiment runner.

An experiment runs ``samples`` attack jobs with seeds ``seed + k`` and
writes, under ``out_dir``::

    config.json          the full config, defaults included
    default.pfm/.pgm     the unperturbed output
    samples/sample_KKK.pfm/.pgm
    traces/trace_KKK.csv
    grid.pgm             default output followed by all samples
    report.json          diversity report

Everything is a function of the config, so re-running produces
byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import AttackConfig, LossSpec, run_attack
from .baseline import AdamConfig, run_optimizer_attack
from .errors import AdvDiverseError, ConfigError
from .imageio import contact_sheet, load_image, save_image
from .metrics import diversity_report
from .models import Condition, ConditionSet, ToyEmbedder, build_model, generate, load_reference_embedding

LOSS_NAMES = {"l1": "untargeted_l1", "var": "untargeted_var", "directional": "targeted_directional"}
TRUNC_NAMES = {"noise": "noise_trunc", "sample": "sample_clip"}


@dataclass
class ExperimentConfig:
    model: str = "diffusion_fill"
    model_params: dict = field(default_factory=dict)
    # name -> {"path": str, "perturbable": bool, "perturb_mask": str | None};
    # None uses the model's built-in demo conditions
    conditions: dict | None = None
    method: str = "sign"
    steps: int = 10
    epsilon: list = field(default_factory=lambda: [0.01, 0.01])
    decay: float = 0.95
    delta: float = 1e-4
    c_min: float = -0.09
    c_max: float = 0.09
    truncation: str = "noise"
    domain: list = field(default_factory=lambda: [0.0, 1.0])
    loss: str = "l1"
    ref_embedding: str | None = None
    src_embedding: str | None = None
    ref_image: str | None = None
    embedder: dict = field(default_factory=lambda: {"seed": 7, "dim": 16, "hidden": 8})
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    out_dir: str = "out"
    samples: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.method not in ("sign", "adam"):
            raise ConfigError(f"method must be 'sign' or 'adam', got {self.method!r}")
        if self.loss not in LOSS_NAMES:
            raise ConfigError(f"loss must be one of {sorted(LOSS_NAMES)}")
        if self.truncation not in TRUNC_NAMES:
            raise ConfigError(f"truncation must be one of {sorted(TRUNC_NAMES)}")
        self.epsilon = [float(e) for e in (self.epsilon if isinstance(self.epsilon, (list, tuple)) else [self.epsilon] * 2)]
        if len(self.epsilon) != 2:
            raise ConfigError("epsilon must be a value or a [lo, hi] pair")
        self.domain = [float(d) for d in self.domain]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    # -- builders ----------------------------------------------------------

    def build_model(self):
        return build_model(self.model, **self.model_params)

    def build_conditions(self, model) -> ConditionSet:
        if self.conditions is None:
            return model.default_conditions()
        out = ConditionSet()
        for spec in model.condition_schema:
            entry = self.conditions.get(spec.name)
            if entry is None:
                raise ConfigError(f"missing condition {spec.name!r}")
            value = load_image(entry["path"])
            mask = entry.get("perturb_mask")
            out[spec.name] = Condition(
                value,
                perturbable=bool(entry.get("perturbable", spec.role != "mask")),
                perturb_mask=None if mask is None else load_image(mask),
            )
        return out

    def build_embedder(self, channels: int = 1):
        return ToyEmbedder(channels=channels, **self.embedder)

    def build_loss(self, embedder) -> LossSpec:
        variant = LOSS_NAMES[self.loss]
        if variant != "targeted_directional":
            return LossSpec(variant)
        if self.ref_image is not None:
            return LossSpec(variant, reference_image=load_image(self.ref_image))
        if self.ref_embedding is None:
            raise ConfigError("directional loss needs ref_embedding or ref_image")
        e_ref = load_reference_embedding(self.ref_embedding, embedder.dim)
        e_src = None if self.src_embedding is None else load_reference_embedding(self.src_embedding, embedder.dim)
        return LossSpec(variant, embedding_pair=(e_ref, e_src))

    def attack_config(self, loss: LossSpec, seed: int):
        common = dict(
            steps=self.steps,
            delta=self.delta,
            c_min=self.c_min,
            c_max=self.c_max,
            truncation=TRUNC_NAMES[self.truncation],
            loss=loss,
            seed=seed,
            domain=tuple(self.domain),
        )
        if self.method == "adam":
            return AdamConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps, **common)
        lo, hi = self.epsilon
        return AttackConfig(epsilon0=lo if lo == hi else (lo, hi), decay=self.decay, **common)


def _channels(image) -> int:
    return image.shape[0] if image.ndim == 3 else 1


class Job:
    """Everything needed to run seeded attack jobs for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = cfg.build_model()
        self.conditions = cfg.build_conditions(self.model)
        self.default = generate(self.model, self.conditions).data
        self.embedder = cfg.build_embedder(_channels(self.default))
        self.loss = cfg.build_loss(self.embedder)

    def run(self, index: int, method: str | None = None):
        cfg = self.cfg if method is None else dataclasses.replace(self.cfg, method=method)
        attack_cfg = cfg.attack_config(self.loss, cfg.seed + index)
        runner = run_optimizer_attack if cfg.method == "adam" else run_attack
        embedder = self.embedder if self.loss.targeted else None
        return runner(self.model, self.conditions, attack_cfg, embedder)


def _image_ext(arr) -> str:
    return ".ppm" if arr.ndim == 3 else ".pgm"


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, stderr=None) -> int:
    """Run all jobs and write the output tree.  Returns a process exit code."""
    stderr = stderr or sys.stderr
    stage = "setup"
    try:
        job = Job(cfg)
        out = Path(cfg.out_dir)
        (out / "samples").mkdir(parents=True, exist_ok=True)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
        ext = _image_ext(job.default)
        save_image(job.default, out / "default.pfm")
        save_image(job.default, out / f"default{ext}")

        samples = []
        for k in range(cfg.samples):
            stage = f"attack job {k}"
            sample, trace = job.run(k)
            samples.append(sample)
            stage = f"writing job {k}"
            save_image(sample, out / "samples" / f"sample_{k:03d}.pfm")
            save_image(sample, out / "samples" / f"sample_{k:03d}{ext}")
            (out / "traces" / f"trace_{k:03d}.csv").write_text(trace.to_csv(), encoding="utf-8")

        stage = "report"
        save_image(contact_sheet([job.default, *samples]), out / f"grid{ext}")
        if len(samples) >= 2:
            report = diversity_report(samples, job.embedder).to_dict()
        else:
            report = {"samples": len(samples), "note": "pairwise metrics need at least two samples"}
        write_json(out / "report.json", report)
    except (AdvDiverseError, OSError, KeyError, ValueError) as exc:
        print(f"error during {stage}: {exc}", file=stderr)
        return 1
    return 0
