"""Command-line entry point: ``advdiverse <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import AdvDiverseError
from .experiment import ExperimentConfig, Job, run_experiment, write_json
from .gradcheck import run_gradcheck
from .imageio import load_image
from .metrics import diversity_report, patch_frechet_distance, psnr

GRADCHECK_TOL = 1e-6


def _epsilon(text: str):
    lo, _, hi = text.partition(":")
    return [float(lo), float(hi or lo)]


def _add_experiment_flags(p: argparse.ArgumentParser, loss_default=None, delta_default=None):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--model", help="model id (diffusion_fill, conv, constant)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--epsilon", type=_epsilon, metavar="LO[:HI]")
    p.add_argument("--cmin", type=float, dest="c_min")
    p.add_argument("--cmax", type=float, dest="c_max")
    p.add_argument("--delta", type=float, default=delta_default)
    p.add_argument("--truncation", choices=["noise", "sample"])
    p.add_argument("--loss", choices=["l1", "var", "directional"], default=loss_default)
    p.add_argument("--ref-embedding", dest="ref_embedding")
    p.add_argument("--src-embedding", dest="src_embedding")
    p.add_argument("--ref-image", dest="ref_image")
    p.add_argument("--lr", type=float)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--samples", type=int)


_OVERRIDES = (
    "model", "seed", "steps", "epsilon", "c_min", "c_max", "delta", "truncation",
    "loss", "ref_embedding", "src_embedding", "ref_image", "lr", "out_dir", "samples",
)


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    for key in _OVERRIDES:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advdiverse",
        description="Diverse and steered generation by attacking the conditions of a deterministic generator.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="{attack,compare-optimizer,metrics,gradcheck,divergence}")

    p = sub.add_parser("attack", help="run seeded attack jobs and write samples, traces and a report")
    _add_experiment_flags(p)

    p = sub.add_parser("compare-optimizer", help="sign attack vs Adam baseline, per-step loss and patch-FD")
    _add_experiment_flags(p)

    p = sub.add_parser("metrics", help="diversity report over existing images")
    p.add_argument("images", nargs="+", type=Path)
    p.add_argument("--reference", type=Path, help="reference image for PSNR and patch-FD")
    p.add_argument("--patch", type=int, default=4)
    p.add_argument("--embedder-seed", type=int, default=7)
    p.add_argument("--out", type=Path, help="write the report JSON here")

    p = sub.add_parser("gradcheck", help="autodiff vs finite differences on random graphs")
    p.add_argument("--graphs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--out", type=Path, help="write the result JSON here")

    p = sub.add_parser("divergence", help="sensitivity of sign and Adam paths to the initial noise")
    _add_experiment_flags(p, loss_default="var", delta_default=1e-7)
    p.add_argument("--trials", type=int, default=5)
    return parser


def cmd_attack(args) -> int:
    return run_experiment(_config(args))


def cmd_compare(args) -> int:
    cfg = _config(args)
    job = Job(cfg)
    traces = {m: [job.run(k, m)[1] for k in range(cfg.samples)] for m in ("sign", "adam")}
    rows = []
    for i in range(cfg.steps):
        row = {"step": i + 1}
        for m, ts in traces.items():
            row[f"{m}_loss"] = float(np.mean([t.records[i].loss for t in ts]))
            row[f"{m}_patch_fd"] = patch_frechet_distance([t.outputs[i] for t in ts], [job.default])
        rows.append(row)
    header = ["step", "sign_loss", "adam_loss", "sign_patch_fd", "adam_patch_fd"]
    lines = [",".join(header)] + [",".join(repr(r[h]) for h in header) for r in rows]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    (out / "comparison.csv").write_text(text, encoding="utf-8")
    for m, ts in traces.items():
        for k, t in enumerate(ts):
            (out / f"trace_{m}_{k:03d}.csv").write_text(t.to_csv(), encoding="utf-8")
    return 0


def cmd_metrics(args) -> int:
    from .models import ToyEmbedder

    images = [load_image(p) for p in args.images]
    channels = images[0].shape[0] if images[0].ndim == 3 else 1
    report = diversity_report(images, ToyEmbedder(channels=channels, seed=args.embedder_seed)).to_dict()
    if args.reference is not None:
        ref = load_image(args.reference)
        report["psnr_vs_reference"] = [_finite(psnr(im, ref)) for im in images]
        report["patch_frechet_vs_reference"] = patch_frechet_distance(images, [ref], args.patch)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    print(text, end="")
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    return 0


def _finite(v: float):
    return v if np.isfinite(v) else "inf"


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(args.graphs, args.seed, args.h)
    ok = result.passed(GRADCHECK_TOL)
    print(f"graphs: {result.n_graphs}")
    print(f"max relative error: {result.max_rel_error:.3e}")
    print("PASS" if ok else "FAIL")
    if args.out:
        write_json(args.out, {"graphs": result.n_graphs, "max_rel_error": result.max_rel_error, "passed": ok})
    return 0 if ok else 1


def cmd_divergence(args) -> int:
    from .baseline import path_divergence_experiment

    cfg = _config(args)
    job = Job(cfg)
    reports = {}
    for method in ("sign", "adam"):
        attack_cfg = dataclasses.replace(cfg, method=method).attack_config(job.loss, cfg.seed)
        reports[method] = path_divergence_experiment(
            job.model, job.conditions, method, args.trials, cfg.delta, attack_cfg,
            embedder=job.embedder if job.loss.targeted else None,
        )
    adam_mean = reports["adam"].mean_distance
    ratio = reports["sign"].mean_distance / adam_mean if adam_mean > 0 else float("inf")
    result = {m: r.to_dict() for m, r in reports.items()}
    result["ratio_sign_over_adam"] = _finite(ratio)
    result["config"] = cfg.to_dict()
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    print(text, end="")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "divergence.json").write_text(text, encoding="utf-8")
    return 0


COMMANDS = {
    "attack": cmd_attack,
    "compare-optimizer": cmd_compare,
    "metrics": cmd_metrics,
    "gradcheck": cmd_gradcheck,
    "divergence": cmd_divergence,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (AdvDiverseError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
