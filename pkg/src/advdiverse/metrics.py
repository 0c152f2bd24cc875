"""Diversity and quality metrics over sets of generated images.

``pairwise_l1`` reports on a 0-255 scale (per-pixel mean absolute
difference times 255).  The embedding distance is an LPIPS stand-in built
on a toy embedder and the patch Frechet distance is a diagonal-covariance
proxy, not FID; numbers from these are not comparable with published
LPIPS/FID values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .autodiff import as_tensor
from .errors import ConfigError, DimensionError


@dataclass
class DiversityReport:
    k: int
    mean_l1_255: float | None = None
    mean_embedding_distance: float | None = None
    l1_matrix: list = field(default_factory=list)
    embedding_matrix: list = field(default_factory=list)

    def to_dict(self):
        return {
            "samples": self.k,
            "mean_pairwise_l1_0_255": self.mean_l1_255,
            "mean_pairwise_embedding_distance_lpips_standin": self.mean_embedding_distance,
            "l1_matrix": self.l1_matrix,
            "embedding_matrix": self.embedding_matrix,
        }


def _arrays(samples):
    arrs = [np.asarray(as_tensor(s).data) for s in samples]
    if len(arrs) < 2:
        raise ConfigError("pairwise metrics need at least two samples")
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DimensionError("samples must share one shape")
    return arrs


def _pairwise(values, dist):
    k = len(values)
    mat = np.zeros((k, k))
    for i, j in combinations(range(k), 2):
        mat[i, j] = mat[j, i] = dist(values[i], values[j])
    pairs = [mat[i, j] for i, j in combinations(range(k), 2)]
    return mat, float(np.mean(pairs))


def pairwise_l1(samples) -> DiversityReport:
    arrs = _arrays(samples)
    mat, mean = _pairwise(arrs, lambda a, b: float(np.mean(np.abs(a - b)) * 255.0))
    return DiversityReport(len(arrs), mean_l1_255=mean, l1_matrix=mat.tolist())


def pairwise_embedding_distance(samples, embedder) -> DiversityReport:
    arrs = _arrays(samples)
    embs = [embedder.embed(a).data for a in arrs]
    mat, mean = _pairwise(embs, lambda a, b: float(np.linalg.norm(a - b)))
    return DiversityReport(len(arrs), mean_embedding_distance=mean, embedding_matrix=mat.tolist())


def diversity_report(samples, embedder=None) -> DiversityReport:
    report = pairwise_l1(samples)
    if embedder is not None:
        emb = pairwise_embedding_distance(samples, embedder)
        report.mean_embedding_distance = emb.mean_embedding_distance
        report.embedding_matrix = emb.embedding_matrix
    return report


def _patches(img: np.ndarray, patch: int) -> np.ndarray:
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    if patch < 1 or patch > min(h, w):
        raise ConfigError(f"patch size {patch} does not fit a {h}x{w} image")
    rows, cols = h // patch, w // patch
    tiles = img[:, : rows * patch, : cols * patch].reshape(c, rows, patch, cols, patch)
    return tiles.transpose(1, 3, 0, 2, 4).reshape(rows * cols, c * patch * patch)


def _patch_stats(images, patch):
    if len(images) == 0:
        raise ConfigError("patch Frechet distance needs nonempty sets")
    feats = np.concatenate([_patches(np.asarray(as_tensor(im).data), patch) for im in images])
    return feats.mean(axis=0), feats.var(axis=0)


def patch_frechet_distance(set_a, set_b, patch: int = 4) -> float:
    """Frechet distance between diagonal Gaussians fit to flattened patches.

    ``|mu_a - mu_b|^2 + sum(var_a + var_b - 2 sqrt(var_a var_b))``
    """
    mu_a, var_a = _patch_stats(set_a, patch)
    mu_b, var_b = _patch_stats(set_b, patch)
    if mu_a.shape != mu_b.shape:
        raise DimensionError("sets have different channel counts")
    return float(np.sum((mu_a - mu_b) ** 2) + np.sum(var_a + var_b - 2.0 * np.sqrt(var_a * var_b)))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for [0, 1] images; ``inf`` when identical."""
    a, b = np.asarray(as_tensor(a).data), np.asarray(as_tensor(b).data)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
