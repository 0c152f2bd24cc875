import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advdiverse.errors import ConfigError, DimensionError
from advdiverse.metrics import (
    diversity_report,
    pairwise_embedding_distance,
    pairwise_l1,
    patch_frechet_distance,
    psnr,
)
from advdiverse.models import ToyEmbedder, embed

images = arrays(np.float64, (6, 6), elements=st.floats(0, 1))


def test_pairwise_l1_identical():
    a = np.random.default_rng(0).random((4, 4))
    assert pairwise_l1([a, a.copy()]).mean_l1_255 == 0.0


def test_pairwise_l1_full_range():
    assert pairwise_l1([np.zeros((3, 3)), np.ones((3, 3))]).mean_l1_255 == 255.0


def test_pairwise_l1_triple_loop_oracle():
    rng = np.random.default_rng(1)
    imgs = [rng.random((4, 4)) for _ in range(3)]
    total, pairs = 0.0, 0
    for i in range(3):
        for j in range(i + 1, 3):
            s = 0.0
            for r in range(4):
                for c in range(4):
                    s += abs(imgs[i][r, c] - imgs[j][r, c])
            total += s / 16 * 255
            pairs += 1
    assert pairwise_l1(imgs).mean_l1_255 == pytest.approx(total / pairs, rel=1e-12)


def test_pairwise_l1_needs_two():
    with pytest.raises(ConfigError):
        pairwise_l1([np.zeros((2, 2))])


def test_pairwise_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        pairwise_l1([np.zeros((2, 2)), np.zeros((3, 3))])


@settings(max_examples=40, deadline=None)
@given(images, images, images)
def test_pairwise_matrices_symmetric_zero_diagonal(a, b, c):
    rep = diversity_report([a, b, c], ToyEmbedder())
    for mat in (np.array(rep.l1_matrix), np.array(rep.embedding_matrix)):
        np.testing.assert_array_equal(mat, mat.T)
        assert not np.diag(mat).any()
        assert mat.min() >= 0.0
    assert np.max(rep.embedding_matrix) <= 2.0 + 1e-12


@settings(max_examples=40, deadline=None)
@given(images, images)
def test_l1_scale_linearity(a, b):
    scaled = pairwise_l1([a, b]).mean_l1_255
    direct = float(np.mean(np.abs(a * 255 - b * 255)))
    assert scaled == pytest.approx(direct, abs=1e-9)


def test_embedding_distance_oracle():
    e = ToyEmbedder()
    rng = np.random.default_rng(2)
    imgs = [rng.random((8, 8)) for _ in range(3)]
    embs = [embed(e, im).data for im in imgs]
    expected = np.mean([np.linalg.norm(embs[i] - embs[j]) for i, j in ((0, 1), (0, 2), (1, 2))])
    assert pairwise_embedding_distance(imgs, e).mean_embedding_distance == pytest.approx(expected, rel=1e-14)


def test_embedding_distance_identical():
    a = np.random.default_rng(3).random((8, 8))
    assert pairwise_embedding_distance([a, a], ToyEmbedder()).mean_embedding_distance == 0.0


def test_report_dict_labels():
    d = diversity_report([np.zeros((4, 4)), np.ones((4, 4))]).to_dict()
    assert d["samples"] == 2
    assert d["mean_pairwise_l1_0_255"] == 255.0
    assert "mean_pairwise_embedding_distance_lpips_standin" in d


def test_patch_fd_identity():
    rng = np.random.default_rng(4)
    a = [rng.random((8, 8)) for _ in range(3)]
    assert patch_frechet_distance(a, a) == 0.0


def test_patch_fd_constant_sets():
    for patch in (2, 4):
        d = patch_frechet_distance([np.zeros((8, 8))] * 2, [np.ones((8, 8))] * 2, patch)
        assert d == pytest.approx(patch * patch, abs=1e-12)
    d = patch_frechet_distance([np.zeros((3, 8, 8))], [np.ones((3, 8, 8))], 4)
    assert d == pytest.approx(48.0, abs=1e-12)


def test_patch_fd_diagonal_formula():
    rng = np.random.default_rng(5)
    a = [rng.random((4, 4)) for _ in range(4)]
    b = [rng.random((4, 4)) ** 2 for _ in range(4)]
    fa = np.stack([im.reshape(-1) for im in a])
    fb = np.stack([im.reshape(-1) for im in b])
    mu_a, mu_b, va, vb = fa.mean(0), fb.mean(0), fa.var(0), fb.var(0)
    expected = np.sum((mu_a - mu_b) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
    assert patch_frechet_distance(a, b, 4) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(images, min_size=1, max_size=3), st.lists(images, min_size=1, max_size=3))
def test_patch_fd_symmetric(a, b):
    assert patch_frechet_distance(a, b, 3) == pytest.approx(patch_frechet_distance(b, a, 3), abs=1e-12)


def test_patch_fd_errors():
    with pytest.raises(ConfigError):
        patch_frechet_distance([], [np.zeros((4, 4))])
    with pytest.raises(ConfigError):
        patch_frechet_distance([np.zeros((4, 4))], [np.zeros((4, 4))], patch=5)


def test_psnr_examples():
    a = np.random.default_rng(6).random((4, 4))
    assert math.isinf(psnr(a, a))
    assert psnr(np.zeros((2, 2)), np.ones((2, 2))) == 0.0
    assert psnr(np.zeros(4), np.full(4, 0.1)) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(DimensionError):
        psnr(np.zeros(3), np.zeros(4))
