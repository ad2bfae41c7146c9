import numpy as np
import pytest

from kdsr.codebook import (
    Codebook,
    QuantizerKind,
    assign_code,
    assign_codes,
    fit_codebook_kmeans,
    fit_codebook_vq,
)
from kdsr.errors import ArgumentError, DimensionError


def test_assign_code_matches_exhaustive_argmin():
    rng = np.random.default_rng(5)
    codewords = rng.normal(size=(16, 4))
    cb = Codebook(codewords, QuantizerKind.VQ, np.zeros(16, dtype=np.int64))
    for _ in range(1000):
        v = rng.normal(size=4)
        brute = min(range(16), key=lambda c: (float(((codewords[c] - v) ** 2).sum()), c))
        assert assign_code(cb, v) == brute


def test_ties_go_to_lowest_index():
    codewords = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert assign_codes(codewords, np.array([[1.0, 0.0]]))[0] == 0
    # Equidistant from codes 0 and 1.
    assert assign_codes(codewords, np.array([[0.5, 0.5]]))[0] == 0


def test_assign_codes_checks_width():
    with pytest.raises(DimensionError):
        assign_codes(np.zeros((3, 2)), np.zeros((1, 3)))


def test_codebook_needs_two_finite_codewords():
    with pytest.raises(ArgumentError):
        Codebook(np.zeros((1, 2)), QuantizerKind.VQ, np.zeros(1, dtype=np.int64))
    with pytest.raises(ArgumentError):
        Codebook(np.array([[0.0], [np.nan]]), QuantizerKind.VQ, np.zeros(2, dtype=np.int64))


@pytest.mark.parametrize("seed", range(50))
def test_lloyd_error_never_increases(seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(120, 3))
    cb = fit_codebook_kmeans(data, 6, 30, rng)
    for before, after in zip(cb.errors, cb.errors[1:]):
        assert after <= before + 1e-12
    assert cb.usage.sum() == len(data)
    assert cb.kind is QuantizerKind.KMEANS


def test_kmeans_reaches_zero_error_on_repeated_points():
    """Even when two starting centroids coincide, every cluster ends on its own point."""
    points = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    data = np.repeat(points, 10, axis=0)
    cb = fit_codebook_kmeans(data, 3, 50, np.random.default_rng(0))
    assert cb.errors[-1] == pytest.approx(0.0, abs=1e-12)
    assert sorted(cb.usage.tolist()) == [10, 10, 10]


def test_kmeans_finds_two_separated_clusters():
    rng = np.random.default_rng(6)
    near = rng.normal(0.0, 0.3, size=(20, 2))
    far = rng.normal(0.0, 0.3, size=(20, 2)) + 10.0
    cb = fit_codebook_kmeans(np.concatenate([near, far]), 2, 20, np.random.default_rng(0))
    centroids = cb.codewords[np.argsort(cb.codewords[:, 0])]
    np.testing.assert_allclose(centroids[0], near.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(centroids[1], far.mean(axis=0), atol=1e-12)
    assert sorted(cb.usage.tolist()) == [20, 20]


def test_kmeans_needs_enough_vectors():
    with pytest.raises(ArgumentError):
        fit_codebook_kmeans(np.zeros((3, 2)), 4, 10, np.random.default_rng(0))
    with pytest.raises(ArgumentError):
        fit_codebook_kmeans(np.zeros((3, 2)), 1, 10, np.random.default_rng(0))


def test_vq_usage_counts_every_vector():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(200, 4))
    cb = fit_codebook_vq(data, 8, 3, 0.1, rng)
    assert cb.kind is QuantizerKind.VQ
    assert cb.codewords.shape == (8, 4)
    assert cb.usage.sum() == len(data)
    np.testing.assert_array_equal(
        cb.usage, np.bincount(assign_codes(cb.codewords, data), minlength=8)
    )


def test_vq_is_deterministic_for_a_seed():
    data = np.random.default_rng(3).normal(size=(50, 2))
    a = fit_codebook_vq(data, 4, 2, 0.2, np.random.default_rng(9))
    b = fit_codebook_vq(data, 4, 2, 0.2, np.random.default_rng(9))
    np.testing.assert_array_equal(a.codewords, b.codewords)


def test_vq_full_rate_lands_on_the_input():
    v = np.array([3.0, -1.5, 0.25])
    cb = fit_codebook_vq(v[None, :], 2, 1, 1.0, np.random.default_rng(4))
    np.testing.assert_array_equal(cb.codewords[assign_code(cb, v)], v)


def test_vq_converges_on_a_repeated_vector():
    v = np.array([0.5, -0.25, 1.0])
    cb = fit_codebook_vq(np.tile(v, (60, 1)), 3, 3, 0.3, np.random.default_rng(1))
    assert np.abs(cb.codewords - v).max() < 1e-6


def test_vq_rejects_bad_rate():
    with pytest.raises(ArgumentError):
        fit_codebook_vq(np.zeros((4, 2)), 2, 1, 0.0, np.random.default_rng(0))


def test_histogram_total_matches_usage():
    usage = np.array([3, 0, 5], dtype=np.int64)
    cb = Codebook(np.eye(3), QuantizerKind.KMEANS, usage)
    lines = cb.histogram().splitlines()
    assert len(lines) == 5
    assert lines[-1].split() == ["total", "8"]
    assert lines[2].split() == ["1", "0"]
