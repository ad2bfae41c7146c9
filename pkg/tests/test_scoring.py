import numpy as np
import pytest

from kdsr.autograd import Tensor
from kdsr.errors import ConfigError, DegenerateVectorError, DimensionError
from kdsr.scoring import ScoringKind, holistic_score, score_tensors, segment_scores


@pytest.mark.parametrize(
    "kind, expected",
    [
        (ScoringKind.COSINE, 0.0),
        (ScoringKind.DOT, 0.0),
        (ScoringKind.EUCLIDEAN, -np.sqrt(2.0)),
        (ScoringKind.MANHATTAN, -2.0),
    ],
)
def test_holistic_score_orthogonal_units(kind, expected):
    assert holistic_score(kind, np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(
        expected, abs=1e-12
    )


def test_distances_are_negated():
    u = np.array([0.0, 0.0])
    v = np.array([3.0, 4.0])
    assert holistic_score(ScoringKind.EUCLIDEAN, u, v) == pytest.approx(-5.0)
    assert holistic_score(ScoringKind.MANHATTAN, u, v) == pytest.approx(-7.0)
    assert holistic_score(ScoringKind.DOT, v, v) == pytest.approx(25.0)
    assert holistic_score(ScoringKind.COSINE, v, 2 * v) == pytest.approx(1.0)


def test_cosine_of_zero_vector_fails():
    with pytest.raises(DegenerateVectorError):
        holistic_score(ScoringKind.COSINE, np.zeros(3), np.ones(3))


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        holistic_score(ScoringKind.DOT, np.ones(3), np.ones(4))


def test_segment_scores():
    u = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 1.0])
    v = np.array([1.0, 0.0, 0.0, 0.0, 2.0, 2.0])
    scores = segment_scores(ScoringKind.COSINE, u, v, 3)
    # The middle segment is zero on both sides and scores 0.
    np.testing.assert_allclose(scores, [1.0, 0.0, 1.0])
    np.testing.assert_allclose(segment_scores(ScoringKind.DOT, u, v, 3), [1.0, 0.0, 4.0])
    with pytest.raises(ConfigError):
        segment_scores(ScoringKind.DOT, u, v, 4)


def test_segment_scores_batched_shape():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(7, 8))
    v = rng.normal(size=(7, 8))
    assert segment_scores(ScoringKind.EUCLIDEAN, u, v, 4).shape == (7, 4)
    # One segment is the holistic score.
    np.testing.assert_allclose(
        segment_scores(ScoringKind.COSINE, u, v, 1)[:, 0],
        holistic_score(ScoringKind.COSINE, u, v),
    )


@pytest.mark.parametrize("kind", list(ScoringKind))
def test_tensor_scores_match_array_scores(kind):
    rng = np.random.default_rng(1)
    u = rng.normal(size=(5, 4))
    v = rng.normal(size=(5, 4))
    np.testing.assert_allclose(
        score_tensors(kind, Tensor(u), Tensor(v)).data, holistic_score(kind, u, v), atol=1e-12
    )
