import numpy as np
import pytest

from kdsr.autograd import ParamGroup, Parameter, Tensor
from kdsr.corpus import Channel
from kdsr.errors import ArgumentError, DimensionError, ItemLookupError, ShapeError
from kdsr.numerics import finite_diff_check
from kdsr.scoring import ScoringKind, holistic_score
from kdsr.student import (
    ChannelHeads,
    EmbeddingBank,
    dissected_logits,
    holistic_predict,
    kd_code_loss,
    kd_soft_loss,
    lookup,
)

ITEMS, DIM, CODES = 10, 6, 4


@pytest.fixture
def rng():
    return np.random.default_rng(21)


@pytest.fixture
def compressed(rng):
    return {channel: rng.normal(size=(ITEMS, DIM)) for channel in Channel}


@pytest.fixture
def pairs():
    return np.array([0, 1, 2, 7, 3]), np.array([4, 5, 9, 8, 6])


def test_bank_copies_compressed_tables(rng, compressed):
    bank = EmbeddingBank(ITEMS, DIM, rng, compressed)
    for channel in Channel:
        np.testing.assert_array_equal(bank.modality[channel].data, compressed[channel])
        assert bank.modality[channel].group is ParamGroup.EMBEDDING
    assert bank.id_table.shape == (ITEMS, DIM)
    assert [p.name for p in bank.parameters()] == ["bank.id", "bank.image", "bank.text"]

    before = compressed[Channel.IMAGE].copy()
    bank.image_table.data += 1.0
    np.testing.assert_array_equal(compressed[Channel.IMAGE], before)


def test_bank_without_modality_is_zero_and_frozen(rng):
    bank = EmbeddingBank(ITEMS, DIM, rng, use_modality=False)
    assert not bank.image_table.trainable
    assert not bank.text_table.trainable
    assert not bank.image_table.data.any()
    assert bank.id_table.trainable


def test_bank_rejects_wrong_shape(rng, compressed):
    compressed[Channel.TEXT] = np.zeros((ITEMS, DIM + 1))
    with pytest.raises(ShapeError):
        EmbeddingBank(ITEMS, DIM, rng, compressed)


def test_lookup_bounds():
    table = Parameter(np.zeros((3, 2)), "t")
    assert lookup(table, np.array([0, 2])).shape == (2, 2)
    with pytest.raises(ItemLookupError):
        lookup(table, np.array([3]))


@pytest.mark.parametrize("kind", list(ScoringKind))
def test_soft_loss_is_zero_when_student_matches_teacher(rng, compressed, pairs, kind):
    """Tables equal to m̃ and an identity g_φ reproduce the teacher's scores exactly."""
    bank = EmbeddingBank(ITEMS, DIM, rng, compressed)
    heads = ChannelHeads(Channel.IMAGE, DIM, CODES, rng)
    left, right = pairs
    m = compressed[Channel.IMAGE]
    r = np.asarray(holistic_score(kind, m[left], m[right]))

    e_i = lookup(bank.image_table, left)
    e_j = lookup(bank.image_table, right)
    r_hat = holistic_predict(heads.holistic, kind, e_i, e_j)
    assert kd_soft_loss(r, r_hat, 1.5).item() <= 1e-12
    assert kd_soft_loss(r, r_hat, 1.5, soft=False).item() <= 1e-12


def test_soft_loss_values():
    r = np.array([0.0, 0.0])
    r_hat = Tensor(np.array([0.0, 2.0]))
    # Hard match is the plain squared error.
    assert kd_soft_loss(r, r_hat, 1.0, soft=False).item() == pytest.approx(2.0)
    sig = 1.0 / (1.0 + np.exp(-1.0))
    assert kd_soft_loss(r, r_hat, 2.0).item() == pytest.approx((sig - 0.5) ** 2 / 2.0)


def test_soft_loss_errors():
    with pytest.raises(ArgumentError):
        kd_soft_loss(np.zeros(2), Tensor(np.zeros(2)), 0.0)
    with pytest.raises(ArgumentError):
        kd_soft_loss(np.zeros(0), Tensor(np.zeros(0)), 1.0)
    with pytest.raises(DimensionError):
        kd_soft_loss(np.zeros(2), Tensor(np.zeros(3)), 1.0)


def test_code_loss_with_peaked_logits():
    codes = np.array([2, 0, 3])
    logits = np.zeros((3, CODES))
    logits[np.arange(3), codes] = 50.0
    assert kd_code_loss(Tensor(logits), codes).item() < 1e-6


def test_code_loss_errors():
    logits = Tensor(np.zeros((2, CODES)))
    with pytest.raises(ArgumentError):
        kd_code_loss(logits, np.array([0, CODES]))
    with pytest.raises(ArgumentError):
        kd_code_loss(logits, np.array([0]))


def test_dissected_logits_are_symmetric(rng, compressed, pairs):
    bank = EmbeddingBank(ITEMS, DIM, rng, compressed)
    heads = ChannelHeads(Channel.TEXT, DIM, CODES, rng)
    left, right = pairs
    e_i = lookup(bank.text_table, left)
    e_j = lookup(bank.text_table, right)
    forward = dissected_logits(heads.dissected, e_i, e_j).data
    backward = dissected_logits(heads.dissected, e_j, e_i).data
    np.testing.assert_array_equal(forward, backward)
    assert forward.shape == (len(left), CODES)


def test_head_names_are_stable(rng):
    heads = ChannelHeads(Channel.IMAGE, DIM, CODES, rng)
    names = [p.name for p in heads.parameters()]
    assert names == [
        "heads.image.holistic.weight",
        "heads.image.holistic.bias",
        "heads.image.dissected.hidden.weight",
        "heads.image.dissected.hidden.bias",
        "heads.image.dissected.out.weight",
        "heads.image.dissected.out.bias",
    ]
    np.testing.assert_array_equal(heads.holistic.transform.weight.data, np.eye(DIM))


@pytest.mark.parametrize("seed", range(10))
def test_kd_loss_gradients(seed):
    """Finite-difference gate for both KD losses on small random configurations."""
    rng = np.random.default_rng(seed)
    items = int(rng.integers(4, 13))
    dim = int(rng.integers(2, 9))
    codes = int(rng.integers(2, 6))
    kind = [ScoringKind.COSINE, ScoringKind.DOT][seed % 2]
    compressed = {channel: rng.normal(size=(items, dim)) for channel in Channel}
    bank = EmbeddingBank(items, dim, rng, compressed)
    heads = ChannelHeads(Channel.IMAGE, dim, codes, rng)
    heads.holistic.transform.weight.data += rng.normal(0.0, 0.3, size=(dim, dim))
    # Shift the embeddings away from m̃ so the soft loss is not at its minimum.
    bank.image_table.data += rng.normal(0.0, 0.5, size=(items, dim))

    left = np.array([0, 1, 2, 3])
    right = np.array([1, 3, 0, 2])
    m = compressed[Channel.IMAGE]
    r = np.asarray(holistic_score(kind, m[left], m[right]))
    target = rng.integers(codes, size=4)

    def loss():
        e_i = lookup(bank.image_table, left)
        e_j = lookup(bank.image_table, right)
        soft = kd_soft_loss(r, holistic_predict(heads.holistic, kind, e_i, e_j), 1.5)
        code = kd_code_loss(dissected_logits(heads.dissected, e_i, e_j), target)
        return soft + 0.5 * code

    params = [bank.image_table] + heads.parameters()
    report = finite_diff_check(loss, params, tol=1e-4, fraction=1.0)
    assert report.passed, str(report)
