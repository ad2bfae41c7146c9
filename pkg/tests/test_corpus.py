import numpy as np
import pytest

from kdsr.corpus import (
    Channel,
    Dataset,
    Interaction,
    ModalityMatrix,
    SyntheticSpec,
    core_k_filter,
    generate_synthetic,
    is_complementary,
    item_attributes,
    load_interactions,
    load_modality_matrix,
    split_train_test,
    write_interactions,
    write_modality_matrix,
)
from kdsr.errors import (
    ConfigError,
    EmptyDatasetError,
    MissingInputError,
    NumericError,
    ParseError,
    ShapeError,
    SplitError,
)
from tests.conftest import tiny_spec


@pytest.fixture
def interactions_file(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text("b\tx\t20\na\ty\t5\na\tx\t1\n\nb\ty\t10\n")
    return path


def test_load_interactions_sorts_by_user_then_time(interactions_file):
    records = load_interactions(interactions_file)
    assert records == [
        Interaction("a", "x", 1),
        Interaction("a", "y", 5),
        Interaction("b", "y", 10),
        Interaction("b", "x", 20),
    ]


def test_load_interactions_errors(tmp_path):
    with pytest.raises(MissingInputError):
        load_interactions(tmp_path / "missing.tsv")

    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tx\t1\na\tx\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(bad)
    assert exc.value.line == 2

    bad.write_text("a\tx\tnoon\n")
    with pytest.raises(ParseError):
        load_interactions(bad)


def test_core_k_filter_repeats_until_stable():
    """Dropping item z leaves user c with one event, so c goes too."""
    log = [
        Interaction("a", "x", 1),
        Interaction("a", "y", 2),
        Interaction("b", "y", 1),
        Interaction("b", "x", 2),
        Interaction("c", "x", 1),
        Interaction("c", "z", 2),
    ]
    ds = core_k_filter(log, 2)
    assert ds.user_ids == ["a", "b"]
    # Items are indexed by first appearance.
    assert ds.item_ids == ["x", "y"]
    assert ds.sequences == [[0, 1], [1, 0]]
    assert ds.interaction_count == 4


def test_core_k_filter_can_empty_the_log():
    with pytest.raises(EmptyDatasetError):
        core_k_filter([Interaction("a", "x", 1)], 2)


def test_split_train_test():
    ds = Dataset([[0, 1, 2, 3, 4], [2, 3]], ["i0", "i1", "i2", "i3", "i4"], ["u0", "u1"])
    split = split_train_test(ds)
    assert split.train_sequences == [[0, 1, 2, 3], [2]]
    assert [(e.user, e.prefix, e.target) for e in split.held_out] == [
        (0, (0, 1, 2, 3), 4),
        (1, (2,), 3),
    ]


def test_split_needs_two_events():
    ds = Dataset([[0]], ["i0"], ["u0"])
    with pytest.raises(SplitError):
        split_train_test(ds)


def test_modality_binary_round_trip(tmp_path):
    values = np.arange(12, dtype=np.float64).reshape(4, 3) / 8.0
    path = tmp_path / "image.modf"
    write_modality_matrix(path, ModalityMatrix(Channel.IMAGE, values))
    loaded = load_modality_matrix(path, 4, Channel.IMAGE)
    np.testing.assert_array_equal(loaded.values, values)
    assert loaded.dim == 3
    with pytest.raises(ShapeError):
        load_modality_matrix(path, 5)


def test_modality_text_fallback(tmp_path):
    path = tmp_path / "text.csv"
    path.write_text("1.0,2.0\n3.0,4.5\n")
    loaded = load_modality_matrix(path, 2, Channel.TEXT)
    assert loaded.channel is Channel.TEXT
    np.testing.assert_array_equal(loaded.values, [[1.0, 2.0], [3.0, 4.5]])

    path.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(ParseError):
        load_modality_matrix(path, 2)

    path.write_text("1.0,nan\n3.0,4.0\n")
    with pytest.raises(NumericError):
        load_modality_matrix(path, 2)


def test_truncated_modality_file(tmp_path):
    path = tmp_path / "cut.modf"
    write_modality_matrix(path, ModalityMatrix(Channel.IMAGE, np.ones((3, 2))))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ParseError):
        load_modality_matrix(path, 3)
    with pytest.raises(MissingInputError):
        load_modality_matrix(tmp_path / "none.modf", 3)


def test_synthetic_generation_is_deterministic():
    ds_a, mod_a = generate_synthetic(tiny_spec(), core_k=2)
    ds_b, mod_b = generate_synthetic(tiny_spec(), core_k=2)
    assert ds_a.sequences == ds_b.sequences
    for channel in Channel:
        np.testing.assert_array_equal(mod_a[channel].values, mod_b[channel].values)
        assert mod_a[channel].items == ds_a.item_count
        assert mod_a[channel].dim == 16

    ds_c, _ = generate_synthetic(tiny_spec(seed=8), core_k=2)
    assert ds_c.sequences != ds_a.sequences


def test_synthetic_sequences_never_repeat_items():
    ds, _ = generate_synthetic(tiny_spec(), core_k=2)
    for seq in ds.sequences:
        assert len(seq) == len(set(seq))
        assert len(seq) >= 2


def test_synthetic_features_follow_attributes():
    """Image features of same-colour, same-shape items sit closer than the rest on average."""
    spec = tiny_spec()
    ds, modalities = generate_synthetic(spec, core_k=2)
    attrs = item_attributes(spec)
    generated = [int(item_id[1:]) for item_id in ds.item_ids]
    image = modalities[Channel.IMAGE].values

    same, other = [], []
    for a in range(ds.item_count):
        for b in range(a + 1, ds.item_count):
            ga, gb = generated[a], generated[b]
            match = (
                attrs["color"][ga] == attrs["color"][gb]
                and attrs["shape"][ga] == attrs["shape"][gb]
            )
            dist = float(np.linalg.norm(image[a] - image[b]))
            (same if match else other).append(dist)
    assert np.mean(same) < np.mean(other)


def test_complementary_transitions_are_planted():
    spec = tiny_spec()
    ds, _ = generate_synthetic(spec, core_k=2)
    attrs = item_attributes(spec)
    generated = [int(item_id[1:]) for item_id in ds.item_ids]
    hits = sum(
        is_complementary(attrs, spec, generated[a], generated[b])
        for seq in ds.sequences
        for a, b in zip(seq, seq[1:])
    )
    total = sum(len(seq) - 1 for seq in ds.sequences)
    # Uniform transitions would be complementary about 1 in 6 times here.
    assert hits / total > 0.4


def test_gen_data_files_reload_identically(tmp_path):
    ds, modalities = generate_synthetic(tiny_spec(), core_k=2)
    write_interactions(tmp_path / "log.tsv", ds)
    reloaded = core_k_filter(load_interactions(tmp_path / "log.tsv"), 2)
    assert reloaded.sequences == ds.sequences
    assert reloaded.item_ids == ds.item_ids


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(mixing=1.5))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(min_length=5, max_length=3))


def test_non_utf8_inputs_are_parse_errors(tmp_path):
    log = tmp_path / "log.tsv"
    log.write_bytes(b"a\tx\t1\n\xff\ty\t2\n")
    with pytest.raises(ParseError, match="UTF-8"):
        load_interactions(log)

    features = tmp_path / "text.csv"
    features.write_bytes(b"1.0,2.0\n\xfe,4.0\n")
    with pytest.raises(ParseError, match="UTF-8"):
        load_modality_matrix(features, 2)


def test_full_mixing_makes_every_transition_complementary():
    spec = SyntheticSpec(items=500, users=200, modality_dim=32, mixing=1.0, seed=3)
    ds, _ = generate_synthetic(spec, core_k=1)
    attrs = item_attributes(spec)
    generated = [int(item_id[1:]) for item_id in ds.item_ids]
    pairs = [(a, b) for seq in ds.sequences for a, b in zip(seq, seq[1:])]
    hits = sum(is_complementary(attrs, spec, generated[a], generated[b]) for a, b in pairs)
    assert hits / len(pairs) > 0.8
