import numpy as np
import pytest

from kdsr.autograd import ParamGroup, Parameter
from kdsr.checkpoint import (
    Checkpoint,
    capture,
    load_checkpoint,
    restore,
    restore_parameters,
    save_checkpoint,
)
from kdsr.errors import CheckpointError, ShapeError
from kdsr.layers import Module
from kdsr.numerics import Adam
from kdsr.rng import Stream, make_stream

HASH = bytes(range(32))


class Toy(Module):
    def __init__(self, rows: int = 3):
        self.table = Parameter(np.arange(rows * 2, dtype=np.float64).reshape(rows, 2), "table")
        self.scale = Parameter(np.array([0.5]), "scale", ParamGroup.EMBEDDING)
        self.frozen = Parameter(np.zeros(2), "frozen", trainable=False)

    def parameters(self):
        return [self.table, self.scale, self.frozen]


def trained_toy():
    toy = Toy()
    opt = Adam(toy.parameters())
    for p in opt.params:
        p.grad = np.ones_like(p.data)
    opt.step({ParamGroup.EMBEDDING: 0.1, ParamGroup.OTHER: 0.01})
    return toy, opt


@pytest.fixture
def rngs():
    return {"shuffle": make_stream(1, Stream.DATA, 1), "pairs": make_stream(1, Stream.SAMPLING)}


def test_round_trip_restores_everything(tmp_path, rngs):
    toy, opt = trained_toy()
    path = tmp_path / "run.kdck"
    save_checkpoint(path, capture(toy, opt, 4, HASH, rngs, {"step": 1}))
    expected_draw = rngs["shuffle"].random()

    ckpt = load_checkpoint(path)
    assert ckpt.epoch == 4
    assert ckpt.config_hash == HASH
    assert ckpt.state["step"] == 1

    fresh = Toy()
    fresh_opt = Adam(fresh.parameters())
    fresh_rngs = {"shuffle": make_stream(9, Stream.DATA), "pairs": make_stream(9, Stream.DATA)}
    restore(ckpt, fresh, fresh_opt, fresh_rngs)
    for a, b in zip(toy.parameters(), fresh.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    assert fresh_opt.states["table"].step == 1
    np.testing.assert_array_equal(
        fresh_opt.states["scale"].second_moment, opt.states["scale"].second_moment
    )
    assert fresh_rngs["shuffle"].random() == expected_draw
    assert not (tmp_path / "run.kdck.tmp").exists()


def test_shape_mismatch_changes_nothing(tmp_path, rngs):
    toy, opt = trained_toy()
    path = tmp_path / "run.kdck"
    save_checkpoint(path, capture(toy, opt, 1, HASH, rngs, {}))

    bigger = Toy(rows=4)
    before = bigger.scale.data.copy()
    with pytest.raises(ShapeError):
        restore_parameters(load_checkpoint(path), bigger)
    np.testing.assert_array_equal(bigger.scale.data, before)


def test_unknown_parameter_names(rngs):
    toy, opt = trained_toy()
    ckpt = capture(toy, opt, 1, HASH, rngs, {})
    ckpt.params["extra"] = np.zeros(1)
    with pytest.raises(CheckpointError):
        restore(ckpt, Toy(), Adam(Toy().parameters()), rngs)


def test_rng_streams_must_match(rngs):
    toy, opt = trained_toy()
    ckpt = capture(toy, opt, 1, HASH, rngs, {})
    fresh = Toy()
    with pytest.raises(CheckpointError):
        restore(ckpt, fresh, Adam(fresh.parameters()), {"shuffle": rngs["shuffle"]})


@pytest.mark.parametrize("cut", [3, 20, 60, -1])
def test_truncated_file(tmp_path, rngs, cut):
    toy, opt = trained_toy()
    path = tmp_path / "run.kdck"
    save_checkpoint(path, capture(toy, opt, 1, HASH, rngs, {}))
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bad_magic_trailing_bytes_and_missing_file(tmp_path, rngs):
    toy, opt = trained_toy()
    path = tmp_path / "run.kdck"
    save_checkpoint(path, capture(toy, opt, 1, HASH, rngs, {}))
    raw = path.read_bytes()

    path.write_bytes(raw + b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.kdck")


def test_hash_must_be_32_bytes(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.kdck", Checkpoint(0, b"short", {}, {}))


def test_same_state_gives_identical_bytes(tmp_path, rngs):
    toy, opt = trained_toy()
    save_checkpoint(tmp_path / "a.kdck", capture(toy, opt, 2, HASH, rngs, {"history": [1, 2]}))
    save_checkpoint(tmp_path / "b.kdck", capture(toy, opt, 2, HASH, rngs, {"history": [1, 2]}))
    assert (tmp_path / "a.kdck").read_bytes() == (tmp_path / "b.kdck").read_bytes()
