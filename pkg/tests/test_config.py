import pytest

from kdsr.codebook import QuantizerKind
from kdsr.config import (
    THREADS_ENV,
    BackboneKind,
    RunConfig,
    TrainConfig,
    load_config,
    worker_threads,
)
from kdsr.errors import ConfigError
from kdsr.scoring import ScoringKind


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[run]\n"
        "seed = 9\n"
        "out_dir = out\n"
        "[student]\n"
        "lambda_soft = 0.25\n"
        "soft_match = no\n"
        "[teacher]\n"
        "scoring = Euclidean\n"
        "quantizer = kmeans\n"
        "[backbone]\n"
        "kind = attn  ; or gru\n"
    )
    return path


def test_defaults():
    cfg = load_config()
    assert cfg.run.seed == 42
    assert cfg.student.tau == 1.5
    assert cfg.student.lambda_soft == 1.0
    assert cfg.student.lambda_code == 0.5
    assert cfg.backbone.kind is BackboneKind.GRU
    assert cfg.trainer.clip_norm == 5.0
    assert cfg.synthetic.seed == 42


def test_file_values_are_coerced(config_file):
    cfg = load_config(config_file)
    assert cfg.run.seed == 9
    assert cfg.student.lambda_soft == 0.25
    assert cfg.student.soft_match is False
    assert cfg.teacher.scoring is ScoringKind.EUCLIDEAN
    assert cfg.teacher.quantizer is QuantizerKind.KMEANS
    assert cfg.backbone.kind is BackboneKind.ATTN
    assert cfg.synthetic.seed == 9
    assert str(cfg.out_dir) == "out"


def test_flags_beat_file(config_file):
    cfg = load_config(config_file, {"student.lambda_soft": 2.0, "run.seed": None})
    assert cfg.student.lambda_soft == 2.0
    # None means the flag was not given.
    assert cfg.run.seed == 9


def test_unknown_section_and_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[nope]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("[student]\nlambda = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(None, {"trainer.speed": 3})


def test_bad_values(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[trainer]\nepochs = many\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("[student]\nsoft_match = maybe\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_splits_must_divide_dim():
    with pytest.raises(ConfigError):
        load_config(None, {"teacher.splits": 5})


def test_validation_ranges():
    with pytest.raises(ConfigError):
        load_config(None, {"student.tau": 0})
    with pytest.raises(ConfigError):
        load_config(None, {"backbone.kind": "attn", "backbone.heads": 3})
    with pytest.raises(ConfigError):
        load_config(None, {"trainer.lr": -1})


def test_config_hash_ignores_epoch_budget():
    a = RunConfig().train_config()
    b = RunConfig().train_config()
    b.trainer.epochs = 3
    b.eval.threads = 2
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 32

    b.student.lambda_code = 0.0
    assert a.config_hash() != b.config_hash()
    assert TrainConfig(seed=1).config_hash() != TrainConfig(seed=2).config_hash()


def test_to_dict_is_plain():
    echo = RunConfig().to_dict()
    assert echo["teacher"]["scoring"] == "cosine"
    assert echo["backbone"]["kind"] == "gru"
    assert "attribute_values" not in echo["synthetic"]


def test_worker_threads(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_threads(0) == 3
    assert worker_threads(2) == 2
    assert worker_threads(8) == 3
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        worker_threads(0)
    monkeypatch.delenv(THREADS_ENV)
    assert worker_threads(0) >= 1
