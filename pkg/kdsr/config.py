"""
Run configuration: one dataclass per INI section, resolved as flags > file > defaults.

    [run]        seed, out_dir
    [corpus]     interaction and modality file paths, core_k
    [synthetic]  SyntheticSpec for gen-data
    [teacher]    autoencoder, scoring and quantizer settings
    [student]    KD head settings and loss weights
    [backbone]   sequence encoder settings
    [trainer]    optimisation budget and schedule
    [eval]       drift sampling and worker threads
"""

import configparser
import dataclasses
import hashlib
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

from kdsr.codebook import QuantizerKind
from kdsr.corpus import SyntheticSpec
from kdsr.errors import ConfigError
from kdsr.scoring import ScoringKind

logger = logging.getLogger(__name__)

THREADS_ENV = "KDSR_THREADS"


class BackboneKind(Enum):
    GRU = "gru"
    ATTN = "attn"


@dataclass
class RunSection:
    seed: int = 42
    out_dir: str = "runs"


@dataclass
class CorpusConfig:
    interactions: str = "data/interactions.tsv"
    image_features: str = "data/image.modf"
    text_features: str = "data/text.modf"
    core_k: int = 5

    def validate(self) -> None:
        if self.core_k < 1:
            raise ConfigError(f"corpus.core_k must be >= 1, got {self.core_k}")


@dataclass
class TeacherConfig:
    ae_epochs: int = 200
    ae_lr: float = 0.01
    # D segments per correlation vector and x codewords.
    splits: int = 8
    codes: int = 100
    scoring: ScoringKind = ScoringKind.COSINE
    quantizer: QuantizerKind = QuantizerKind.VQ
    kmeans_iters: int = 50
    vq_passes: int = 3
    vq_rate: float = 0.1
    codebook_sample: int = 200_000

    def validate(self, code_dim: int) -> None:
        if self.splits < 1 or code_dim % self.splits != 0:
            raise ConfigError(
                f"teacher.splits={self.splits} does not divide the compressed width {code_dim}"
            )
        if self.codes < 2:
            raise ConfigError(f"teacher.codes must be >= 2, got {self.codes}")
        if self.ae_epochs < 0:
            raise ConfigError(f"teacher.ae_epochs must be >= 0, got {self.ae_epochs}")
        if self.ae_lr <= 0:
            raise ConfigError(f"teacher.ae_lr must be positive, got {self.ae_lr}")
        if not 0.0 < self.vq_rate <= 1.0:
            raise ConfigError(f"teacher.vq_rate must be in (0, 1], got {self.vq_rate}")
        if self.codebook_sample < 1:
            raise ConfigError("teacher.codebook_sample must be >= 1")


@dataclass
class StudentConfig:
    tau: float = 1.5
    # False compares raw scores by squared error without the tempered sigmoid.
    soft_match: bool = True
    lambda_soft: float = 1.0
    lambda_code: float = 0.5
    pair_cap: int = 64
    # False zeroes and freezes both modality tables (the ID-only reference model).
    use_modality: bool = True

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigError(f"student.tau must be positive, got {self.tau}")
        if self.lambda_soft < 0 or self.lambda_code < 0:
            raise ConfigError("student loss weights must be non-negative")
        if self.pair_cap < 1:
            raise ConfigError(f"student.pair_cap must be >= 1, got {self.pair_cap}")


@dataclass
class BackboneConfig:
    kind: BackboneKind = BackboneKind.GRU
    dim: int = 128
    layers: int = 2
    heads: int = 2
    window: int = 5
    max_length: int = 50

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"backbone.dim must be >= 1, got {self.dim}")
        if self.window < 1:
            raise ConfigError(f"backbone.window must be >= 1, got {self.window}")
        if self.max_length < 1:
            raise ConfigError(f"backbone.max_length must be >= 1, got {self.max_length}")
        if self.kind is BackboneKind.ATTN:
            if self.layers < 1:
                raise ConfigError("backbone.layers must be >= 1")
            if self.heads < 1 or self.dim % self.heads != 0:
                raise ConfigError(f"backbone.heads={self.heads} does not divide dim {self.dim}")


@dataclass
class TrainerConfig:
    epochs: int = 50
    batch_size: int = 512
    lr: float = 0.001
    async_epochs: int = 5
    async_training: bool = True
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Write a checkpoint every n epochs; 0 writes only the final one.
    checkpoint_every: int = 1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"trainer.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"trainer.batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"trainer.lr must be positive, got {self.lr}")
        if self.async_epochs < 1:
            raise ConfigError(f"trainer.async_epochs must be >= 1, got {self.async_epochs}")
        if self.clip_norm <= 0:
            raise ConfigError(f"trainer.clip_norm must be positive, got {self.clip_norm}")
        if self.checkpoint_every < 0:
            raise ConfigError("trainer.checkpoint_every must be >= 0")


@dataclass
class EvalConfig:
    drift_pairs: int = 10_000
    # 0 means KDSR_THREADS, or every core when that is unset.
    threads: int = 0

    def validate(self) -> None:
        if self.drift_pairs < 2:
            raise ConfigError(f"eval.drift_pairs must be >= 2, got {self.drift_pairs}")
        if self.threads < 0:
            raise ConfigError(f"eval.threads must be >= 0, got {self.threads}")


@dataclass
class TrainConfig:
    """Everything that shapes a training run; hashed to guard checkpoint resume."""

    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 42

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        self.student.validate()
        self.backbone.validate()
        self.trainer.validate()
        self.eval.validate()
        # Student tables are the teacher's compressed width, so d carries D.
        self.teacher.validate(self.backbone.dim)

    def config_hash(self) -> bytes:
        """SHA-256 over the fields that change training; the epoch budget is left out."""
        payload = _plain(dataclasses.asdict(self))
        payload["trainer"].pop("epochs")
        payload["trainer"].pop("checkpoint_every")
        payload["eval"].pop("threads")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).digest()


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            teacher=self.teacher,
            student=self.student,
            backbone=self.backbone,
            trainer=self.trainer,
            eval=self.eval,
            seed=self.run.seed,
        )

    def validate(self) -> None:
        self.corpus.validate()
        self.train_config().validate()

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            out[f.name] = {
                sf.name: _plain(getattr(section, sf.name))
                for sf in dataclasses.fields(section)
                if sf.init
            }
        return out

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out_dir)


SECTIONS: dict[str, type] = {f.name: f.type for f in dataclasses.fields(RunConfig)}  # type: ignore


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _coerce(section: str, key: str, raw: Any, kind: type) -> Any:
    where = f"{section}.{key}"
    if isinstance(raw, Enum):
        raw = raw.value
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if isinstance(kind, type) and issubclass(kind, Enum):
            return kind(text.lower())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {text!r} as {kind.__name__}") from exc
    return text


def _section_fields(section: str) -> dict[str, type]:
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.init}


def set_value(cfg: RunConfig, section: str, key: str, raw: Any) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    known = _section_fields(section)
    if key not in known:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    target = getattr(cfg, section)
    setattr(target, key, _coerce(section, key, raw, known[key]))


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> RunConfig:
    """
    Read an INI file (optional) and apply `overrides` keyed "section.key" on top.

    The synthetic corpus follows the run seed unless [synthetic] sets its own.
    """
    cfg = RunConfig()
    synthetic_seed_set = False

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            with open(path, encoding="utf-8") as file:
                parser.read_file(file)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                set_value(cfg, section, key, raw)
                if section == "synthetic" and key == "seed":
                    synthetic_seed_set = True
        logger.info("loaded config from %s", path)

    for dotted, raw in (overrides or {}).items():
        if raw is None:
            continue
        section, _, key = dotted.partition(".")
        set_value(cfg, section, key, raw)
        if dotted == "synthetic.seed":
            synthetic_seed_set = True

    if not synthetic_seed_set:
        cfg.synthetic.seed = cfg.run.seed
    # SyntheticSpec derives its attribute table from the counts.
    cfg.synthetic.__post_init__()
    cfg.validate()
    return cfg


def worker_threads(configured: int) -> int:
    cores = os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer") from exc
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {cap}")
    else:
        cap = cores
    return min(configured, cap) if configured > 0 else cap
