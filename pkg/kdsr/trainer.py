"""
Joint optimisation of L = L^RS + λ1·L^KD_S + λ2·L^KD_C.

Each step draws within-sequence item pairs for the batch once and uses them for both KD losses
of every modality channel. Embedding tables warm up from 0.1ε to ε over the first η epochs
while every other parameter trains at ε from the start.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
from tqdm import tqdm

from kdsr.autograd import Array, ParamGroup, Tensor, no_grad
from kdsr.checkpoint import capture, load_checkpoint, restore, save_checkpoint
from kdsr.config import TrainConfig, worker_threads
from kdsr.corpus import Channel, ModalityMatrix, SplitDataset
from kdsr.errors import (
    ArgumentError,
    CheckpointError,
    DegenerateVectorError,
    EmptyDatasetError,
    TrainingError,
    UndefinedCorrelationError,
)
from kdsr.evaluation import drift, evaluate, mean_or_none, sample_drift_pairs
from kdsr.model import StudentModel, truncate
from kdsr.numerics import Adam, clip_grad_norm
from kdsr.report import EpochRow, LossComponents, RunReport
from kdsr.rng import Stream, make_stream
from kdsr.student import (
    dissected_logits,
    holistic_predict,
    kd_code_loss,
    kd_soft_loss,
    lookup,
)
from kdsr.teacher import TeacherSignals, build_teacher

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.kdck"


@dataclass
class PairBatch:
    sequence: npt.NDArray[np.int64]
    left: npt.NDArray[np.int64]
    right: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return len(self.left)


def sample_pairs(
    sequences: Sequence[Sequence[int]], pair_cap: int, rng: np.random.Generator
) -> PairBatch:
    """
    All unordered distinct-item pairs per sequence, or `pair_cap` of them drawn uniformly
    without replacement. Repeated items never pair with themselves.
    """
    if not sequences:
        raise ArgumentError("sample_pairs needs at least one sequence")
    seq_ids, lefts, rights = [], [], []
    for sid, seq in enumerate(sequences):
        items = np.array(list(dict.fromkeys(seq)), dtype=np.int64)
        if len(items) < 2:
            continue
        a, b = np.triu_indices(len(items), k=1)
        if len(a) > pair_cap:
            keep = np.sort(rng.choice(len(a), size=pair_cap, replace=False))
            a, b = a[keep], b[keep]
        seq_ids.append(np.full(len(a), sid, dtype=np.int64))
        lefts.append(items[a])
        rights.append(items[b])
    if not lefts:
        empty = np.zeros(0, dtype=np.int64)
        return PairBatch(empty, empty, empty)
    return PairBatch(np.concatenate(seq_ids), np.concatenate(lefts), np.concatenate(rights))


def embedding_lr(epoch: int, base_lr: float, warmup_epochs: int) -> float:
    """ε·(0.1 + 0.9·min(t, η)/η)."""
    if base_lr <= 0:
        raise ArgumentError(f"base learning rate must be positive, got {base_lr}")
    if warmup_epochs < 1:
        raise ArgumentError(f"warm-up epochs must be >= 1, got {warmup_epochs}")
    return base_lr * (0.1 + 0.9 * min(epoch, warmup_epochs) / warmup_epochs)


def build_teachers(
    split: SplitDataset, modalities: Mapping[Channel, ModalityMatrix], cfg: TrainConfig
) -> dict[Channel, TeacherSignals]:
    return {
        channel: build_teacher(
            split.train_sequences, modalities[channel], cfg.teacher, cfg.backbone.dim, cfg.seed
        )
        for channel in Channel
    }


class Trainer:
    def __init__(
        self,
        split: SplitDataset,
        cfg: TrainConfig,
        teachers: Optional[Mapping[Channel, TeacherSignals]] = None,
        reference_ids: Optional[Array] = None,
        variant: str = "kd",
        config_echo: Optional[dict] = None,
        verbose: bool = False,
    ):
        cfg.validate()
        self.split = split
        self.cfg = cfg
        self.verbose = verbose
        self.reference_ids = reference_ids

        if cfg.student.use_modality and teachers is None:
            raise ArgumentError("a modality model needs teacher signals per channel")
        self.teachers = dict(teachers) if teachers is not None else {}
        compressed = (
            {channel: t.compressed for channel, t in self.teachers.items()}
            if cfg.student.use_modality
            else None
        )

        self.model = StudentModel(
            split.item_count, cfg, make_stream(cfg.seed, Stream.INIT), compressed
        )
        self.optimizer = Adam(
            self.model.parameters(), cfg.trainer.beta1, cfg.trainer.beta2, cfg.trainer.eps
        )
        self.rngs = {
            "shuffle": make_stream(cfg.seed, Stream.DATA, 1),
            "pairs": make_stream(cfg.seed, Stream.SAMPLING),
        }
        # a single-item sequence has no transition to predict
        self.train_sequences = [
            truncate(seq, cfg.backbone.max_length + 1)
            for seq in split.train_sequences
            if len(seq) >= 2
        ]
        if not self.train_sequences:
            raise EmptyDatasetError("no training sequence has two or more items")
        self.drift_pairs = sample_drift_pairs(
            split.item_count, cfg.eval.drift_pairs, make_stream(cfg.seed, Stream.EVAL)
        )
        self.threads = worker_threads(cfg.eval.threads)
        self.report = RunReport(
            config=config_echo if config_echo is not None else {},
            seed=cfg.seed,
            variant=variant,
            drift_pairs=len(self.drift_pairs),
        )
        self.epoch = 0
        self.step_count = 0

    ###########################
    #  Losses and one step    #
    ###########################

    def losses(self, batch: Sequence[Sequence[int]], rng: np.random.Generator):
        """(L^RS, L^KD_S, L^KD_C) tensors; both KD terms are zero without modality."""
        student = self.cfg.student
        rs = self.model.rec_loss(batch)
        if not student.use_modality:
            return rs, Tensor(0.0), Tensor(0.0)

        pairs = sample_pairs(batch, student.pair_cap, rng)
        if len(pairs) == 0:
            return rs, Tensor(0.0), Tensor(0.0)

        soft_terms, code_terms = [], []
        for channel in Channel:
            teacher = self.teachers[channel]
            heads = self.model.heads[channel]
            table = self.model.bank.modality[channel]
            r, codes = teacher.distill_pairs(pairs.left, pairs.right)
            e_i = lookup(table, pairs.left)
            e_j = lookup(table, pairs.right)
            r_hat = holistic_predict(heads.holistic, teacher.scoring, e_i, e_j)
            soft_terms.append(kd_soft_loss(r, r_hat, student.tau, student.soft_match))
            code_terms.append(kd_code_loss(dissected_logits(heads.dissected, e_i, e_j), codes))

        channels = float(len(soft_terms))
        kds = soft_terms[0]
        kdc = code_terms[0]
        for s, c in zip(soft_terms[1:], code_terms[1:]):
            kds = kds + s
            kdc = kdc + c
        return rs, kds / channels, kdc / channels

    def combine(self, rs: Tensor, kds: Tensor, kdc: Tensor) -> Tensor:
        # A zero weight leaves its term off the tape so its head gets no gradient at all.
        total = rs
        if self.cfg.student.lambda_soft > 0:
            total = total + self.cfg.student.lambda_soft * kds
        if self.cfg.student.lambda_code > 0:
            total = total + self.cfg.student.lambda_code * kdc
        return total

    def learning_rates(self, epoch: int) -> dict[ParamGroup, float]:
        t = self.cfg.trainer
        emb = embedding_lr(epoch, t.lr, t.async_epochs) if t.async_training else t.lr
        return {ParamGroup.EMBEDDING: emb, ParamGroup.OTHER: t.lr}

    def train_step(self, batch: Sequence[Sequence[int]], epoch: int) -> LossComponents:
        self.optimizer.zero_grad()
        rs, kds, kdc = self.losses(batch, self.rngs["pairs"])
        total = self.combine(rs, kds, kdc)
        components = LossComponents(rs.item(), kds.item(), kdc.item(), total.item())
        if not math.isfinite(components.total):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}, step {self.step_count}",
                snapshot={
                    "epoch": epoch,
                    "step": self.step_count,
                    "rs": components.rs,
                    "kds": components.kds,
                    "kdc": components.kdc,
                    "batch_size": len(batch),
                },
            )
        total.backward()
        norm = clip_grad_norm(self.optimizer.params, self.cfg.trainer.clip_norm)
        self.optimizer.step(self.learning_rates(epoch))
        self.step_count += 1
        logger.debug(
            "step %d: rs %.5f kds %.5f kdc %.5f |g| %.3f",
            self.step_count,
            components.rs,
            components.kds,
            components.kdc,
            norm,
        )
        return components

    ###########################
    #  Epochs and reporting   #
    ###########################

    def batches(self, order: npt.NDArray[np.int64]) -> list[list[list[int]]]:
        size = self.cfg.trainer.batch_size
        return [
            [self.train_sequences[i] for i in order[start : start + size]]
            for start in range(0, len(order), size)
        ]

    def initial_losses(self) -> LossComponents:
        """Training-set losses of the untrained model, pairs drawn from a separate stream."""
        rng = make_stream(self.cfg.seed, Stream.CHECK)
        batches = self.batches(np.arange(len(self.train_sequences)))
        totals = np.zeros(4)
        with no_grad():
            for batch in batches:
                rs, kds, kdc = self.losses(batch, rng)
                total = self.combine(rs, kds, kdc)
                totals += [rs.item(), kds.item(), kdc.item(), total.item()]
        rs_mean, kds_mean, kdc_mean, total_mean = totals / max(len(batches), 1)
        return LossComponents(rs_mean, kds_mean, kdc_mean, total_mean)

    def run_epoch(self, epoch: int) -> LossComponents:
        order = self.rngs["shuffle"].permutation(len(self.train_sequences))
        sums = np.zeros(4)
        batches = self.batches(order)
        for batch in batches:
            step = self.train_step(batch, epoch)
            sums += [step.rs, step.kds, step.kdc, step.total]
        rs, kds, kdc, total = sums / len(batches)
        return LossComponents(rs, kds, kdc, total)

    def measure(self, epoch: int, losses: LossComponents) -> EpochRow:
        metrics = evaluate(self.model, self.split, self.threads)
        row = EpochRow(epoch, losses, metrics)
        if not self.cfg.student.use_modality:
            return row
        for channel in Channel:
            e = self.model.bank.modality[channel].data
            m = self.teachers[channel].compressed
            try:
                em, ev = drift(e, m, self.reference_ids, self.drift_pairs)
            except (DegenerateVectorError, UndefinedCorrelationError) as exc:
                logger.warning("epoch %d: %s drift undefined (%s)", epoch, channel.value, exc)
                em, ev = None, None
            row.channel_em[channel] = em
            row.channel_ev[channel] = ev
        row.em = mean_or_none(list(row.channel_em.values()))
        row.ev = mean_or_none(list(row.channel_ev.values()))
        return row

    def fit(
        self,
        checkpoint_path: Optional[Path] = None,
        on_epoch: Optional[Callable[[EpochRow], None]] = None,
    ) -> RunReport:
        """
        Run up to cfg.trainer.epochs epochs. A fresh run first records the epoch-0 row of the
        untrained model; a resumed run continues from the restored epoch.
        """
        if not self.report.rows:
            row = self.measure(0, self.initial_losses())
            self.report.rows.append(row)
            if on_epoch is not None:
                on_epoch(row)

        t = self.cfg.trainer
        epochs = range(self.epoch, t.epochs)
        for epoch in tqdm(epochs, desc=self.report.variant, disable=not self.verbose):
            losses = self.run_epoch(epoch)
            self.epoch = epoch + 1
            row = self.measure(self.epoch, losses)
            self.report.rows.append(row)
            logger.info("%s %s", self.report.variant, row)
            if on_epoch is not None:
                on_epoch(row)
            if (
                checkpoint_path is not None
                and t.checkpoint_every > 0
                and self.epoch % t.checkpoint_every == 0
            ):
                self.save(checkpoint_path)

        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return self.report

    ###########################
    #  Checkpoints            #
    ###########################

    def save(self, path: Path) -> None:
        extra = {
            "history": [row.to_state() for row in self.report.rows],
            "step": self.step_count,
        }
        ckpt = capture(
            self.model, self.optimizer, self.epoch, self.cfg.config_hash(), self.rngs, extra
        )
        save_checkpoint(path, ckpt)

    def resume(self, path: Path) -> None:
        ckpt = load_checkpoint(path)
        if ckpt.config_hash != self.cfg.config_hash():
            raise CheckpointError(f"{path} was written under a different training config")
        restore(ckpt, self.model, self.optimizer, self.rngs)
        self.epoch = ckpt.epoch
        self.step_count = int(ckpt.state.get("step", 0))
        self.report.rows = [EpochRow.from_state(s) for s in ckpt.state.get("history", [])]
        logger.info("resumed from %s at epoch %d", path, self.epoch)


@dataclass
class FitResult:
    model: StudentModel
    report: RunReport
    teachers: dict[Channel, TeacherSignals] = field(default_factory=dict)


def fit(
    split: SplitDataset,
    modalities: Optional[Mapping[Channel, ModalityMatrix]],
    cfg: TrainConfig,
    teachers: Optional[Mapping[Channel, TeacherSignals]] = None,
    reference_ids: Optional[Array] = None,
    variant: str = "kd",
    checkpoint_path: Optional[Path] = None,
    resume: bool = False,
    config_echo: Optional[dict] = None,
    verbose: bool = False,
) -> FitResult:
    """Build teachers if needed, train the student and report every epoch."""
    cfg.validate()
    if cfg.student.use_modality and teachers is None:
        if modalities is None:
            raise ArgumentError("fit needs modality matrices or prebuilt teachers")
        teachers = build_teachers(split, modalities, cfg)

    trainer = Trainer(split, cfg, teachers, reference_ids, variant, config_echo, verbose)
    if resume:
        if checkpoint_path is None:
            raise ArgumentError("resume needs a checkpoint path")
        trainer.resume(checkpoint_path)
    report = trainer.fit(checkpoint_path)
    return FitResult(trainer.model, report, dict(teachers or {}))
