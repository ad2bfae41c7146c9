import dataclasses
import logging
from pathlib import Path
from typing import Callable, Dict, Optional

import pandas as pd

from kdsr.checkpoint import load_checkpoint, restore_parameters
from kdsr.config import RunConfig, TrainConfig, worker_threads
from kdsr.corpus import (
    Channel,
    Dataset,
    ModalityMatrix,
    SplitDataset,
    core_k_filter,
    generate_synthetic,
    load_interactions,
    load_modality_matrix,
    split_train_test,
    write_interactions,
    write_modality_matrix,
)
from kdsr.errors import (
    ArgumentError,
    CheckpointError,
    FileRefusalError,
    MissingInputError,
    ShapeError,
)
from kdsr.evaluation import evaluate
from kdsr.model import StudentModel
from kdsr.report import RunReport, write_frame, write_json
from kdsr.rng import Stream, make_stream
from kdsr.teacher import TeacherSignals, load_teacher, save_teacher
from kdsr.trainer import CHECKPOINT_NAME, build_teachers, fit

logger = logging.getLogger(__name__)

COMMANDS = ["gen-data", "distill", "train", "evaluate", "diagnose", "ablate"]

DRIFT_COLUMNS = ["variant", "epoch", "hr20", "em", "ev"] + [
    f"{kind}_{channel.value}" for kind in ("em", "ev") for channel in Channel
]
ABLATION_COLUMNS = [
    "variant",
    "best_epoch",
    "final_hr5",
    "final_hr20",
    "final_mrr5",
    "final_mrr20",
    "best_hr5",
    "best_hr20",
    "best_mrr5",
    "best_mrr20",
]


def _student(cfg: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(cfg, student=dataclasses.replace(cfg.student, **changes))


def _trainer(cfg: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(cfg, trainer=dataclasses.replace(cfg.trainer, **changes))


def teacher_path(out_dir: Path, channel: Channel) -> Path:
    return out_dir / f"teacher_{channel.value}.kdtc"


class Controller:
    ablation_mapping: Dict[str, Callable[[TrainConfig], TrainConfig]] = {
        "full": lambda cfg: cfg,
        "hard_match": lambda cfg: _student(cfg, soft_match=False),
        "no_code": lambda cfg: _student(cfg, lambda_code=0.0),
        "no_soft": lambda cfg: _student(cfg, lambda_soft=0.0),
        "no_kd": lambda cfg: _student(cfg, lambda_soft=0.0, lambda_code=0.0),
        "no_async": lambda cfg: _trainer(cfg, async_training=False),
    }

    diagnose_mapping: Dict[str, Callable[[TrainConfig], TrainConfig]] = {
        "id_only": lambda cfg: _student(
            cfg, use_modality=False, lambda_soft=0.0, lambda_code=0.0
        ),
        "no_kd": lambda cfg: _student(cfg, lambda_soft=0.0, lambda_code=0.0),
        "kd": lambda cfg: cfg,
    }

    def __init__(
        self,
        command: str,
        cfg: RunConfig,
        force: bool = False,
        verbose: bool = False,
        checkpoint: Optional[str] = None,
        distill_inline: bool = False,
        resume: bool = False,
    ):
        if command not in COMMANDS:
            raise ArgumentError(f"command {command} not recognised!")
        self.command = command
        self.cfg = cfg
        self.force = force
        self.verbose = verbose
        self.distill_inline = distill_inline
        self.resume = resume
        self.out_dir = cfg.out_dir
        self.checkpoint_path = (
            Path(checkpoint) if checkpoint is not None else self.out_dir / CHECKPOINT_NAME
        )

    def run(self) -> None:
        match self.command:
            case "gen-data":
                self.gen_data()
            case "distill":
                self.distill()
            case "train":
                self.train()
            case "evaluate":
                self.evaluate()
            case "diagnose":
                self.diagnose()
            case "ablate":
                self.ablate()

    ###########################
    #  Shared plumbing        #
    ###########################

    def _claim(self, *paths: Path, allow_existing: bool = False) -> None:
        """Refuse to overwrite earlier outputs unless --force; create parent directories."""
        existing = [str(p) for p in paths if p.exists()]
        if existing and not (self.force or allow_existing):
            raise FileRefusalError(
                f"refusing to overwrite {', '.join(existing)} (pass --force to replace)"
            )
        for path in paths:
            path.parent.mkdir(parents=True, exist_ok=True)

    def _load_corpus(self) -> tuple[SplitDataset, dict[Channel, ModalityMatrix]]:
        corpus = self.cfg.corpus
        ds = core_k_filter(load_interactions(corpus.interactions), corpus.core_k)
        files = {Channel.IMAGE: corpus.image_features, Channel.TEXT: corpus.text_features}
        modalities = {
            channel: load_modality_matrix(path, ds.item_count, channel)
            for channel, path in files.items()
        }
        return split_train_test(ds), modalities

    def _teachers(
        self,
        split: SplitDataset,
        modalities: dict[Channel, ModalityMatrix],
        cfg: TrainConfig,
        allow_inline: bool,
    ) -> dict[Channel, TeacherSignals]:
        paths = {channel: teacher_path(self.out_dir, channel) for channel in Channel}
        if all(path.exists() for path in paths.values()):
            teachers = {
                channel: load_teacher(path, modalities[channel]) for channel, path in paths.items()
            }
            for signals in teachers.values():
                self._check_teacher(signals, cfg)
            return teachers
        if not allow_inline:
            missing = ", ".join(str(p) for p in paths.values() if not p.exists())
            raise MissingInputError(
                f"teacher artifacts {missing} not found (run distill or pass --distill-inline)"
            )
        logger.info("distilling teachers inline")
        return build_teachers(split, modalities, cfg)

    @staticmethod
    def _check_teacher(signals: TeacherSignals, cfg: TrainConfig) -> None:
        t = cfg.teacher
        if signals.compressed.shape[1] != cfg.backbone.dim:
            raise ShapeError(
                f"{signals.channel.value} teacher has width {signals.compressed.shape[1]}, "
                f"backbone.dim is {cfg.backbone.dim}"
            )
        settings = (signals.splits, signals.codebook.size, signals.scoring, signals.codebook.kind)
        if settings != (t.splits, t.codes, t.scoring, t.quantizer):
            raise CheckpointError(
                f"{signals.channel.value} teacher was distilled under different teacher settings"
            )

    ###########################
    #  Commands               #
    ###########################

    def gen_data(self) -> None:
        corpus = self.cfg.corpus
        files = {Channel.IMAGE: corpus.image_features, Channel.TEXT: corpus.text_features}
        interactions = Path(corpus.interactions)
        self._claim(interactions, *(Path(p) for p in files.values()))

        ds, modalities = generate_synthetic(self.cfg.synthetic, corpus.core_k)
        write_interactions(interactions, ds)
        for channel, path in files.items():
            write_modality_matrix(path, modalities[channel])
        print(corpus_summary(ds))

    def distill(self) -> None:
        cfg = self.cfg.train_config()
        paths = {channel: teacher_path(self.out_dir, channel) for channel in Channel}
        self._claim(*paths.values())
        split, modalities = self._load_corpus()

        teachers = build_teachers(split, modalities, cfg)
        for channel, signals in teachers.items():
            save_teacher(paths[channel], signals)
            print(f"{channel.value} codebook usage ({paths[channel]}):")
            print(signals.codebook.histogram())

    def train(self) -> None:
        cfg = self.cfg.train_config()
        report_json = self.out_dir / "report.json"
        report_csv = self.out_dir / "report.csv"
        self._claim(report_json, report_csv, self.checkpoint_path, allow_existing=self.resume)
        split, modalities = self._load_corpus()
        teachers = (
            self._teachers(split, modalities, cfg, self.distill_inline)
            if cfg.student.use_modality
            else None
        )

        result = fit(
            split,
            modalities,
            cfg,
            teachers=teachers,
            checkpoint_path=self.checkpoint_path,
            resume=self.resume,
            config_echo=self.cfg.to_dict(),
            verbose=self.verbose,
        )
        result.report.write_json(report_json)
        result.report.write_csv(report_csv)
        print(result.report)

    def evaluate(self) -> None:
        cfg = self.cfg.train_config()
        metrics_path = self.out_dir / "metrics.json"
        self._claim(metrics_path)
        split, _ = self._load_corpus()

        ckpt = load_checkpoint(self.checkpoint_path)
        model = StudentModel(split.item_count, cfg, make_stream(cfg.seed, Stream.INIT))
        # Shapes first: a checkpoint from another catalogue is a shape error, not a config one.
        restore_parameters(ckpt, model)
        if ckpt.config_hash != cfg.config_hash():
            raise CheckpointError(
                f"{self.checkpoint_path} was written under a different training config"
            )

        metrics = evaluate(model, split, worker_threads(cfg.eval.threads))
        write_json(
            {"checkpoint": str(self.checkpoint_path), "epoch": ckpt.epoch, **metrics.to_dict()},
            metrics_path,
        )
        print(f"epoch {ckpt.epoch}: {metrics}")

    def diagnose(self) -> None:
        """
        Train the ID-only reference, a modality model without KD and the KD model, then write
        per-epoch drift of each modality model against M and against the reference's ID table.
        """
        base = self.cfg.train_config()
        drift_csv = self.out_dir / "drift.csv"
        reports = {name: self.out_dir / f"diagnose_{name}.json" for name in self.diagnose_mapping}
        self._claim(drift_csv, *reports.values())
        split, modalities = self._load_corpus()
        teachers = self._teachers(split, modalities, base, allow_inline=True)

        reference = None
        rows = []
        for name, transform in self.diagnose_mapping.items():
            cfg = transform(base)
            result = fit(
                split,
                modalities,
                cfg,
                teachers=teachers if cfg.student.use_modality else None,
                reference_ids=reference,
                variant=name,
                config_echo=self.cfg.to_dict(),
                verbose=self.verbose,
            )
            result.report.write_json(reports[name])
            if name == "id_only":
                reference = result.model.bank.id_table.data.copy()
                continue
            rows += drift_rows(result.report)

        frame = pd.DataFrame(rows, columns=DRIFT_COLUMNS)
        write_frame(frame, drift_csv)
        print(frame.to_string(index=False))

    def ablate(self) -> None:
        base = self.cfg.train_config()
        ablation_csv = self.out_dir / "ablation.csv"
        ablation_json = self.out_dir / "ablation.json"
        self._claim(ablation_csv, ablation_json)
        split, modalities = self._load_corpus()
        teachers = self._teachers(split, modalities, base, allow_inline=True)

        rows = []
        for name, transform in self.ablation_mapping.items():
            result = fit(
                split,
                modalities,
                transform(base),
                teachers=teachers,
                variant=name,
                config_echo=self.cfg.to_dict(),
                verbose=self.verbose,
            )
            rows.append(ablation_row(result.report))

        frame = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
        write_frame(frame, ablation_csv)
        payload = {"config": self.cfg.to_dict(), "seed": base.seed, "variants": rows}
        write_json(payload, ablation_json)
        print(frame.to_string(index=False))


###########################
#  Summaries              #
###########################


def corpus_summary(ds: Dataset) -> str:
    avg = ds.interaction_count / ds.user_count if ds.user_count else 0.0
    rows = [
        ("items", f"{ds.item_count}"),
        ("users", f"{ds.user_count}"),
        ("interactions", f"{ds.interaction_count}"),
        ("avg length", f"{avg:.2f}"),
    ]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label:<{width}}  {value:>10}" for label, value in rows)


def drift_rows(report: RunReport) -> list[dict]:
    rows = []
    for row in report.rows:
        flat = row.flat()
        rows.append({"variant": report.variant, **{k: flat[k] for k in DRIFT_COLUMNS[1:]}})
    return rows


def ablation_row(report: RunReport) -> dict:
    final, best = report.final, report.best
    if final is None or best is None:
        raise ArgumentError(f"variant {report.variant} produced no epochs")
    row: dict = {"variant": report.variant, "best_epoch": best.epoch}
    for prefix, source in (("final", final), ("best", best)):
        for key in ("hr5", "hr20", "mrr5", "mrr20"):
            row[f"{prefix}_{key}"] = float(getattr(source.metrics, key))
    return row

