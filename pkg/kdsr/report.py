import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd

from kdsr.corpus import Channel
from kdsr.evaluation import MetricsReport

PathLike = Union[str, Path]

CSV_COLUMNS = [
    "epoch",
    "rs",
    "kds",
    "kdc",
    "hr5",
    "hr20",
    "mrr5",
    "mrr20",
    "em",
    "ev",
] + [f"{kind}_{channel.value}" for kind in ("em", "ev") for channel in Channel]


@dataclass
class LossComponents:
    rs: float
    kds: float
    kdc: float
    total: float


@dataclass
class EpochRow:
    epoch: int
    losses: LossComponents
    metrics: MetricsReport
    # Channel-averaged Pearson drift of E against M and V; None where undefined.
    em: Optional[float] = None
    ev: Optional[float] = None
    channel_em: dict[Channel, Optional[float]] = field(default_factory=dict)
    channel_ev: dict[Channel, Optional[float]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        drift: dict[str, Optional[float]] = {"em": self.em, "ev": self.ev}
        for channel in Channel:
            drift[f"em_{channel.value}"] = self.channel_em.get(channel)
            drift[f"ev_{channel.value}"] = self.channel_ev.get(channel)
        return {
            "epoch": self.epoch,
            "losses": {"rs": self.losses.rs, "kds": self.losses.kds, "kdc": self.losses.kdc},
            "metrics": {
                "hr5": self.metrics.hr5,
                "hr20": self.metrics.hr20,
                "mrr5": self.metrics.mrr5,
                "mrr20": self.metrics.mrr20,
            },
            "drift": drift,
        }

    def to_state(self) -> dict[str, Any]:
        """Lossless form kept inside checkpoints."""
        return {
            "row": self.to_dict(),
            "total": self.losses.total,
            "events": self.metrics.events,
        }

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> "EpochRow":
        row = state["row"]
        losses = row["losses"]
        metrics = row["metrics"]
        drift = row["drift"]
        return cls(
            epoch=row["epoch"],
            losses=LossComponents(losses["rs"], losses["kds"], losses["kdc"], state["total"]),
            metrics=MetricsReport(
                metrics["hr5"], metrics["hr20"], metrics["mrr5"], metrics["mrr20"], state["events"]
            ),
            em=drift["em"],
            ev=drift["ev"],
            channel_em={c: drift[f"em_{c.value}"] for c in Channel},
            channel_ev={c: drift[f"ev_{c.value}"] for c in Channel},
        )

    def flat(self) -> dict[str, Any]:
        nested = self.to_dict()
        return {
            "epoch": self.epoch,
            **nested["losses"],
            **nested["metrics"],
            **nested["drift"],
        }

    def __str__(self) -> str:
        drift = f"  EM {self.em:.4f}" if self.em is not None else ""
        drift += f"  EV {self.ev:.4f}" if self.ev is not None else ""
        return (
            f"epoch {self.epoch:>3}  rs {self.losses.rs:.4f}  kds {self.losses.kds:.4f}  "
            f"kdc {self.losses.kdc:.4f}  |  {self.metrics}{drift}"
        )


@dataclass
class RunReport:
    config: dict[str, Any]
    seed: int
    variant: str = "kd"
    drift_pairs: int = 0
    rows: list[EpochRow] = field(default_factory=list)

    @property
    def best(self) -> Optional[EpochRow]:
        """Best epoch by HR@20; the earliest wins ties."""
        best = None
        for row in self.rows:
            if best is None or row.metrics.hr20 > best.metrics.hr20:
                best = row
        return best

    @property
    def final(self) -> Optional[EpochRow]:
        return self.rows[-1] if self.rows else None

    def to_dict(self) -> dict[str, Any]:
        best = self.best
        return {
            "config": self.config,
            "seed": self.seed,
            "variant": self.variant,
            "drift_pairs": self.drift_pairs,
            "best_epoch": best.epoch if best is not None else None,
            "rows": [row.to_dict() for row in self.rows],
        }

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.flat() for row in self.rows], columns=CSV_COLUMNS)

    def write_json(self, path: PathLike) -> None:
        write_json(self.to_dict(), path)

    def write_csv(self, path: PathLike) -> None:
        write_frame(self.frame(), path)

    def __str__(self) -> str:
        best = self.best
        lines = "\n".join(str(row) for row in self.rows)
        string = inspect.cleandoc(f"""
        Variant: {self.variant}
        Seed: {self.seed}
        Epochs Run: {max(len(self.rows) - 1, 0)}
        Best Epoch (HR@20): {best.epoch if best is not None else '-'}
        """)
        return f"{string}\n{lines}"


def write_frame(frame: pd.DataFrame, path: PathLike) -> None:
    frame.to_csv(path, index=False)


def write_json(payload: dict[str, Any], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as file:
        json.dump(payload, file, indent=2)
        file.write("\n")
