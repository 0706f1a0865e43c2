"""Ordinal and binary evaluation metrics.

Predictions land on the 1..5 label scale (model outputs are rounded and
clipped first). Binary metrics rebin labels 1-2 as "low" attention
difficulty and 3-5 as "high". Fold aggregation reports mean and population
(1/k) standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteValue, OutOfRange
from .validation import check_consistent_length, check_labels
from .windows import round_half_away

LOW, HIGH = "low", "high"


def round_clip(yhat):
    """Decode a real-valued encoded prediction (0..4 scale) to a label 1..5:
    round half away from zero, clip to [0, 4], add 1."""
    arr = np.asarray(yhat, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("prediction is not finite")
    out = np.clip(round_half_away(arr), 0.0, 4.0).astype(np.int64) + 1
    return int(out) if arr.ndim == 0 else out


def rebin_binary(label: int) -> str:
    """Labels 1-2 -> low, 3-5 -> high."""
    if label not in (1, 2, 3, 4, 5):
        raise OutOfRange(f"label {label} outside 1..5")
    return LOW if label <= 2 else HIGH


def _as_high(values) -> np.ndarray:
    return np.asarray(values) >= 3


def mae(preds, labels) -> float:
    """Mean absolute error on the 1..5 scale."""
    check_consistent_length(preds, labels)
    labels = check_labels(labels)
    preds = np.asarray(preds, dtype=np.float64)
    return float(np.mean(np.abs(preds - labels)))


def within1(preds, labels) -> float:
    """Percentage of predictions within one ordinal step of the label."""
    check_consistent_length(preds, labels)
    labels = check_labels(labels)
    preds = np.asarray(preds, dtype=np.float64)
    return float(100.0 * np.mean(np.abs(preds - labels) <= 1.0))


def binary_acc(preds, labels) -> float:
    """Percentage agreement after rebinning both sides to low/high."""
    check_consistent_length(preds, labels)
    labels = check_labels(labels)
    preds = check_labels(preds, name="predictions")
    return float(100.0 * np.mean(_as_high(preds) == _as_high(labels)))


def binary_macro_f1(preds, labels) -> float:
    """Unweighted mean of the low/high F1 scores, in percent.

    A class absent from both predictions and labels is skipped; a class
    with true instances but no correct predictions scores 0.
    """
    check_consistent_length(preds, labels)
    labels = check_labels(labels)
    preds = check_labels(preds, name="predictions")
    pred_high = _as_high(preds)
    true_high = _as_high(labels)
    f1s = []
    for is_high in (False, True):
        p_mask = pred_high == is_high
        t_mask = true_high == is_high
        n_pred = int(p_mask.sum())
        n_true = int(t_mask.sum())
        if n_pred == 0 and n_true == 0:
            continue
        tp = int((p_mask & t_mask).sum())
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true if n_true else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1s.append(f1)
    return float(100.0 * np.mean(f1s)) if f1s else 0.0


METRIC_FIELDS = ("mae", "within1", "binary_acc", "macro_f1")


@dataclass
class MetricsBundle:
    """The four headline metrics for one prediction set."""

    mae: float
    within1: float
    binary_acc: float
    macro_f1: float
    n: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "within1": self.within1,
                "binary_acc": self.binary_acc, "macro_f1": self.macro_f1,
                "n": self.n}


def evaluate_predictions(preds, labels) -> MetricsBundle:
    return MetricsBundle(
        mae=mae(preds, labels),
        within1=within1(preds, labels),
        binary_acc=binary_acc(preds, labels),
        macro_f1=binary_macro_f1(preds, labels),
        n=len(labels),
    )


@dataclass
class MetricsReport:
    """Per-fold and aggregate metrics plus run metadata."""

    model: str
    per_fold: list
    seed: int | None = None
    config_hash: str | None = None
    modalities: tuple | None = None
    metadata: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        out = {}
        for name in METRIC_FIELDS:
            vals = np.array([getattr(f, name) for f in self.per_fold], dtype=np.float64)
            out[name] = {"mean": float(vals.mean()),
                         "std": float(vals.std())}  # population convention
        return out

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "per_fold": [f.to_dict() for f in self.per_fold],
            "aggregate": self.aggregate(),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "modalities": list(self.modalities) if self.modalities else None,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        per_fold = [MetricsBundle(**f) for f in payload["per_fold"]]
        mods = payload.get("modalities")
        return cls(model=payload["model"], per_fold=per_fold,
                   seed=payload.get("seed"), config_hash=payload.get("config_hash"),
                   modalities=tuple(mods) if mods else None,
                   metadata=payload.get("metadata", {}))

    def summary_row(self) -> str:
        agg = self.aggregate()
        cells = [
            f"{agg['mae']['mean']:.3f} ± {agg['mae']['std']:.3f}",
            f"{agg['within1']['mean']:.2f} ± {agg['within1']['std']:.2f}",
            f"{agg['binary_acc']['mean']:.2f} ± {agg['binary_acc']['std']:.2f}",
            f"{agg['macro_f1']['mean']:.2f} ± {agg['macro_f1']['std']:.2f}",
        ]
        return " | ".join([self.model.ljust(24), *[c.rjust(16) for c in cells]])


TABLE_HEADER = " | ".join(
    ["Model".ljust(24)]
    + [c.rjust(16) for c in ("MAE", "Within-1 Acc (%)", "Binary Acc (%)", "Macro-F1 (%)")]
)
