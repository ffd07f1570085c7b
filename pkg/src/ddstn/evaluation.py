"""Target-only prediction, classification metrics, ROC/AUC and the CV harness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datagen import BimodalDataset, FoldPlan
from .exceptions import DataError, MetricError
from .networks import NetworkParams, forward
from .training import TrainConfig, TrainedModel, train

METRICS = ("acc", "sen", "spe", "yi")


def predict(model: TrainedModel | NetworkParams, X_t) -> tuple[np.ndarray, np.ndarray]:
    """Scores from the target channel and labels (+1 when score >= 0, else -1)."""
    net = model.target if isinstance(model, TrainedModel) else model
    scores = forward(net, X_t)["scores"]
    return scores, np.where(scores >= 0, 1.0, -1.0)


def metrics(pred_labels, true_labels) -> dict[str, float]:
    """ACC, SEN, SPE and Youden index with +1 as the positive class."""
    pred = np.asarray(pred_labels, dtype=np.float64).ravel()
    true = np.asarray(true_labels, dtype=np.float64).ravel()
    if pred.shape != true.shape or true.size == 0:
        raise MetricError(f"need equal, non-empty label arrays, got {pred.shape} and {true.shape}")
    pos, neg = true > 0, true < 0
    if not pos.any():
        raise MetricError("sensitivity undefined: no positive (+1) samples in ground truth")
    if not neg.any():
        raise MetricError("specificity undefined: no negative (-1) samples in ground truth")
    tp = int(np.sum(pred[pos] > 0))
    tn = int(np.sum(pred[neg] < 0))
    sen = tp / int(pos.sum())
    spe = tn / int(neg.sum())
    return {"acc": (tp + tn) / true.size, "sen": sen, "spe": spe, "yi": sen + spe - 1.0}


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(scores, true_labels) -> RocCurve:
    """ROC over descending unique scores (ties share one threshold), trapezoidal AUC.

    The first threshold is ``inf`` and yields the point (0, 0); a sample is
    called positive when its score is >= the threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(true_labels, dtype=np.float64).ravel()
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores but {y.size} labels")
    n_pos, n_neg = int(np.sum(y > 0)), int(np.sum(y < 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes; missing " + ("+1" if n_pos == 0 else "-1"))
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y > 0)[ends]
    fp = np.cumsum(y < 0)[ends]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def _sd(values: list[float]) -> float:
    # equal values give exactly 0 (np.std can leave rounding residue from the mean)
    if len(values) < 2 or all(v == values[0] for v in values):
        return 0.0
    return float(np.std(values, ddof=1))


@dataclass
class FoldResult:
    fold: int
    train_ids: list[str]
    test_ids: list[str]
    metrics: dict[str, float]
    auc: float
    roc: RocCurve
    scores: np.ndarray
    labels: np.ndarray

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            **self.metrics,
            "auc": self.auc,
            "roc": [[f, t] for f, t in self.roc.points()],
        }


@dataclass
class EvalReport:
    """Per-fold results plus mean and sample SD of every metric."""

    folds: list[FoldResult]
    algorithm: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for m in METRICS + ("auc",):
            vals = [f.auc if m == "auc" else f.metrics[m] for f in self.folds]
            out[m] = {"mean": float(np.mean(vals)), "sd": _sd(vals)}
        return out

    def pooled_roc(self) -> RocCurve:
        return roc_auc(
            np.concatenate([f.scores for f in self.folds]),
            np.concatenate([f.labels for f in self.folds]),
        )

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "folds": [f.to_dict() for f in self.folds],
            "aggregate": self.aggregate,
            "pooled_auc": self.pooled_roc().auc,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(model: TrainedModel, X_t, y, fold: int = 0, train_ids=(), test_ids=()) -> FoldResult:
    scores, labels = predict(model, X_t)
    roc = roc_auc(scores, y)
    return FoldResult(
        fold, list(train_ids), list(test_ids), metrics(labels, y), roc.auc, roc,
        scores, np.asarray(y, dtype=np.float64),
    )


@dataclass
class Trainer:
    """Training-run descriptor: algorithm, channel specs and training config."""

    kind: str = "ddstn"
    specs: object = None
    cfg: TrainConfig = TrainConfig()

    def fit(self, ds: BimodalDataset) -> TrainedModel:
        return train(self.kind, ds, self.specs, self.cfg)


def cross_validate(
    ds: BimodalDataset,
    plan: FoldPlan,
    trainer: Trainer | Callable[[BimodalDataset], TrainedModel],
) -> EvalReport:
    """Train on all paired + the non-test unpaired records, test on each fold."""
    known = set(ds.unpaired_ids)
    paired = set(ds.paired_ids)
    fit = trainer.fit if isinstance(trainer, Trainer) else trainer
    results = []
    for k, test_ids in enumerate(plan.folds):
        unknown = [i for i in test_ids if i not in known]
        if unknown:
            bad = [i for i in unknown if i in paired]
            what = "paired id(s) in a test fold" if bad else "unknown id(s)"
            raise DataError(f"fold {k}: {what}: {unknown[:5]}")
        train_ids = plan.train_ids(ds, k)
        model = fit(ds.subset_unpaired(train_ids))
        test = ds.subset_unpaired(list(test_ids))
        results.append(evaluate(model, test.X_tu, test.y_u, k, train_ids, test_ids))
    return EvalReport(results, getattr(trainer, "kind", ""))


def write_roc_csv(roc: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(roc.thresholds, roc.fpr, roc.tpr):
            w.writerow([format(t, ".17g"), format(f, ".17g"), format(p, ".17g")])
