"""Graph recovery metrics and MSE-based model selection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MetricReport:
    auroc: float
    auprc: float
    shd: int
    test_mse: float | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _flat(scores, truth):
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth).ravel()
    if scores.shape != truth.shape:
        raise ValueError("scores and truth differ in shape")
    return scores, truth.astype(bool)


def auroc(scores, truth) -> float:
    """Rank-sum AUROC with midranks, so ties count one half."""
    s, y = _flat(scores, truth)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes in the truth")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, truth) -> float:
    """Step-wise area under the precision-recall curve (average precision)."""
    s, y = _flat(scores, truth)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # evaluate only at the last index of each run of tied scores
    last = np.r_[s[1:] != s[:-1], True]
    tp = tp[last]
    k = np.flatnonzero(last) + 1
    precision = tp / k
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def shd(pred, truth) -> int:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return int(np.sum(pred.astype(bool) != truth.astype(bool)))


def test_mse(predictions, actuals) -> float:
    p, a = np.asarray(predictions, dtype=float), np.asarray(actuals, dtype=float)
    if p.shape != a.shape:
        raise ValueError("predictions and actuals are misaligned")
    if p.size == 0:
        raise ValueError("empty test set")
    return float(np.mean((p - a) ** 2))


test_mse.__test__ = False  # keep pytest from collecting it


def select_model(runs):
    """V with the lowest test MSE; ties go to the smaller V."""
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to select from")
    return min(runs, key=lambda vr: (vr[1].test_mse, vr[0]))[0]
