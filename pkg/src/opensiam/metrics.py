"""ROC curves, AUC and aggregation over repeated trials.

Scores are distances: a probe is accepted as known when ``score <= t``. The
positive class is the known probes, so ``TPR(t)`` is the fraction of known
scores ``<= t`` and ``FPR(t)`` the fraction of unknown scores ``<= t``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class RocReport:
    """Step ROC from ``(0, 0)`` to ``(1, 1)``.

    The end points carry the sentinel thresholds ``-inf`` and ``+inf``.
    """

    points: tuple[RocPoint, ...]
    auc: float

    def to_text(self) -> str:
        lines = [f"# auc {self.auc!r}", "fpr,tpr,threshold"]
        lines += [f"{p.fpr!r},{p.tpr!r},{p.threshold!r}" for p in self.points]
        return "\n".join(lines) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


def _as_scores(scores, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty; AUC is undefined without both known and unknown probes")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite scores")
    return arr


def roc(known_scores, unknown_scores) -> RocReport:
    """Sweep every distinct score as a threshold and integrate by trapezoids.

    Equal scores flip together, so ties produce diagonal segments. The area is
    accumulated in integer counts and divided once at the end.
    """
    known = _as_scores(known_scores, "known_scores")
    unknown = _as_scores(unknown_scores, "unknown_scores")
    thresholds = np.unique(np.concatenate([known, unknown]))
    tp = np.searchsorted(np.sort(known), thresholds, side="right")
    fp = np.searchsorted(np.sort(unknown), thresholds, side="right")
    P, N = len(known), len(unknown)

    tp_all = np.concatenate([[0], tp])
    fp_all = np.concatenate([[0], fp])
    # twice the area in count units: sum dFP * (TP_i + TP_{i-1})
    twice_area = int(np.sum(np.diff(fp_all) * (tp_all[1:] + tp_all[:-1])))
    auc = twice_area / (2 * P * N)

    points = [RocPoint(0.0, 0.0, -math.inf)]
    points += [RocPoint(f / N, t / P, float(th)) for f, t, th in zip(fp, tp, thresholds)]
    points.append(RocPoint(1.0, 1.0, math.inf))
    return RocReport(points=tuple(points), auc=auc)


def auc_mw(known_scores, unknown_scores) -> float:
    """Mann-Whitney AUC by direct enumeration of all (known, unknown) pairs.

    A pair counts 1 when the known score is smaller, 0.5 on a tie.
    """
    known = _as_scores(known_scores, "known_scores")
    unknown = _as_scores(unknown_scores, "unknown_scores")
    wins = 0
    ties = 0
    for k in known:
        wins += int(np.count_nonzero(k < unknown))
        ties += int(np.count_nonzero(k == unknown))
    return (2 * wins + ties) / (2 * len(known) * len(unknown))


@dataclass(frozen=True)
class TrialAggregate:
    """Mean and sample standard deviation (n - 1 denominator) of per-trial AUCs.

    With a single trial the standard deviation is reported as 0.
    """

    aucs: tuple[float, ...]
    mean: float
    std: float

    def formatted(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def aggregate(aucs: Sequence[float]) -> TrialAggregate:
    values = np.asarray(aucs, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot aggregate an empty list of AUCs")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return TrialAggregate(aucs=tuple(float(v) for v in values), mean=mean, std=std)
