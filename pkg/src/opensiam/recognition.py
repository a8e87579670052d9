"""Open-set decisions from the minimum embedding distance to the gallery."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from opensiam.dataset import FeatureStore, ProtocolSplit
from opensiam.siamese import SiameseNet, euclidean, forward


class Decision(enum.Enum):
    KNOWN = "known"
    UNKNOWN = "unknown"


@dataclass(frozen=True, eq=False)
class GalleryIndex:
    """Embeddings of the gallery train samples, one row per entry."""

    identities: tuple[str, ...]
    sample_indices: tuple[int, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        if len(self.identities) == 0:
            raise ValueError("gallery index must have at least one entry")
        if self.embeddings.ndim != 2 or len(self.embeddings) != len(self.identities):
            raise ValueError("embeddings must be a 2-d array with one row per entry")
        self.embeddings.flags.writeable = False

    def __len__(self) -> int:
        return len(self.identities)


@dataclass(frozen=True)
class ProbeScore:
    score: float
    nearest_identity: str
    nearest_index: int


def embed_gallery(net: SiameseNet, store: FeatureStore, indices: Sequence[int]) -> GalleryIndex:
    if len(indices) == 0:
        raise ValueError("cannot build a gallery from an empty train set")
    # one forward per vector, the same code path as distance()
    emb = np.stack([forward(net, store.vectors[i]) for i in indices])
    return GalleryIndex(
        identities=tuple(store.labels[i] for i in indices),
        sample_indices=tuple(int(i) for i in indices),
        embeddings=emb,
    )


def build_gallery(net: SiameseNet, split: ProtocolSplit, store: FeatureStore) -> GalleryIndex:
    """Embed every train sample of the split once."""
    return embed_gallery(net, store, split.train)


def score_probe(index: GalleryIndex, net: SiameseNet, probe) -> ProbeScore:
    """Minimum distance from ``probe`` to any gallery entry.

    Ties go to the earliest entry.
    """
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 1:
        raise ValueError(f"probe must be a single vector, got shape {probe.shape}")
    d = euclidean(index.embeddings, forward(net, probe))
    j = int(np.argmin(d))
    return ProbeScore(float(d[j]), index.identities[j], index.sample_indices[j])


def score_many(index: GalleryIndex, net: SiameseNet, probes: Iterable) -> list[ProbeScore]:
    return [score_probe(index, net, p) for p in probes]


def decide(score: float, threshold: float) -> Decision:
    return Decision.KNOWN if score <= threshold else Decision.UNKNOWN


def _rates(known: np.ndarray, unknown: np.ndarray, t: np.ndarray):
    # accept when score <= t
    fpr = np.searchsorted(np.sort(unknown), t, side="right") / len(unknown)
    tpr = np.searchsorted(np.sort(known), t, side="right") / len(known)
    return fpr, 1.0 - tpr


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent distinct scores, plus one threshold below
    every score (reject all) and the maximum score (accept all)."""
    s = np.unique(scores)
    mids = (s[:-1] + s[1:]) / 2
    return np.concatenate([[np.nextafter(s[0], -np.inf)], mids, [s[-1]]])


def calibrate_threshold(known_scores, unknown_scores, policy: str = "equal_error",
                        alpha: float | None = None) -> float:
    """Pick an operating threshold from labeled scores.

    ``equal_error`` minimizes ``|FPR - FNR|`` over the candidate thresholds,
    breaking ties by the smaller ``FPR + FNR`` and then the smaller threshold.
    ``target_fpr`` returns the largest candidate with ``FPR <= alpha``.
    """
    known = np.asarray(known_scores, dtype=np.float64)
    unknown = np.asarray(unknown_scores, dtype=np.float64)
    if known.size == 0 or unknown.size == 0:
        raise ValueError("calibration needs at least one known and one unknown score")
    cands = candidate_thresholds(np.concatenate([known, unknown]))
    fpr, fnr = _rates(known, unknown, cands)
    if policy == "equal_error":
        order = np.lexsort((cands, fpr + fnr, np.abs(fpr - fnr)))
        return float(cands[order[0]])
    if policy == "target_fpr":
        if alpha is None or not 0 <= alpha <= 1:
            raise ValueError(f"target_fpr needs alpha in [0, 1], got {alpha}")
        ok = np.flatnonzero(fpr <= alpha)
        # the lowest candidate rejects everything, so ok is never empty
        return float(cands[ok[-1]])
    raise ValueError(f"unknown policy {policy!r}; expected 'equal_error' or 'target_fpr'")


@dataclass(frozen=True)
class ScoreRecord:
    probe_id: str
    truth: Decision
    score: float
    nearest_identity: str


def write_scores(records: Iterable[ScoreRecord], path: str | os.PathLike) -> None:
    """One ``<probe_id>,<known|unknown>,<score>,<nearest_identity>`` line per probe."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.probe_id},{r.truth.value},{r.score!r},{r.nearest_identity}\n")


def read_scores(path: str | os.PathLike) -> list[ScoreRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 comma-separated fields")
            probe_id, truth, score, nearest = parts
            try:
                out.append(ScoreRecord(probe_id, Decision(truth), float(score), nearest))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def split_scores(records: Iterable[ScoreRecord]) -> tuple[list[float], list[float]]:
    known, unknown = [], []
    for r in records:
        (known if r.truth is Decision.KNOWN else unknown).append(r.score)
    return known, unknown
