"""Balanced positive/negative training pairs (pairing algorithms P1 and P2).

Both algorithms walk the gallery training samples. For every anchor ``x`` they
emit ``z`` positives ``(x, random sample of id(x))`` per negative group:

* P1 pairs ``x`` with ``z`` random samples of *every* other known identity,
  giving ``n * 2(k-1) * z`` pairs.
* P2 pairs ``x`` with ``z`` random samples of randomly chosen other
  identities, giving ``n * 2 * z`` pairs.

Partners are drawn uniformly with replacement from the identity's train
samples, so repeats happen and a positive can be the self-pair ``(x, x)``.
Label 0 marks a same-identity pair, 1 a different-identity pair.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from opensiam.dataset import FeatureStore, ProtocolSplit
from opensiam.rng import make_rng

log = logging.getLogger(__name__)

SAME = 0
DIFFERENT = 1


class PairingError(ValueError):
    pass


class Pair(NamedTuple):
    a: int
    b: int
    label: int


@dataclass(frozen=True, eq=False)
class PairSet:
    """Pairs stored column-wise as int64 arrays ``a``, ``b``, ``label``."""

    a: np.ndarray
    b: np.ndarray
    label: np.ndarray
    z: int
    algorithm: str
    seed: int

    def __len__(self) -> int:
        return len(self.a)

    @property
    def pairs(self) -> list[Pair]:
        return [Pair(int(a), int(b), int(y)) for a, b, y in zip(self.a, self.b, self.label)]

    def n_positive(self) -> int:
        return int(np.count_nonzero(self.label == SAME))

    def n_negative(self) -> int:
        return int(np.count_nonzero(self.label == DIFFERENT))

    def to_text(self) -> str:
        return "".join(f"{a},{b},{y}\n" for a, b, y in zip(self.a, self.b, self.label))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


def read_pairs(path: str | os.PathLike) -> list[Pair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                a, b, y = (int(v) for v in line.split(","))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected '<a>,<b>,<label>'") from None
            out.append(Pair(a, b, y))
    return out


def _groups(split: ProtocolSplit, store: FeatureStore, z: int) -> tuple[list[str], list[np.ndarray]]:
    if z < 0:
        raise PairingError(f"z must be nonnegative, got {z}")
    groups = split.train_by_identity(store)
    if len(groups) < 2:
        raise PairingError(f"need at least 2 known identities for negative pairs, got {len(groups)}")
    for ident, members in groups.items():
        if not members:
            raise PairingError(f"known identity {ident!r} has no train samples")
        if len(members) == 1 and z > 0:
            log.warning("identity %r has a single train sample; its positives are self-pairs", ident)
    names = list(groups)
    return names, [np.asarray(groups[n], dtype=np.int64) for n in names]


def _assemble(anchors, neg, pos, z, algorithm, seed) -> PairSet:
    # per anchor row: its negatives then its positives, interleaved neg/pos
    a = np.repeat(np.asarray(anchors, dtype=np.int64), 2 * neg.shape[1])
    b = np.empty((len(anchors), 2 * neg.shape[1]), dtype=np.int64)
    b[:, 0::2] = neg
    b[:, 1::2] = pos
    label = np.tile(np.array([DIFFERENT, SAME], dtype=np.int64), b.size // 2)
    return PairSet(a=a, b=b.reshape(-1), label=label, z=z, algorithm=algorithm, seed=seed)


def pair_p1(split: ProtocolSplit, store: FeatureStore, z: int, rng_seed: int = 0) -> PairSet:
    """Pair every train sample with ``z`` samples of each other identity.

    Returns ``n * 2(k-1) * z`` pairs, half positive.
    """
    names, members = _groups(split, store, z)
    k = len(names)
    owner = {int(i): g for g, m in enumerate(members) for i in m}
    rng = make_rng(rng_seed)
    anchors = list(split.train)
    neg = np.empty((len(anchors), (k - 1) * z), dtype=np.int64)
    pos = np.empty_like(neg)
    sizes = np.array([len(m) for m in members])
    for row, x in enumerate(anchors):
        g = owner[x]
        others = np.repeat([j for j in range(k) if j != g], z)
        picks = rng.integers(0, sizes[others])
        neg[row] = [members[j][p] for j, p in zip(others, picks)]
        pos[row] = members[g][rng.integers(0, sizes[g], size=len(others))]
    return _assemble(anchors, neg, pos, z, "P1", rng_seed)


def pair_p2(split: ProtocolSplit, store: FeatureStore, z: int, rng_seed: int = 0) -> PairSet:
    """Pair every train sample with ``z`` samples of random other identities.

    Each negative partner's identity is uniform over the other ``k - 1``
    known identities. Returns ``n * 2 * z`` pairs, half positive.
    """
    names, members = _groups(split, store, z)
    k = len(names)
    owner = {int(i): g for g, m in enumerate(members) for i in m}
    rng = make_rng(rng_seed)
    anchors = list(split.train)
    neg = np.empty((len(anchors), z), dtype=np.int64)
    pos = np.empty_like(neg)
    sizes = np.array([len(m) for m in members])
    for row, x in enumerate(anchors):
        g = owner[x]
        # uniform over the other identities: draw from k-1 and skip g
        others = rng.integers(0, k - 1, size=z)
        others[others >= g] += 1
        picks = rng.integers(0, sizes[others])
        neg[row] = [members[j][p] for j, p in zip(others, picks)]
        pos[row] = members[g][rng.integers(0, sizes[g], size=z)]
    return _assemble(anchors, neg, pos, z, "P2", rng_seed)


PAIRING = {"P1": pair_p1, "P2": pair_p2}


def make_pairs(algorithm: str, split: ProtocolSplit, store: FeatureStore, z: int, rng_seed: int = 0) -> PairSet:
    try:
        fn = PAIRING[algorithm.upper()]
    except KeyError:
        raise PairingError(f"unknown pairing algorithm {algorithm!r}; expected P1 or P2") from None
    return fn(split, store, z, rng_seed)
