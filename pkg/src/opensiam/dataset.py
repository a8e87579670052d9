"""Labeled feature vectors and open-set protocol splits."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from opensiam.rng import make_rng

DEFAULT_DIM = 2622


class FeatureFileError(ValueError):
    """Malformed feature file; the message names the offending line."""


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureStore:
    """Feature vectors in file order, each tagged with an identity label.

    ``vectors`` is an ``(n, dim)`` float64 array flagged read-only.
    ``identity_index`` maps each identity to its sample indices, identities
    appearing in order of first occurrence.
    """

    dim: int
    labels: tuple[str, ...]
    vectors: np.ndarray
    identity_index: Mapping[str, tuple[int, ...]] = field(repr=False)

    @classmethod
    def from_arrays(cls, labels: Sequence[str], vectors, dim: int | None = None) -> FeatureStore:
        labels = tuple(str(lab) for lab in labels)
        vecs = np.array(vectors, dtype=np.float64, copy=True)
        if dim is None:
            if vecs.ndim != 2:
                raise ValueError("cannot infer dim from an empty or 1-d array")
            dim = vecs.shape[1]
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        vecs = vecs.reshape(len(labels), dim) if vecs.size == 0 else vecs
        if vecs.ndim != 2 or vecs.shape != (len(labels), dim):
            raise ValueError(
                f"vectors have shape {vecs.shape}, expected ({len(labels)}, {dim})"
            )
        if not np.all(np.isfinite(vecs)):
            raise ValueError("feature vectors contain non-finite values")
        index: dict[str, list[int]] = {}
        for i, lab in enumerate(labels):
            index.setdefault(lab, []).append(i)
        vecs.flags.writeable = False
        return cls(
            dim=dim,
            labels=labels,
            vectors=vecs,
            identity_index={k: tuple(v) for k, v in index.items()},
        )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def identities(self) -> list[str]:
        return list(self.identity_index)

    def identity(self, i: int) -> str:
        return self.labels[i]

    def samples_of(self, identity: str) -> tuple[int, ...]:
        return self.identity_index[identity]

    def same_as(self, other: FeatureStore) -> bool:
        return (
            self.dim == other.dim
            and self.labels == other.labels
            and np.array_equal(self.vectors, other.vectors)
        )


def load_features(path: str | os.PathLike) -> FeatureStore:
    """Parse the text feature format.

    Line 1 is ``dim <D>``; every later nonempty, non-``#`` line is
    ``<identity>,<v1>,...,<vD>``. Comment and blank lines may also precede the
    header.
    """
    dim = None
    labels: list[str] = []
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if dim is None:
                parts = line.split()
                if len(parts) != 2 or parts[0] != "dim":
                    raise FeatureFileError(f"{path}:{lineno}: expected header 'dim <D>', got {line!r}")
                try:
                    dim = int(parts[1])
                except ValueError:
                    raise FeatureFileError(f"{path}:{lineno}: dim is not an integer: {parts[1]!r}") from None
                if dim < 1:
                    raise FeatureFileError(f"{path}:{lineno}: dim must be positive, got {dim}")
                continue
            fields = line.split(",")
            ident = fields[0].strip()
            if not ident:
                raise FeatureFileError(f"{path}:{lineno}: empty identity label")
            if len(fields) - 1 != dim:
                raise FeatureFileError(
                    f"{path}:{lineno}: row has {len(fields) - 1} values, header says dim={dim}"
                )
            try:
                vals = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise FeatureFileError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise FeatureFileError(f"{path}:{lineno}: non-finite value")
            labels.append(ident)
            rows.append(vals)
    if dim is None:
        raise FeatureFileError(f"{path}: missing 'dim <D>' header")
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return FeatureStore.from_arrays(labels, vectors, dim=dim)


def write_features(store: FeatureStore, path: str | os.PathLike) -> None:
    """Write ``store`` in the text format.

    Values use ``repr``, the shortest decimal that parses back to the same
    float64, so loading the file reproduces the vectors bit for bit.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim {store.dim}\n")
        for lab, vec in zip(store.labels, store.vectors):
            if "," in lab or "\n" in lab:
                raise ValueError(f"identity label {lab!r} cannot be written")
            fh.write(lab + "," + ",".join(repr(float(v)) for v in vec) + "\n")


def generate_synthetic(
    k: int, samples_per_id: int, dim: int, spread: float, rng_seed: int
) -> FeatureStore:
    """Gaussian clusters standing in for real face descriptors.

    Identity centers are standard normal in ``dim`` dimensions; each sample is
    its center plus isotropic noise with standard deviation ``spread``.
    Labels are ``id000``, ``id001``, ...; samples are grouped by identity.
    """
    if k < 1 or samples_per_id < 1 or dim < 1:
        raise ValueError("k, samples_per_id and dim must all be >= 1")
    if spread < 0:
        raise ValueError(f"spread must be nonnegative, got {spread}")
    rng = make_rng(rng_seed)
    centers = rng.standard_normal((k, dim))
    noise = rng.standard_normal((k, samples_per_id, dim))
    vectors = (centers[:, None, :] + spread * noise).reshape(k * samples_per_id, dim)
    width = max(3, len(str(k - 1)))
    labels = [f"id{i:0{width}d}" for i in range(k) for _ in range(samples_per_id)]
    return FeatureStore.from_arrays(labels, vectors, dim=dim)


@dataclass(frozen=True)
class SplitSpec:
    """How many identities to enroll: a fraction (EP-I) or a count (EP-II)."""

    mode: str
    value: float
    min_samples_per_known: int = 2

    def __post_init__(self):
        if self.mode == "percentage":
            if not 0 < self.value <= 1:
                raise ValueError(f"percentage value must be in (0, 1], got {self.value}")
        elif self.mode == "absolute":
            if self.value < 1 or int(self.value) != self.value:
                raise ValueError(f"absolute value must be a positive integer, got {self.value}")
        else:
            raise ValueError(f"mode must be 'percentage' or 'absolute', got {self.mode!r}")
        if self.min_samples_per_known < 1:
            raise ValueError("min_samples_per_known must be >= 1")

    @classmethod
    def percentage(cls, value: float, min_samples_per_known: int = 2) -> SplitSpec:
        return cls("percentage", value, min_samples_per_known)

    @classmethod
    def absolute(cls, value: int, min_samples_per_known: int = 2) -> SplitSpec:
        return cls("absolute", value, min_samples_per_known)

    def known_count(self, n_identities: int) -> int:
        if self.mode == "percentage":
            # round half up
            return int(math.floor(self.value * n_identities + 0.5))
        return int(self.value)

    def label(self) -> str:
        if self.mode == "percentage":
            return f"{self.value * 100:g}%"
        return str(int(self.value))


@dataclass(frozen=True)
class ProtocolSplit:
    known_ids: frozenset[str]
    unknown_ids: frozenset[str]
    train: tuple[int, ...]
    test_known: tuple[int, ...]
    test_unknown: tuple[int, ...]
    seed: int

    def train_by_identity(self, store: FeatureStore) -> dict[str, list[int]]:
        """Train indices grouped per known identity, identities in store order."""
        groups: dict[str, list[int]] = {ident: [] for ident in store.identities if ident in self.known_ids}
        for i in self.train:
            groups[store.labels[i]].append(i)
        return groups

    def check(self, store: FeatureStore) -> None:
        """Raise AssertionError if any split invariant is violated."""
        assert not self.known_ids & self.unknown_ids
        assert self.known_ids | self.unknown_ids == set(store.identities)
        train, test_known = set(self.train), set(self.test_known)
        assert not train & test_known
        known_samples = {i for ident in self.known_ids for i in store.samples_of(ident)}
        unknown_samples = {i for ident in self.unknown_ids for i in store.samples_of(ident)}
        assert train | test_known == known_samples
        assert set(self.test_unknown) == unknown_samples
        for ident in self.known_ids:
            s = set(store.samples_of(ident))
            assert s & train and s & test_known, ident


def make_split(
    store: FeatureStore,
    spec: SplitSpec,
    train_fraction: float = 0.5,
    rng_seed: int = 0,
) -> ProtocolSplit:
    """Pick known identities at random and split their samples into train/test.

    Only identities with at least ``spec.min_samples_per_known`` samples are
    eligible as known. Each known identity's samples are shuffled; train takes
    ``floor(n * train_fraction)`` of them, clamped so both sides are nonempty.
    Every sample of every other identity becomes an unknown probe.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    identities = store.identities
    n_known = spec.known_count(len(identities))
    if n_known < 1:
        raise SplitError(
            f"{spec.label()} of {len(identities)} identities selects no known identity"
        )
    eligible = [i for i in identities if len(store.samples_of(i)) >= spec.min_samples_per_known]
    if len(eligible) < n_known:
        raise SplitError(
            f"need {n_known} known identities but only {len(eligible)} have "
            f">= {spec.min_samples_per_known} samples"
        )

    rng = make_rng(rng_seed)
    picked = rng.choice(len(eligible), size=n_known, replace=False)
    known = frozenset(eligible[j] for j in picked)

    train: list[int] = []
    test_known: list[int] = []
    for ident in identities:
        if ident not in known:
            continue
        samples = np.array(store.samples_of(ident), dtype=np.int64)
        n = len(samples)
        if n < 2:
            raise SplitError(f"known identity {ident!r} has {n} sample; cannot give both train and test one")
        perm = rng.permutation(samples)
        n_train = min(max(1, math.floor(n * train_fraction)), n - 1)
        train.extend(int(i) for i in perm[:n_train])
        test_known.extend(int(i) for i in perm[n_train:])

    unknown = frozenset(identities) - known
    test_unknown = [i for i, lab in enumerate(store.labels) if lab in unknown]
    return ProtocolSplit(
        known_ids=known,
        unknown_ids=unknown,
        train=tuple(sorted(train)),
        test_known=tuple(sorted(test_known)),
        test_unknown=tuple(test_unknown),
        seed=rng_seed,
    )

