"""Repeated open-set experiments: split, pair, train, score, ROC, aggregate.

Seeds
-----
Trial ``r`` of protocol point ``p`` gets ``trial_seed = mix_seed(master_seed,
p, r)``. Its stages use ``mix_seed(trial_seed, stage)`` with stage 1 = split,
2 = pairing, 3 = weight init, 4 = batch shuffling. The seeds are written to
the report, so any single trial can be rerun on its own with
:func:`run_trial`.

Config file
-----------
JSON with these keys (defaults in brackets)::

    features        path to a feature file, or
                    {"synthetic": {"k", "samples_per_id", "dim", "spread", "seed"}}
    protocol        "EP-I" (10%, 50%, 90%), "EP-II" (5, 10, 15, 20), or
                    {"mode": "percentage"|"absolute", "values": [...]}
    min_samples_per_known  [2]
    train_fraction  [0.5]
    pairing         {"algorithm": "P1"|"P2" ["P1"], "z": int [2]}
    network         {"hidden_dims": [h1, h2, h3] [2048, 2048, 2048]}
    train           {"margin" [1.0], "learning_rate" [0.01], "epochs" [50],
                     "batch_size" [32]}
    repetitions     [10]
    master_seed     [0]
    output_dir      [null: nothing written]
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from opensiam import rng as rngmod
from opensiam.dataset import FeatureStore, ProtocolSplit, SplitSpec, generate_synthetic, load_features, make_split
from opensiam.metrics import RocReport, TrialAggregate, aggregate, roc
from opensiam.pairing import make_pairs
from opensiam.recognition import build_gallery, score_probe
from opensiam.siamese import TrainConfig, init_net, train

log = logging.getLogger(__name__)

PRESETS = {
    "EP-I": ("percentage", [0.1, 0.5, 0.9]),
    "EP-II": ("absolute", [5, 10, 15, 20]),
}


class ExperimentError(RuntimeError):
    """A stage failed; ``stage``, ``point`` and ``trial`` say where."""

    def __init__(self, stage: str, message: str, point: str | None = None, trial: int | None = None):
        self.stage = stage
        self.point = point
        self.trial = trial
        where = f"[{stage}]"
        if point is not None:
            where += f" point={point}"
        if trial is not None:
            where += f" trial={trial}"
        super().__init__(f"{where} {message}")


@dataclass(frozen=True)
class SyntheticSpec:
    k: int
    samples_per_id: int
    dim: int
    spread: float
    seed: int = 0

    def build(self) -> FeatureStore:
        return generate_synthetic(self.k, self.samples_per_id, self.dim, self.spread, self.seed)


@dataclass
class ExperimentConfig:
    features: str | SyntheticSpec
    protocol: list[SplitSpec]
    pairing: str = "P1"
    z: int = 2
    hidden_dims: tuple[int, ...] = (2048, 2048, 2048)
    train: TrainConfig = field(default_factory=TrainConfig)
    repetitions: int = 10
    master_seed: int = 0
    train_fraction: float = 0.5
    output_dir: str | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.protocol:
            raise ValueError("protocol needs at least one point")
        if self.pairing.upper() not in ("P1", "P2"):
            raise ValueError(f"pairing must be P1 or P2, got {self.pairing!r}")
        self.pairing = self.pairing.upper()
        if self.z < 1:
            raise ValueError("z must be >= 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"invalid hidden_dims {self.hidden_dims}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.master_seed < 0:
            raise ValueError("master_seed must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentConfig:
        d = dict(d)
        feats = d.pop("features")
        if isinstance(feats, dict):
            feats = SyntheticSpec(**feats["synthetic"])
        min_samples = int(d.pop("min_samples_per_known", 2))
        proto = d.pop("protocol")
        if isinstance(proto, str):
            if proto not in PRESETS:
                raise ValueError(f"unknown protocol preset {proto!r}; expected one of {sorted(PRESETS)}")
            mode, values = PRESETS[proto]
        else:
            mode, values = proto["mode"], proto["values"]
        protocol = [SplitSpec(mode, v, min_samples) for v in values]
        pairing = d.pop("pairing", {})
        net = d.pop("network", {})
        tr = dict(d.pop("train", {}))
        tr.pop("rng_seed", None)
        unknown = set(d) - {"repetitions", "master_seed", "train_fraction", "output_dir"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            features=feats,
            protocol=protocol,
            pairing=pairing.get("algorithm", "P1"),
            z=int(pairing.get("z", 2)),
            hidden_dims=tuple(net.get("hidden_dims", (2048, 2048, 2048))),
            train=TrainConfig(**tr),
            **d,
        )

    def to_dict(self) -> dict[str, Any]:
        feats = self.features if isinstance(self.features, str) else {"synthetic": dataclasses.asdict(self.features)}
        modes = {s.mode for s in self.protocol}
        if len(modes) != 1 or len({s.min_samples_per_known for s in self.protocol}) != 1:
            raise ValueError("protocol points must share mode and min_samples_per_known")
        tr = dataclasses.asdict(self.train)
        tr.pop("rng_seed")
        return {
            "features": feats,
            "protocol": {"mode": modes.pop(), "values": [s.value for s in self.protocol]},
            "min_samples_per_known": self.protocol[0].min_samples_per_known,
            "train_fraction": self.train_fraction,
            "pairing": {"algorithm": self.pairing, "z": self.z},
            "network": {"hidden_dims": list(self.hidden_dims)},
            "train": tr,
            "repetitions": self.repetitions,
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
        }


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class TrialResult:
    point: int
    repetition: int
    trial_seed: int
    auc: float
    roc: RocReport
    n_known_ids: int
    n_unknown_ids: int
    n_pairs: int
    final_loss: float


@dataclass
class PointResult:
    spec: SplitSpec
    trials: list[TrialResult]
    summary: TrialAggregate


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    points: list[PointResult]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "std": "sample standard deviation (n - 1 denominator)",
            "seed_derivation": "trial_seed = mix_seed(master_seed, point, repetition); "
                               "stage seed = mix_seed(trial_seed, stage), stages split=1 pairs=2 init=3 train=4",
            "points": [
                {
                    "point": i,
                    "label": p.spec.label(),
                    "mode": p.spec.mode,
                    "value": p.spec.value,
                    "mean_auc": p.summary.mean,
                    "std_auc": p.summary.std,
                    "trials": [
                        {
                            "repetition": t.repetition,
                            "trial_seed": t.trial_seed,
                            "auc": t.auc,
                            "n_known_ids": t.n_known_ids,
                            "n_unknown_ids": t.n_unknown_ids,
                            "n_pairs": t.n_pairs,
                            "final_loss": t.final_loss,
                            "roc_file": f"roc/point{i}_rep{t.repetition}.csv",
                        }
                        for t in p.trials
                    ],
                }
                for i, p in enumerate(self.points)
            ],
        }

    def table(self) -> str:
        head = f"pairing {self.config.pairing}, z={self.config.z}, {self.config.repetitions} repetitions"
        lines = [head, f"{'known':>8}  AUC (mean ± sample std)"]
        for p in self.points:
            lines.append(f"{p.spec.label():>8}  {p.summary.formatted()}")
        return "\n".join(lines) + "\n"

    def write(self, output_dir: str | os.PathLike) -> None:
        out = Path(output_dir)
        (out / "roc").mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(self.points):
            for t in p.trials:
                t.roc.save(out / "roc" / f"point{i}_rep{t.repetition}.csv")
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")
        (out / "report.txt").write_text(self.table(), encoding="utf-8")


def trial_seed(master_seed: int, point: int, repetition: int) -> int:
    return rngmod.mix_seed(master_seed, point, repetition)


def _stage(name, fn, *args, point=None, trial=None):
    try:
        return fn(*args)
    except ExperimentError:
        raise
    except Exception as exc:  # noqa: BLE001  (rewrapped with stage context)
        raise ExperimentError(name, f"{type(exc).__name__}: {exc}", point, trial) from exc


def run_trial(store: FeatureStore, spec: SplitSpec, cfg: ExperimentConfig, seed: int,
              point: int = 0, repetition: int = 0) -> TrialResult:
    """One split/pair/train/score/ROC cycle, fully determined by ``seed``."""
    where = dict(point=spec.label(), trial=repetition)
    s = lambda stage: rngmod.mix_seed(seed, stage)  # noqa: E731
    split: ProtocolSplit = _stage(
        "split", make_split, store, spec, cfg.train_fraction, s(rngmod.STAGE_SPLIT), **where)
    if not split.test_unknown:
        raise ExperimentError(
            "split", f"{len(split.known_ids)} known of {len(store.identities)} identities leaves no "
            "unknown probes; AUC is undefined", **where)
    pairs = _stage("pairing", make_pairs, cfg.pairing, split, store, cfg.z, s(rngmod.STAGE_PAIRS), **where)
    net = _stage("init", init_net, (store.dim, *cfg.hidden_dims), s(rngmod.STAGE_INIT), **where)
    tcfg = dataclasses.replace(cfg.train, rng_seed=s(rngmod.STAGE_TRAIN))
    net, history = _stage("train", train, net, pairs, store, tcfg, **where)
    gallery = _stage("gallery", build_gallery, net, split, store, **where)

    def score_all():
        known = [score_probe(gallery, net, store.vectors[i]).score for i in split.test_known]
        unknown = [score_probe(gallery, net, store.vectors[i]).score for i in split.test_unknown]
        return roc(known, unknown)

    report = _stage("score", score_all, **where)
    return TrialResult(
        point=point,
        repetition=repetition,
        trial_seed=seed,
        auc=report.auc,
        roc=report,
        n_known_ids=len(split.known_ids),
        n_unknown_ids=len(split.unknown_ids),
        n_pairs=len(pairs),
        final_loss=history.epoch_loss[-1],
    )


def load_store(cfg: ExperimentConfig) -> FeatureStore:
    if isinstance(cfg.features, SyntheticSpec):
        return _stage("load", cfg.features.build)
    return _stage("load", load_features, cfg.features)


def _run_task(args):
    store, spec, cfg, seed, p, r = args
    return run_trial(store, spec, cfg, seed, p, r)


def run_experiment(cfg: ExperimentConfig, store: FeatureStore | None = None, jobs: int = 1) -> ExperimentReport:
    """Run every protocol point ``cfg.repetitions`` times and aggregate AUCs.

    Trials are independent given their seeds, so ``jobs > 1`` runs them in
    worker processes without changing any number. The first failing trial
    aborts the run. When ``cfg.output_dir`` is set the report is written there.
    """
    if store is None:
        store = load_store(cfg)
    tasks = [
        (store, spec, cfg, trial_seed(cfg.master_seed, p, r), p, r)
        for p, spec in enumerate(cfg.protocol)
        for r in range(cfg.repetitions)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_run_task(t))
            log.info("point %s trial %d: auc %.4f", t[1].label(), t[5], results[-1].auc)

    points = []
    for p, spec in enumerate(cfg.protocol):
        trials = [t for t in results if t.point == p]
        points.append(PointResult(spec, trials, aggregate([t.auc for t in trials])))
    report = ExperimentReport(cfg, points)
    if cfg.output_dir:
        _stage("report", report.write, cfg.output_dir)
    return report

