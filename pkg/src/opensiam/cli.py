"""Command line entry point: ``opensiam {run,train,synth,score,calibrate,roc}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from opensiam.dataset import ProtocolSplit, generate_synthetic, load_features, write_features
from opensiam.experiment import ExperimentError, load_config, run_experiment
from opensiam.metrics import roc
from opensiam.pairing import make_pairs
from opensiam.recognition import (
    Decision,
    ScoreRecord,
    calibrate_threshold,
    embed_gallery,
    read_scores,
    score_probe,
    split_scores,
    write_scores,
)
from opensiam.siamese import TrainConfig, init_net, load_net, save_net, train

log = logging.getLogger("opensiam")


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


def _add_train_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    d = TrainConfig()
    dflt = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--pairing", choices=["P1", "P2"], default="P1" if defaults else None)
    p.add_argument("--z", type=int, default=dflt(2), help="pairs per anchor and group")
    p.add_argument("--hidden-dims", type=int, nargs="+", default=dflt([2048, 2048, 2048]))
    p.add_argument("--margin", type=float, default=dflt(d.margin))
    p.add_argument("--lr", type=float, default=dflt(d.learning_rate))
    p.add_argument("--epochs", type=int, default=dflt(d.epochs))
    p.add_argument("--batch-size", type=int, default=dflt(d.batch_size))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opensiam", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a repeated open-set experiment from a JSON config")
    p.add_argument("--config", required=True)
    _add_train_flags(p, defaults=False)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent trials")

    p = sub.add_parser("train", help="train a model on every sample of a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p, defaults=True)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-cluster feature file")
    p.add_argument("--k", type=int, required=True, help="number of identities")
    p.add_argument("--samples-per-id", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="score probes against a gallery with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery", required=True, help="feature file of enrolled samples")
    p.add_argument("--probes", required=True, help="feature file of probes")
    p.add_argument("--out", help="scores file (default: stdout)")

    p = sub.add_parser("calibrate", help="choose a threshold from a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--policy", choices=["equal_error", "target_fpr"], default="equal_error")
    p.add_argument("--alpha", type=float, help="FPR bound for target_fpr")

    p = sub.add_parser("roc", help="ROC curve and AUC of a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", help="ROC file (default: stdout)")
    return ap


def _train_config(args) -> TrainConfig:
    return TrainConfig(margin=args.margin, learning_rate=args.lr, epochs=args.epochs,
                       batch_size=args.batch_size, rng_seed=args.seed)


def cmd_run(args) -> None:
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError("config", f"{args.config}: {exc}") from exc
    overrides = {
        "pairing": args.pairing,
        "z": args.z,
        "hidden_dims": tuple(args.hidden_dims) if args.hidden_dims else None,
        "repetitions": args.repetitions,
        "master_seed": args.master_seed,
        "output_dir": args.output_dir,
    }
    train_over = {"margin": args.margin, "learning_rate": args.lr, "epochs": args.epochs,
                  "batch_size": args.batch_size}
    try:
        cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, **{k: v for k, v in train_over.items() if v is not None}))
    except ValueError as exc:
        raise CliError("config", str(exc)) from exc
    report = run_experiment(cfg, jobs=args.jobs)
    sys.stdout.write(report.table())


def cmd_train(args) -> None:
    try:
        store = load_features(args.features)
    except (OSError, ValueError) as exc:
        raise CliError("load", str(exc)) from exc
    # whole file is the gallery: every sample is a train sample
    split = ProtocolSplit(
        known_ids=frozenset(store.identities), unknown_ids=frozenset(),
        train=tuple(range(len(store))), test_known=(), test_unknown=(), seed=args.seed,
    )
    try:
        cfg = _train_config(args)
        pairs = make_pairs(args.pairing, split, store, args.z, args.seed)
        net = init_net((store.dim, *args.hidden_dims), args.seed)
        net, history = train(net, pairs, store, cfg)
    except (ValueError, RuntimeError) as exc:
        raise CliError("train", str(exc)) from exc
    save_net(net, args.out)
    log.info("trained on %d pairs; final epoch loss %.6g", len(pairs), history.epoch_loss[-1])


def cmd_synth(args) -> None:
    try:
        store = generate_synthetic(args.k, args.samples_per_id, args.dim, args.spread, args.seed)
    except ValueError as exc:
        raise CliError("synth", str(exc)) from exc
    try:
        write_features(store, args.out)
    except OSError as exc:
        raise CliError("write", str(exc)) from exc


def score_files(model_path, gallery_path, probe_path) -> list[ScoreRecord]:
    """Score every probe of ``probe_path`` against the gallery file.

    A probe's truth is ``known`` when its identity label occurs in the
    gallery. Probe ids are the 0-based row positions in the probe file.
    """
    try:
        net = load_net(model_path)
        gallery = load_features(gallery_path)
        probes = load_features(probe_path)
    except (OSError, ValueError) as exc:
        raise CliError("load", str(exc)) from exc
    for name, store in (("gallery", gallery), ("probe", probes)):
        if store.dim != net.input_dim:
            raise CliError("load", f"{name} features have dim {store.dim}, model expects {net.input_dim}")
    if len(probes) == 0:
        return []
    index = embed_gallery(net, gallery, range(len(gallery)))
    enrolled = set(gallery.identities)
    out = []
    for i, (lab, vec) in enumerate(zip(probes.labels, probes.vectors)):
        s = score_probe(index, net, vec)
        truth = Decision.KNOWN if lab in enrolled else Decision.UNKNOWN
        out.append(ScoreRecord(str(i), truth, s.score, s.nearest_identity))
    return out


def cmd_score(args) -> None:
    records = score_files(args.model, args.gallery, args.probes)
    if args.out:
        write_scores(records, args.out)
    else:
        for r in records:
            sys.stdout.write(f"{r.probe_id},{r.truth.value},{r.score!r},{r.nearest_identity}\n")


def _load_scores(path):
    try:
        return split_scores(read_scores(path))
    except (OSError, ValueError) as exc:
        raise CliError("load", str(exc)) from exc


def cmd_calibrate(args) -> None:
    known, unknown = _load_scores(args.scores)
    try:
        t = calibrate_threshold(known, unknown, args.policy, args.alpha)
    except ValueError as exc:
        raise CliError("calibrate", str(exc)) from exc
    print(json.dumps({"policy": args.policy, "alpha": args.alpha, "threshold": t}))


def cmd_roc(args) -> None:
    known, unknown = _load_scores(args.scores)
    try:
        report = roc(known, unknown)
    except ValueError as exc:
        raise CliError("roc", str(exc)) from exc
    if args.out:
        report.save(args.out)
    else:
        sys.stdout.write(report.to_text())


COMMANDS = {
    "run": cmd_run,
    "train": cmd_train,
    "synth": cmd_synth,
    "score": cmd_score,
    "calibrate": cmd_calibrate,
    "roc": cmd_roc,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        print(f"opensiam {args.command}: error [{exc.stage}]: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"opensiam {args.command}: error {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
