"""Command-line entry points.

Every flag can also be given in a JSON object passed with ``--config``
(keys are the flag names with dashes or underscores); explicit flags win.
Failures exit with status 1 and a single ``error:<Name>: message`` line on
stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import extract_baseline, format_baseline_line, read_baseline
from .errors import BadConfig, ShapeMismatch, TrafficLangError
from .experiments import (
    FeatureSet,
    SplitSpec,
    balance_binary,
    binary_hits,
    embedding_sweep,
    multilabel_report,
    roc_auc,
    run_knockout,
    split_dataset,
    train,
)
from .language import (
    Vocabulary,
    build_vocabulary,
    featurize_sample,
    format_sentence_line,
    read_sentences,
    tokenize,
)
from .models import ARCHITECTURES, ModelConfig, build_model
from .persistence import load_checkpoint, save_checkpoint, write_metrics
from .simulator import DatasetSpec, client_mix_spec, iter_dataset, load_profiles, read_manifest, scaled_client_mix
from .traffic import (
    CLASSES,
    DEFAULT_SUBNET,
    TraceSample,
    make_labels,
    parse_labels,
    parse_trace,
    read_label_file,
    serialize_sample,
    slice_minutes,
    write_label_file,
)

DEFAULTS = {
    "simulate": {"profiles": None},
    "featurize": {"mode": "language", "subnet": DEFAULT_SUBNET, "slice": False, "vocab": None},
    "train": {"epochs": None, "embedding_dim": None, "labels": None, "train_fraction": 0.8},
    "eval": {"subset": 1, "split": "test", "labels": None, "train_fraction": 0.8},
    "knockout": {"epochs": None, "embedding_dim": None, "labels": None, "train_fraction": 0.8},
    "sweep": {"epochs": None, "arch": "han", "labels": None, "train_fraction": 0.8},
}
REQUIRED = {
    "simulate": ("spec", "seed", "out"),
    "featurize": ("data", "seed", "out"),
    "train": ("features", "arch", "problem", "seed", "out"),
    "eval": ("checkpoint", "features", "seed", "out"),
    "knockout": ("features", "arch", "pair", "seed", "out"),
    "sweep": ("features", "sizes", "target", "seed", "out"),
}


def _seed(text) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trafficlang", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"trafficlang {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=_seed, help="unsigned 64-bit seed (mandatory)")
        p.add_argument("--out", help="output path")
        p.add_argument("--config", help="JSON file with default values for any flag")
        return p

    p = command("simulate", "generate synthetic traces, manifest and labels")
    p.add_argument("--spec", help="JSON dataset spec: counts per label combination, or a total")
    p.add_argument("--profiles", help="provider profile INI file (packaged defaults otherwise)")

    p = command("featurize", "turn trace files into sentence or baseline feature files")
    p.add_argument("--data", help="directory with traces/, labels.csv and optionally manifest.csv")
    p.add_argument("--mode", choices=("language", "baseline"))
    p.add_argument("--subnet", help=f"client subnet (default {DEFAULT_SUBNET})")
    p.add_argument("--slice", action="store_const", const=True, help="cut long traces into one-minute samples")
    p.add_argument("--vocab", help="reuse an existing vocabulary file")

    p = command("train", "train a classifier and write a checkpoint and loss log")
    _feature_flags(p)
    p.add_argument("--arch", choices=ARCHITECTURES)
    p.add_argument("--problem", help="binary:<class> or multilabel")
    p.add_argument("--epochs", type=int)
    p.add_argument("--embedding-dim", type=int)

    p = command("eval", "evaluate a checkpoint and write a metrics file")
    p.add_argument("--checkpoint")
    _feature_flags(p)
    p.add_argument("--subset", type=int, help="only samples with at least this many clients")
    p.add_argument("--split", choices=("test", "all"), help="held-out split of training (default) or all samples")

    p = command("knockout", "label-pair knockout experiment")
    _feature_flags(p)
    p.add_argument("--arch", choices=ARCHITECTURES)
    p.add_argument("--pair", help="two classes, comma separated")
    p.add_argument("--epochs", type=int)
    p.add_argument("--embedding-dim", type=int)

    p = command("sweep", "binary accuracy per embedding size")
    _feature_flags(p)
    p.add_argument("--arch", choices=("han", "kim", "berger"))
    p.add_argument("--sizes", help="comma separated embedding sizes")
    p.add_argument("--target", help="one-vs-rest class")
    p.add_argument("--epochs", type=int)
    return parser


def _feature_flags(p):
    p.add_argument("--features", help="directory written by featurize")
    p.add_argument("--labels", help="label sidecar (default <features>/labels.csv)")
    p.add_argument("--train-fraction", type=float)


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Merge config-file values under explicit flags, then apply defaults."""
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise BadConfig(f"config file {args.config} not found") from None
        except ValueError as exc:
            raise BadConfig(f"config file {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise BadConfig("config file must hold a JSON object")
        for key, value in config.items():
            dest = key.replace("-", "_")
            if not hasattr(args, dest) or dest in ("command", "config"):
                raise BadConfig(f"unknown config key {key!r} for {args.command}")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    for key, value in DEFAULTS[args.command].items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        raise BadConfig("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    args.seed = _seed(args.seed)
    return args


# -- simulate -----------------------------------------------------------------

def dataset_spec_from_json(doc: dict, seed: int) -> DatasetSpec:
    """``{"counts": {"Amazon;YouTube": 5, ...}}``, ``{"client_mix": {"1": 9, ...}}`` or ``{"total": n}``."""
    web_noise = bool(doc.get("web_noise", True))
    if "counts" in doc:
        counts = {parse_labels(k): int(v) for k, v in doc["counts"].items()}
        return DatasetSpec(counts, web_noise=web_noise, master_seed=seed)
    if "client_mix" in doc:
        mix = {int(k): int(v) for k, v in doc["client_mix"].items()}
        return client_mix_spec(mix, web_noise=web_noise, master_seed=seed)
    if "total" in doc:
        return client_mix_spec(scaled_client_mix(int(doc["total"])), web_noise=web_noise, master_seed=seed)
    raise BadConfig("dataset spec needs one of: counts, client_mix, total")


def cmd_simulate(args) -> None:
    try:
        doc = json.loads(Path(args.spec).read_text())
    except FileNotFoundError:
        raise BadConfig(f"spec file {args.spec} not found") from None
    except ValueError as exc:
        raise BadConfig(f"spec file {args.spec}: {exc}") from None
    spec = dataset_spec_from_json(doc, args.seed)
    profiles = load_profiles(args.profiles)
    out = Path(args.out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    manifest, labels = [], {}
    for sample, row in iter_dataset(spec, profiles):
        (out / "traces" / f"{sample.sample_id}.txt").write_text(serialize_sample(sample))
        manifest.append(row.to_line())
        labels[sample.sample_id] = sample.labels
    (out / "manifest.csv").write_text("".join(manifest))
    (out / "labels.csv").write_text(write_label_file(labels))


# -- featurize ----------------------------------------------------------------

def _read_labels(path) -> dict[str, frozenset]:
    try:
        return read_label_file(Path(path).read_text())
    except FileNotFoundError:
        raise BadConfig(f"label file {path} not found") from None


def load_trace_dir(data: Path, slice_long: bool = False) -> list[TraceSample]:
    labels = _read_labels(data / "labels.csv")
    clients = {}
    if (data / "manifest.csv").exists():
        clients = {r.sample_id: r.client_count for r in read_manifest((data / "manifest.csv").read_text())}
    files = sorted((data / "traces").glob("*.txt"))
    if not files:
        raise BadConfig(f"no trace files in {data / 'traces'}")
    samples = []
    for path in files:
        sid = path.stem
        if sid not in labels:
            raise BadConfig(f"trace {sid} has no entry in the label file")
        records = parse_trace(path.read_text())
        if slice_long:
            samples.extend(slice_minutes(records, lambda s, e, lab=labels[sid]: lab, prefix=f"{sid}_m"))
        else:
            sample = TraceSample.from_records(sid, records, labels=labels[sid],
                                              client_count=clients.get(sid, min(len(labels[sid]), 4)))
            samples.append(sample)
    return samples


def cmd_featurize(args) -> None:
    samples = load_trace_dir(Path(args.data), bool(args.slice))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "language":
        sentences = [featurize_sample(s, args.subnet) for s in samples]
        if args.vocab:
            vocab = Vocabulary.from_text(Path(args.vocab).read_text())
        else:
            vocab = build_vocabulary(sentences)
        (out / "sentences.txt").write_text(
            "".join(format_sentence_line(s.sample_id, words) for s, words in zip(samples, sentences)))
        (out / "vocab.txt").write_text(vocab.to_text())
    else:
        (out / "baseline.csv").write_text(
            "".join(format_baseline_line(s.sample_id, extract_baseline(s, args.subnet)) for s in samples))
    (out / "labels.csv").write_text(write_label_file({s.sample_id: s.labels for s in samples}))
    (out / "clients.csv").write_text("".join(f"{s.sample_id},{s.client_count}\n" for s in samples))


def load_feature_dir(features, labels_path=None, vocab: Vocabulary | None = None) -> FeatureSet:
    """Feature set from a featurize output directory.

    Sentences are tokenized with *vocab* when given (a checkpoint's own
    vocabulary), otherwise with the directory's vocabulary file.
    """
    root = Path(features)
    labels = _read_labels(labels_path or root / "labels.csv")
    clients = {}
    if (root / "clients.csv").exists():
        for line in (root / "clients.csv").read_text().splitlines():
            if line.strip():
                sid, cc = line.split(",")
                clients[sid] = int(cc)
    if (root / "sentences.txt").exists():
        rows = read_sentences((root / "sentences.txt").read_text())
        if vocab is None:
            vocab = Vocabulary.from_text((root / "vocab.txt").read_text())
        inputs = np.stack([tokenize(words, vocab) for _, words in rows])
        kind = "tokens"
    elif (root / "baseline.csv").exists():
        rows = read_baseline((root / "baseline.csv").read_text())
        inputs = np.stack([x for _, x in rows]).astype(np.float32)
        kind, vocab = "baseline", None
    else:
        raise BadConfig(f"{root} holds neither sentences.txt nor baseline.csv")
    ids = [sid for sid, _ in rows]
    missing = [sid for sid in ids if sid not in labels]
    if missing:
        raise BadConfig(f"{len(missing)} samples lack labels, e.g. {missing[0]}")
    lab = [labels[sid] for sid in ids]
    cc = [clients.get(sid, min(len(labels[sid]), 4)) for sid in ids]
    return FeatureSet(ids, inputs, lab, cc, kind, vocab)


# -- train / eval ---------------------------------------------------------------

def _parse_problem(text: str) -> tuple[str, str | None]:
    if text == "multilabel":
        return "multilabel-6", None
    kind, _, cls = text.partition(":")
    if kind != "binary" or cls not in CLASSES:
        raise BadConfig(f"problem must be 'multilabel' or 'binary:<class>' with class in {CLASSES}")
    return "categorical-2", cls


def _check_kind(arch: str, dataset: FeatureSet):
    wanted = "baseline" if arch == "cruz" else "tokens"
    if dataset.kind != wanted:
        raise ShapeMismatch(f"the {arch} model needs {'baseline' if wanted == 'baseline' else 'language'} features, "
                            f"got {dataset.kind}")


def cmd_train(args) -> None:
    dataset = load_feature_dir(args.features, args.labels)
    _check_kind(args.arch, dataset)
    mode, cls = _parse_problem(args.problem)
    split = SplitSpec(train_fraction=float(args.train_fraction), seed=args.seed)
    train_set, _ = split_dataset(dataset, split)
    overrides = {} if args.embedding_dim is None else {"embedding_dim": int(args.embedding_dim)}
    config = ModelConfig(args.arch, output_mode=mode, seed=args.seed, **overrides)
    vocab_size = None if args.arch == "cruz" else len(dataset.vocab)
    model = build_model(config, vocab_size)
    if cls is None:
        targets = train_set.multilabel_targets()
    else:
        train_set = balance_binary(train_set, cls, args.seed)
        targets = train_set.categorical_targets(cls)
    _, history = train(model, train_set.inputs, targets, args.epochs, seed=args.seed)
    extra = {"problem": args.problem, "split": {"seed": args.seed, "train_fraction": float(args.train_fraction)},
             "train_size": len(train_set), "loss_history": history}
    save_checkpoint(args.out, model, dataset.vocab, extra)
    Path(str(args.out) + ".loss.csv").write_text("".join(f"{i + 1},{v!r}\n" for i, v in enumerate(history)))


def cmd_eval(args) -> None:
    model, vocab, meta = load_checkpoint(args.checkpoint)
    arch = model.config.architecture
    dataset = load_feature_dir(args.features, args.labels, vocab)
    _check_kind(arch, dataset)
    if args.split == "test":
        split = meta["extra"].get("split", {})
        _, dataset = split_dataset(dataset, SplitSpec(train_fraction=split.get("train_fraction", 0.8),
                                                      seed=split.get("seed", args.seed)))
    problem = meta["extra"].get("problem", "multilabel")
    _, cls = _parse_problem(problem)
    acts = model.predict(dataset.inputs)
    if cls is None:
        report = multilabel_report(acts, dataset, int(args.subset), args.seed, model.config.to_dict()).to_dict()
    else:
        keep = np.flatnonzero(dataset.client_counts >= int(args.subset))
        acts, sub = acts[keep], dataset.subset(keep)
        labels = sub.binary_labels(cls)
        hits = binary_hits(acts, labels)
        auc = None
        if 0 < labels.sum() < len(labels):
            auc = roc_auc(acts[:, 1] - acts[:, 0], labels)[1]
        report = {"kind": "binary", "target_class": cls, "accuracy": float(hits.mean()) if len(hits) else None,
                  "auc": auc, "sample_ids": sub.sample_ids, "scores": acts.tolist(), "targets": labels.tolist()}
    settings = {"checkpoint": str(args.checkpoint), "subset": int(args.subset), "split": args.split,
                "problem": problem, "model": model.config.to_dict()}
    write_metrics(args.out, report, settings)


def cmd_knockout(args) -> None:
    dataset = load_feature_dir(args.features, args.labels)
    _check_kind(args.arch, dataset)
    pair = [p.strip() for p in str(args.pair).split(",")]
    if len(pair) != 2 or len(make_labels(pair)) != 2:
        raise BadConfig("--pair needs two distinct classes, e.g. YouTube,Amazon")
    overrides = {} if args.embedding_dim is None else {"embedding_dim": int(args.embedding_dim)}
    _, report = run_knockout(dataset, args.arch, pair, args.seed, args.epochs,
                             SplitSpec(train_fraction=float(args.train_fraction), seed=args.seed), **overrides)
    write_metrics(args.out, report.to_dict(), _echo(args))


def cmd_sweep(args) -> None:
    dataset = load_feature_dir(args.features, args.labels)
    _check_kind(args.arch, dataset)
    sizes = [int(s) for s in str(args.sizes).split(",") if s.strip()]
    if args.target not in CLASSES:
        raise BadConfig(f"--target must be one of {CLASSES}")
    accuracies, reports = embedding_sweep(dataset, args.arch, sizes, args.target, args.seed, args.epochs)
    payload = {"kind": "sweep", "accuracy_by_size": accuracies, "reports": {k: r.to_dict() for k, r in reports.items()}}
    write_metrics(args.out, payload, _echo(args))


def _echo(args) -> dict:
    return dict(sorted(vars(args).items()))


COMMANDS = {
    "simulate": cmd_simulate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "knockout": cmd_knockout,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args = resolve(args)
        COMMANDS[args.command](args)
    except (TrafficLangError, OSError, ValueError) as exc:
        print(f"error:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
