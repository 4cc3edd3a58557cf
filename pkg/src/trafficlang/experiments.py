"""Splits, balancing, training and the evaluation protocols: binary
accuracy, multilabel ROC/AUC (optionally on client-count subsets), the
label-pair knockout test and the embedding-size sweep."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .errors import DegenerateClass, DegenerateLabels, NoPairSamples, NonFiniteLoss, ShapeMismatch
from .models import DEFAULT_EPOCHS, DEFAULT_OPTIMIZER, RECURRENT, Model, ModelConfig, build_model
from .traffic import CLASS_INDEX, CLASSES, make_labels

log = logging.getLogger(__name__)

BATCH_SIZE = 32
LEARNING_RATE = 1e-3
CLIP_NORM = 5.0


@dataclass
class FeatureSet:
    """Featurized samples with their labels; rows align across all fields."""

    sample_ids: list[str]
    inputs: np.ndarray
    labels: list[frozenset]
    client_counts: np.ndarray
    kind: str = "tokens"
    vocab: object = None

    def __post_init__(self):
        self.client_counts = np.asarray(self.client_counts, dtype=np.int64)
        n = len(self.sample_ids)
        if not (len(self.inputs) == len(self.labels) == len(self.client_counts) == n):
            raise ShapeMismatch("feature set fields have different lengths")
        if self.kind not in ("tokens", "baseline"):
            raise ValueError(f"unknown feature kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.sample_ids)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(
            [self.sample_ids[i] for i in idx],
            self.inputs[idx],
            [self.labels[i] for i in idx],
            self.client_counts[idx],
            self.kind,
            self.vocab,
        )

    def concat(self, other: "FeatureSet") -> "FeatureSet":
        return FeatureSet(
            self.sample_ids + other.sample_ids,
            np.concatenate((self.inputs, other.inputs)),
            self.labels + other.labels,
            np.concatenate((self.client_counts, other.client_counts)),
            self.kind,
            self.vocab,
        )

    def multilabel_targets(self) -> np.ndarray:
        y = np.zeros((len(self), len(CLASSES)))
        for i, labels in enumerate(self.labels):
            for c in labels:
                y[i, CLASS_INDEX[c]] = 1.0
        return y

    def binary_labels(self, target_class: str) -> np.ndarray:
        return np.array([target_class in labels for labels in self.labels], dtype=np.int64)

    def categorical_targets(self, target_class: str) -> np.ndarray:
        y = self.binary_labels(target_class)
        return np.stack((1 - y, y), axis=1).astype(np.float64)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratify: bool = False

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")


@dataclass
class EvalReport:
    kind: str
    seed: int
    config: dict
    accuracy: float | None = None
    per_class: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    subset: dict = field(default_factory=dict)
    sample_ids: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "loss_history": self.loss_history,
            "subset": self.subset,
            "sample_ids": self.sample_ids,
            "scores": self.scores,
            "targets": self.targets,
            "extra": self.extra,
        }


# -- data handling --------------------------------------------------------

def split_dataset(dataset: FeatureSet, spec: SplitSpec = SplitSpec()) -> tuple[FeatureSet, FeatureSet]:
    """Seeded disjoint train/test partition (optionally stratified by label set)."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x5EED]))
    if spec.stratify:
        groups: dict = {}
        for i, labels in enumerate(dataset.labels):
            groups.setdefault(tuple(sorted(labels)), []).append(i)
        train = []
        for key in sorted(groups):
            members = np.array(groups[key])
            rng.shuffle(members)
            train.extend(members[: int(round(spec.train_fraction * len(members)))])
        train_idx = np.sort(np.array(train, dtype=np.int64))
    else:
        perm = rng.permutation(n)
        train_idx = np.sort(perm[: int(round(spec.train_fraction * n))])
    test_idx = np.setdiff1d(np.arange(n), train_idx)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def balance_binary(train: FeatureSet, target_class: str, seed: int) -> FeatureSet:
    """Undersample the majority side so positives and negatives match."""
    y = train.binary_labels(target_class)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateClass(f"{target_class}: {len(pos)} positive and {len(neg)} negative samples")
    if len(pos) == len(neg):
        return train
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), CLASS_INDEX[target_class], 0xBA1]))
    small, big = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    keep = np.sort(np.concatenate((small, rng.choice(big, size=len(small), replace=False))))
    return train.subset(keep)


# -- training ---------------------------------------------------------------

def make_optimizer(model: Model, name: str | None = None, lr: float = LEARNING_RATE):
    name = name or DEFAULT_OPTIMIZER[model.config.architecture]
    return nn.OPTIMIZERS[name](model.params.values(), lr=lr)


def train(model: Model, inputs: np.ndarray, targets: np.ndarray, epochs: int | None = None,
          batch_size: int = BATCH_SIZE, optimizer: str | None = None, seed: int = 0,
          lr: float = LEARNING_RATE, clip_norm: float | None | str = "auto") -> tuple[Model, list[float]]:
    """Mini-batch training with binary cross-entropy; returns the per-epoch mean loss."""
    epochs = DEFAULT_EPOCHS[model.config.architecture] if epochs is None else int(epochs)
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if clip_norm == "auto":
        clip_norm = CLIP_NORM if model.config.architecture in RECURRENT else None
    if len(inputs) != len(targets) or len(inputs) == 0:
        raise ShapeMismatch("inputs and targets must be nonempty and aligned")
    targets = np.asarray(targets, dtype=model.dtype)
    opt = make_optimizer(model, optimizer, lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7EA1]))
    n = len(inputs)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            model.zero_grad()
            with nn.Tape() as tape:
                loss = nn.bce_loss(model.forward(inputs[idx]), targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch + 1}, batch at {start}: loss is {value}")
            tape.backward(loss)
            if clip_norm is not None:
                nn.clip_grad_norm(model.params.values(), clip_norm)
            opt.step()
            total += value * len(idx)
        history.append(total / n)
        log.debug("%s epoch %d loss %.5f", model.config.architecture, epoch + 1, history[-1])
    return model, history


# -- metrics ------------------------------------------------------------------

def binary_hits(activations: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """A hit when the labelled neuron is strictly more active than the other one."""
    a = np.asarray(activations)
    y = np.asarray(labels, dtype=np.int64)
    own = a[np.arange(len(y)), y]
    other = a[np.arange(len(y)), 1 - y]
    return own > other


def eval_binary(model: Model, test: FeatureSet, target_class: str) -> float:
    if model.config.output_mode != "categorical-2":
        raise ValueError("binary evaluation needs a categorical-2 model")
    if len(test) == 0:
        return 0.0
    return float(binary_hits(model.predict(test.inputs), test.binary_labels(target_class)).mean())


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> tuple[list[tuple[float, float]], float]:
    """ROC staircase over distinct score thresholds and its trapezoidal area."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != len(y):
        raise DegenerateLabels(f"ROC needs both classes ({n_pos} positive, {n_neg} negative)")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_group = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[last_of_group]
    fps = (last_of_group + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return [(float(a), float(b)) for a, b in zip(fpr, tpr)], auc


def _subset_by_clients(test: FeatureSet, min_clients: int) -> FeatureSet:
    return test.subset(np.flatnonzero(test.client_counts >= min_clients))


def multilabel_report(activations: np.ndarray, test: FeatureSet, min_clients: int = 1,
                      seed: int = 0, config: dict | None = None) -> EvalReport:
    keep = np.flatnonzero(test.client_counts >= min_clients)
    scores = np.asarray(activations)[keep]
    targets = test.multilabel_targets()[keep]
    per_class = {}
    for j, name in enumerate(CLASSES):
        entry = {"n_pos": int(targets[:, j].sum()), "n_neg": int(len(keep) - targets[:, j].sum())}
        try:
            points, auc = roc_auc(scores[:, j], targets[:, j].astype(np.int64))
            entry.update(auc=auc, roc=[list(p) for p in points])
        except DegenerateLabels:
            entry.update(auc=None, roc=None)
        per_class[name] = entry
    return EvalReport(
        kind="multilabel",
        seed=seed,
        config=config or {},
        per_class=per_class,
        subset={"min_clients": int(min_clients), "n_samples": int(len(keep))},
        sample_ids=[test.sample_ids[i] for i in keep],
        scores=scores.tolist(),
        targets=targets.astype(int).tolist(),
    )


def eval_multilabel(model: Model, test: FeatureSet, min_clients: int = 1) -> EvalReport:
    if model.config.output_mode != "multilabel-6":
        raise ValueError("multilabel evaluation needs a multilabel-6 model")
    return multilabel_report(model.predict(test.inputs), test, min_clients, model.config.seed,
                             model.config.to_dict())


def knockout_split(dataset: FeatureSet, pair: Sequence[str], spec: SplitSpec = SplitSpec()):
    """Standard split, then every train sample bearing both *pair* labels moves to test.

    Returns ``(train, test, removed_ids)``.
    """
    pair = make_labels(pair)
    if len(pair) != 2:
        raise ValueError("knockout needs exactly two distinct classes")
    if not any(pair <= labels for labels in dataset.labels):
        raise NoPairSamples(f"no sample carries both {sorted(pair)}")
    train, test = split_dataset(dataset, spec)
    bearing = np.array([pair <= labels for labels in train.labels], dtype=bool)
    removed = train.subset(np.flatnonzero(bearing))
    return train.subset(np.flatnonzero(~bearing)), test.concat(removed), list(removed.sample_ids)


def pair_samples(dataset: FeatureSet, pair: Sequence[str]) -> FeatureSet:
    pair = make_labels(pair)
    return dataset.subset([i for i, labels in enumerate(dataset.labels) if pair <= labels])


def knockout_summary(activations: np.ndarray, pair: Sequence[str]) -> dict:
    first, second = [c for c in CLASSES if c in set(pair)]
    a = np.asarray(activations)
    pairs = a[:, [CLASS_INDEX[first], CLASS_INDEX[second]]]
    n = len(pairs)
    return {
        "pair": [first, second],
        "activations": pairs.tolist(),
        "n_samples": n,
        "max_fraction": float((pairs.max(axis=1) >= 0.5).mean()) if n else 0.0,
        "both_fraction": float((pairs.min(axis=1) >= 0.5).mean()) if n else 0.0,
    }


def knockout_eval(model: Model, samples: FeatureSet, pair: Sequence[str]) -> dict:
    pair = make_labels(pair)
    if not all(pair <= labels for labels in samples.labels):
        raise ValueError("every knockout evaluation sample must carry both classes")
    return knockout_summary(model.predict(samples.inputs), pair)


# -- experiment runners ---------------------------------------------------------

def _model_config(architecture, output_mode, seed, **overrides) -> ModelConfig:
    return ModelConfig(architecture, output_mode=output_mode, seed=seed, **overrides)


def _vocab_size(dataset: FeatureSet, architecture: str) -> int | None:
    if architecture == "cruz":
        if dataset.kind != "baseline":
            raise ShapeMismatch("the cruz model needs baseline features")
        return None
    if dataset.kind != "tokens":
        raise ShapeMismatch(f"the {architecture} model needs language features")
    return len(dataset.vocab) if dataset.vocab is not None else int(dataset.inputs.max())


def run_binary(dataset: FeatureSet, architecture: str, target_class: str, seed: int,
               epochs: int | None = None, split: SplitSpec | None = None, **overrides):
    """Balanced one-vs-rest training and categorical accuracy on the held-out 20%."""
    split = split or SplitSpec(seed=seed)
    train_set, test_set = split_dataset(dataset, split)
    balanced = balance_binary(train_set, target_class, seed)
    config = _model_config(architecture, "categorical-2", seed, **overrides)
    model = build_model(config, _vocab_size(dataset, architecture))
    _, history = train(model, balanced.inputs, balanced.categorical_targets(target_class), epochs, seed=seed)
    acts = model.predict(test_set.inputs)
    labels = test_set.binary_labels(target_class)
    hits = binary_hits(acts, labels)
    points, auc = roc_auc(acts[:, 1] - acts[:, 0], labels) if 0 < labels.sum() < len(labels) else (None, None)
    report = EvalReport(
        kind="binary",
        seed=seed,
        config=config.to_dict(),
        accuracy=float(hits.mean()),
        per_class={target_class: {"auc": auc, "roc": None if points is None else [list(p) for p in points],
                                  "n_pos": int(labels.sum()), "n_neg": int(len(labels) - labels.sum())}},
        loss_history=history,
        subset={"target_class": target_class, "train_size": len(balanced), "test_size": len(test_set)},
        sample_ids=list(test_set.sample_ids),
        scores=acts.tolist(),
        targets=labels.tolist(),
    )
    return model, report


def run_multilabel(dataset: FeatureSet, architecture: str, seed: int, epochs: int | None = None,
                   min_clients: Iterable[int] = (1, 2, 3), split: SplitSpec | None = None, **overrides):
    """Unbalanced multilabel training; one report per client-count subset."""
    split = split or SplitSpec(seed=seed)
    train_set, test_set = split_dataset(dataset, split)
    config = _model_config(architecture, "multilabel-6", seed, **overrides)
    model = build_model(config, _vocab_size(dataset, architecture))
    _, history = train(model, train_set.inputs, train_set.multilabel_targets(), epochs, seed=seed)
    acts = model.predict(test_set.inputs)
    reports = {}
    for m in min_clients:
        rep = multilabel_report(acts, test_set, m, seed, config.to_dict())
        rep.loss_history = history
        reports[int(m)] = rep
    return model, reports


def auc_differences(full: EvalReport, subset: EvalReport) -> dict:
    out = {}
    for name in CLASSES:
        a, b = full.per_class[name]["auc"], subset.per_class[name]["auc"]
        out[name] = None if a is None or b is None else a - b
    return out


def run_knockout(dataset: FeatureSet, architecture: str, pair: Sequence[str], seed: int,
                 epochs: int | None = None, split: SplitSpec | None = None, **overrides):
    split = split or SplitSpec(seed=seed)
    train_set, test_set, removed = knockout_split(dataset, pair, split)
    pair = make_labels(pair)
    if any(pair <= labels for labels in train_set.labels):
        raise AssertionError("knockout training set still carries the pair")
    config = _model_config(architecture, "multilabel-6", seed, **overrides)
    model = build_model(config, _vocab_size(dataset, architecture))
    _, history = train(model, train_set.inputs, train_set.multilabel_targets(), epochs, seed=seed)
    held_out = pair_samples(test_set, pair)
    summary = knockout_eval(model, held_out, pair)
    report = EvalReport(
        kind="knockout",
        seed=seed,
        config=config.to_dict(),
        loss_history=history,
        subset={"pair": summary["pair"], "train_size": len(train_set), "test_size": len(test_set),
                "removed_from_train": len(removed), "train_pair_free": True},
        sample_ids=list(held_out.sample_ids),
        extra=summary,
    )
    return model, report


def embedding_sweep(dataset: FeatureSet, architecture: str, sizes: Sequence[int], target_class: str,
                    seed: int, epochs: int | None = None) -> tuple[dict[int, float], dict[int, EvalReport]]:
    """Binary accuracy per embedding size, with identical data split and seed."""
    if not sizes:
        raise ValueError("sizes must be nonempty")
    accuracies, reports = {}, {}
    for k in sizes:
        _, rep = run_binary(dataset, architecture, target_class, seed, epochs, embedding_dim=int(k))
        accuracies[int(k)] = rep.accuracy
        reports[int(k)] = rep
    return accuracies, reports
