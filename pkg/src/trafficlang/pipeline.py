"""Sample streams to feature sets: the glue between the simulator, the two
featurizers and the experiment harness."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .baseline import extract_baseline
from .experiments import FeatureSet
from .language import Vocabulary, build_vocabulary, featurize_sample, tokenize
from .simulator import DatasetSpec, Profiles, client_mix_spec, iter_dataset, scaled_client_mix
from .traffic import DEFAULT_SUBNET, TraceSample


def language_features(samples: Iterable[TraceSample], client_subnet=DEFAULT_SUBNET,
                      vocab: Vocabulary | None = None) -> tuple[FeatureSet, list[list[str]]]:
    """Tokenized sentences; the vocabulary is built from these samples unless given."""
    ids, sentences, labels, clients = [], [], [], []
    for s in samples:
        ids.append(s.sample_id)
        sentences.append(featurize_sample(s, client_subnet))
        labels.append(s.labels)
        clients.append(s.client_count)
    return tokens_from_sentences(ids, sentences, labels, clients, vocab), sentences


def tokens_from_sentences(ids, sentences, labels, clients, vocab: Vocabulary | None = None) -> FeatureSet:
    vocab = vocab or build_vocabulary(sentences)
    tokens = np.stack([tokenize(s, vocab) for s in sentences]) if sentences else np.zeros((0, 200), np.int64)
    return FeatureSet(list(ids), tokens, list(labels), clients, "tokens", vocab)


def baseline_features(samples: Iterable[TraceSample], client_subnet=DEFAULT_SUBNET) -> FeatureSet:
    ids, feats, labels, clients = [], [], [], []
    for s in samples:
        ids.append(s.sample_id)
        feats.append(extract_baseline(s, client_subnet))
        labels.append(s.labels)
        clients.append(s.client_count)
    arr = np.stack(feats) if feats else np.zeros((0, 20, 60))
    return FeatureSet(ids, arr, labels, clients, "baseline", None)


def both_features(samples: Iterable[TraceSample], client_subnet=DEFAULT_SUBNET) -> tuple[FeatureSet, FeatureSet]:
    """Language and baseline features from a single pass over the samples."""
    ids, sentences, feats, labels, clients = [], [], [], [], []
    for s in samples:
        ids.append(s.sample_id)
        sentences.append(featurize_sample(s, client_subnet))
        feats.append(extract_baseline(s, client_subnet))
        labels.append(s.labels)
        clients.append(s.client_count)
    lang = tokens_from_sentences(ids, sentences, labels, clients)
    return lang, FeatureSet(list(ids), np.stack(feats), list(labels), clients, "baseline", None)


def synthetic_spec(total: int, seed: int, web_noise: bool = True) -> DatasetSpec:
    """Provider mix whose client-count shares follow the collected dataset (45/47/7/0.1 %)."""
    return client_mix_spec(scaled_client_mix(total), web_noise=web_noise, master_seed=seed)


def synthetic_language_dataset(total: int, seed: int, profiles: Profiles | None = None) -> FeatureSet:
    spec = synthetic_spec(total, seed)
    return language_features(sample for sample, _ in iter_dataset(spec, profiles))[0]
