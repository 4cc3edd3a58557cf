"""Language-like encoding of a one-minute sample.

The minute is cut into 200 windows of 300 ms. Each window yields four
counts (upstream packets, downstream packets, upstream bytes, downstream
bytes); each count becomes a letter by its base-10 order of magnitude and
the four letters form one word.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus
from .traffic import DEFAULT_SUBNET, TraceSample, upstream_mask

WINDOW_MS = 300.0
N_WINDOWS = 200
ALPHABET = "abcdefgh"
MAX_LETTER = len(ALPHABET) - 1
IDLE_WORD = "aaaa"

# 10, 100, ..., 10**7: searchsorted(side="right") against these is floor(log10 V), capped at 7.
_DECADES = np.array([10**k for k in range(1, MAX_LETTER + 1)], dtype=np.int64)


@dataclass(frozen=True)
class WindowCounts:
    up_pkts: int
    down_pkts: int
    up_bytes: int
    down_bytes: int

    def __post_init__(self):
        for name in ("up_pkts", "down_pkts", "up_bytes", "down_bytes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if (self.up_pkts == 0) != (self.up_bytes == 0) or (self.down_pkts == 0) != (self.down_bytes == 0):
            raise ValueError("byte count must be zero exactly when packet count is zero")


def letter_index(values) -> np.ndarray:
    """Vectorized magnitude bucket: 0 for V = 0, else min(floor(log10 V), 7)."""
    v = np.asarray(values, dtype=np.int64)
    if np.any(v < 0):
        raise ValueError("counts must be non-negative")
    return np.searchsorted(_DECADES, v, side="right")


def bucket_letter(value: int) -> str:
    if value < 0:
        raise ValueError("counts must be non-negative")
    return ALPHABET[int(letter_index(value))]


def encode_window(w: WindowCounts) -> str:
    idx = letter_index([w.up_pkts, w.down_pkts, w.up_bytes, w.down_bytes])
    return "".join(ALPHABET[i] for i in idx)


def window_counts(sample: TraceSample, client_subnet=DEFAULT_SUBNET) -> np.ndarray:
    """Per-window [up_pkts, down_pkts, up_bytes, down_bytes], shape (200, 4)."""
    counts = np.zeros((N_WINDOWS, 4), dtype=np.int64)
    if len(sample) == 0:
        return counts
    up = upstream_mask(sample, client_subnet)
    win = np.minimum((sample.timestamps_ms // WINDOW_MS).astype(np.int64), N_WINDOWS - 1)
    for col, (mask, weights) in enumerate(
        ((up, None), (~up, None), (up, sample.sizes), (~up, sample.sizes))
    ):
        w = None if weights is None else weights[mask]
        counts[:, col] = np.bincount(win[mask], weights=w, minlength=N_WINDOWS)[:N_WINDOWS].round().astype(np.int64)
    return counts


def featurize_counts(counts: np.ndarray) -> list[str]:
    idx = letter_index(counts)
    letters = np.array(list(ALPHABET))[idx]
    return ["".join(row) for row in letters]


def featurize_sample(sample: TraceSample, client_subnet=DEFAULT_SUBNET) -> list[str]:
    """The 200-word sentence for one sample."""
    return featurize_counts(window_counts(sample, client_subnet))


def is_word(word: str) -> bool:
    return len(word) == 4 and all(c in ALPHABET for c in word)


class Vocabulary:
    """Word -> id map; id 0 is reserved for out-of-vocabulary words.

    Ids run 1..N in descending corpus frequency, ties broken
    lexicographically.
    """

    def __init__(self, frequencies: dict[str, int]):
        ordered = sorted(frequencies.items(), key=lambda kv: (-kv[1], kv[0]))
        self.words: list[str] = [w for w, _ in ordered]
        self.frequencies: list[int] = [int(f) for _, f in ordered]
        self.ids: dict[str, int] = {w: i + 1 for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self.ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.table() == other.table()

    def table(self) -> list[tuple[str, int, int]]:
        """(word, id, frequency) rows in id order."""
        return [(w, i + 1, f) for i, (w, f) in enumerate(zip(self.words, self.frequencies))]

    def word(self, token_id: int) -> str | None:
        if 1 <= token_id <= len(self.words):
            return self.words[token_id - 1]
        return None

    def to_text(self) -> str:
        return "".join(f"{w} {i} {f}\n" for w, i, f in self.table())

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        freqs = {}
        for line in text.splitlines():
            if line.strip():
                w, _, f = line.split()
                freqs[w] = int(f)
        vocab = cls(freqs)
        for line in text.splitlines():
            if line.strip():
                w, i, _ = line.split()
                if vocab.ids[w] != int(i):
                    raise ValueError(f"vocabulary file id for {w!r} is {i}, expected {vocab.ids[w]}")
        return vocab


def build_vocabulary(corpus: Iterable[Sequence[str]]) -> Vocabulary:
    counter: Counter = Counter()
    for sentence in corpus:
        counter.update(sentence)
    if not counter:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    return Vocabulary(dict(counter))


def tokenize(sentence: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    return np.array([vocab.ids.get(w, 0) for w in sentence], dtype=np.int64)


def detokenize(ids: Iterable[int], vocab: Vocabulary, unknown: str = "????") -> list[str]:
    return [vocab.word(int(i)) or unknown for i in ids]


def format_sentence_line(sample_id: str, sentence: Sequence[str]) -> str:
    return f"{sample_id}\t{' '.join(sentence)}\n"


def read_sentences(text: str) -> list[tuple[str, list[str]]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        sample_id, sep, body = line.partition("\t")
        words = body.split()
        if not sep or len(words) != N_WINDOWS or not all(is_word(w) for w in words):
            raise ValueError(f"sentence line {lineno}: expected id<TAB>{N_WINDOWS} words")
        out.append((sample_id, words))
    return out
