"""Corpus ingestion: tokenization, vocabulary construction, encoding, splitting.

Input text is UTF-8, one sentence per line, whitespace-tokenized.  A line
consisting solely of ``###DOC###`` starts a new document (used for genre
modeling); without markers every sentence is its own document.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PAD = "<pad>"
END = "</s>"
UNK = "<unk>"
PAD_ID = 0
END_ID = 1
UNK_ID = 2
SPECIALS = (PAD, END, UNK)
DOC_MARKER = "###DOC###"

TokenSeq = tuple[int, ...]


class CorpusError(ValueError):
    """Malformed or empty corpus input."""


@dataclass
class Vocabulary:
    """Bijective word/id map with reserved special symbols.

    Ids 0..2 are fixed: 0 is the sentence-start pad, 1 the sentence-end
    marker, 2 the unknown-word bucket.  Regular words get ids from 3 upward,
    ordered by descending training frequency, ties broken lexicographically.
    """

    word_to_id: dict[str, int]
    id_to_word: list[str]
    counts: list[int]

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    @property
    def effective_size(self) -> int:
        """Number of emittable symbols: everything except the pad."""
        return len(self.id_to_word) - 1

    def id_for(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word_for(self, token_id: int) -> str:
        return self.id_to_word[token_id]

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def check(self) -> None:
        assert len(self.id_to_word) == len(self.word_to_id) == len(self.counts)
        assert self.id_to_word[:3] == list(SPECIALS)
        for i, w in enumerate(self.id_to_word):
            assert self.word_to_id[w] == i

    def to_lines(self) -> list[str]:
        return [f"{i}\t{w}\t{c}" for i, (w, c) in enumerate(zip(self.id_to_word, self.counts))]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocabulary":
        id_to_word: list[str] = []
        counts: list[int] = []
        for line in lines:
            idx_s, word, count_s = line.rstrip("\n").split("\t")
            if int(idx_s) != len(id_to_word):
                raise CorpusError(f"non-contiguous vocabulary id {idx_s}")
            id_to_word.append(word)
            counts.append(int(count_s))
        if id_to_word[:3] != list(SPECIALS):
            raise CorpusError("vocabulary is missing the reserved special symbols")
        word_to_id = {w: i for i, w in enumerate(id_to_word)}
        return cls(word_to_id, id_to_word, counts)

    def content_hash(self) -> str:
        payload = "\n".join(self.to_lines()).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls.from_lines(line for line in f if line.strip())


def build_vocabulary(lines: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count whitespace tokens and assign ids; words under min_count map to unk."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freq: dict[str, int] = {}
    n_lines = 0
    for line in lines:
        n_lines += 1
        for tok in line.split():
            freq[tok] = freq.get(tok, 0) + 1
    if n_lines == 0:
        raise CorpusError("empty corpus")
    kept = sorted(
        ((w, c) for w, c in freq.items() if c >= min_count),
        key=lambda wc: (-wc[1], wc[0]),
    )
    unk_count = sum(c for w, c in freq.items() if c < min_count)
    id_to_word = list(SPECIALS) + [w for w, _ in kept]
    counts = [0, n_lines, unk_count] + [c for _, c in kept]
    word_to_id = {w: i for i, w in enumerate(id_to_word)}
    return Vocabulary(word_to_id, id_to_word, counts)


def encode_sentence(vocab: Vocabulary, line: str, order: int) -> TokenSeq:
    """Encode one sentence as (order-1) pads, token ids (unk for OOV), end id."""
    if order < 1:
        raise ValueError("order must be >= 1")
    ids = [PAD_ID] * (order - 1)
    ids.extend(vocab.id_for(tok) for tok in line.split())
    ids.append(END_ID)
    return tuple(ids)


def decode_sentence(vocab: Vocabulary, seq: Sequence[int]) -> str:
    """Inverse of encode_sentence for in-vocabulary tokens (pads/end stripped)."""
    return " ".join(vocab.word_for(t) for t in seq if t not in (PAD_ID, END_ID))


@dataclass
class Corpus:
    """Encoded sentences plus document grouping and provenance.

    ``documents`` holds half-open [start, end) sentence-index ranges that
    partition the sentence list.  ``order`` records the n-gram order the
    sentences were padded for.
    """

    sentences: list[TokenSeq]
    documents: list[tuple[int, int]] = field(default_factory=list)
    order: int = 1
    source: str = ""
    source_hash: str = ""

    def __post_init__(self):
        if not self.documents:
            self.documents = [(i, i + 1) for i in range(len(self.sentences))]

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def n_scored_tokens(self) -> int:
        """Tokens a model is scored on: real words plus sentence-end, no pads."""
        pad = self.order - 1
        return sum(len(s) - pad for s in self.sentences)

    def document_tokens(self, doc_index: int, include_end: bool = False) -> list[int]:
        start, end = self.documents[doc_index]
        low = END_ID if include_end else UNK_ID
        return [t for i in range(start, end) for t in self.sentences[i] if t >= low]

    def check(self) -> None:
        covered = 0
        for start, end in self.documents:
            assert start == covered and end > start
            covered = end
        assert covered == len(self.sentences)


def parse_lines(lines: Iterable[str]) -> tuple[list[str], list[tuple[int, int]]]:
    """Split raw lines into sentence lines and document ranges via ###DOC### markers."""
    sentences: list[str] = []
    ranges: list[tuple[int, int]] = []
    saw_marker = False
    doc_start = 0
    for raw in lines:
        line = raw.rstrip("\n")
        if line.strip() == DOC_MARKER:
            if saw_marker or sentences:
                if len(sentences) > doc_start:
                    ranges.append((doc_start, len(sentences)))
                doc_start = len(sentences)
            saw_marker = True
        else:
            sentences.append(line)
    if saw_marker:
        if len(sentences) > doc_start:
            ranges.append((doc_start, len(sentences)))
    else:
        ranges = [(i, i + 1) for i in range(len(sentences))]
    return sentences, ranges


def encode_corpus(
    vocab: Vocabulary,
    sentence_lines: Sequence[str],
    order: int,
    documents: list[tuple[int, int]] | None = None,
    source: str = "",
    source_hash: str = "",
) -> Corpus:
    encoded = [encode_sentence(vocab, line, order) for line in sentence_lines]
    docs = list(documents) if documents else []
    return Corpus(encoded, docs, order=order, source=source, source_hash=source_hash)


def read_corpus_file(path) -> tuple[list[str], list[tuple[int, int]], str]:
    """Read a corpus file; returns (sentence lines, document ranges, sha256)."""
    with open(path, "rb") as f:
        payload = f.read()
    digest = hashlib.sha256(payload).hexdigest()
    text = payload.decode("utf-8")
    lines = text.splitlines()
    sentences, ranges = parse_lines(lines)
    return sentences, ranges, digest


def load_corpus(path, vocab: Vocabulary, order: int) -> Corpus:
    sentences, ranges, digest = read_corpus_file(path)
    return encode_corpus(vocab, sentences, order, ranges, source=str(path), source_hash=digest)


def split_corpus(corpus: Corpus, heldout_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Deterministic sentence-level split into (train, heldout), both non-empty.

    The split ignores document structure; each side is re-documented with one
    document per sentence.
    """
    if not 0.0 < heldout_fraction < 1.0:
        raise ValueError("heldout_fraction must be in (0, 1)")
    n = len(corpus.sentences)
    if n < 2:
        raise CorpusError("need at least 2 sentences to split")
    n_held = int(round(heldout_fraction * n))
    n_held = min(max(n_held, 1), n - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    held_idx = sorted(perm[:n_held].tolist())
    train_idx = sorted(perm[n_held:].tolist())

    def take(indices):
        return Corpus(
            [corpus.sentences[i] for i in indices],
            [],
            order=corpus.order,
            source=corpus.source,
            source_hash=corpus.source_hash,
        )

    return take(train_idx), take(held_idx)
