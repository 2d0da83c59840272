"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Iterable

from .corpus import Corpus, CorpusError, Vocabulary, build_vocabulary, encode_corpus, parse_lines


class NotFittedError(RuntimeError):
    """Estimator used before fit."""


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit before using it"
        )


def as_lines(X) -> list[str]:
    """Coerce fit/eval input to a list of sentence lines."""
    if isinstance(X, str):
        raise TypeError("expected an iterable of sentence strings, got a single string")
    lines = list(X)
    if not all(isinstance(s, str) for s in lines):
        raise TypeError("expected an iterable of sentence strings")
    return lines


def prepare_corpus(X, order: int, min_count: int) -> tuple[Corpus, Vocabulary]:
    """Build a vocabulary and encoded corpus from raw sentence lines."""
    lines = as_lines(X)
    sentences, documents = parse_lines(lines)
    if not sentences:
        raise CorpusError("empty corpus")
    vocab = build_vocabulary(sentences, min_count=min_count)
    return encode_corpus(vocab, sentences, order, documents), vocab


def encode_with(vocab: Vocabulary, X, order: int) -> Corpus:
    """Encode eval input with an existing vocabulary (Corpus passes through)."""
    if isinstance(X, Corpus):
        if X.order != order:
            raise ValueError(f"corpus was encoded for order {X.order}, model has order {order}")
        return X
    sentences, documents = parse_lines(as_lines(X))
    return encode_corpus(vocab, sentences, order, documents)


def check_positive(name: str, value, minimum=1) -> None:
    if value is None or value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")


def check_fraction(name: str, value) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must be in (0, 1), got {value}")
