"""Count-based n-gram baselines used for perplexity ordering checks.

The Kneser-Ney model here is a plain interpolated variant with a fixed
absolute discount; it is not the modified-KN implementation of any external
toolkit and exists only so the ordering experiments have a classical
reference point.
"""

from __future__ import annotations

import math

from sklearn.base import BaseEstimator

from .corpus import Corpus, CorpusError
from .hpylm import corpus_ngrams, sentence_ngrams
from .validation import check_is_fitted, encode_with, prepare_corpus


class _NgramCounts:
    def __init__(self, order: int):
        self.order = order
        # per depth: context tuple -> {word: count}, context length == depth
        self.by_depth = [dict() for _ in range(order)]

    def add(self, context, word):
        for depth in range(self.order):
            ctx = context[len(context) - depth:]
            table = self.by_depth[depth].setdefault(ctx, {})
            table[word] = table.get(word, 0) + 1


class AddOneNgramLM(BaseEstimator):
    """Maximum-likelihood n-gram model with add-one smoothing at the top order."""

    def __init__(self, order: int = 3, min_count: int = 1):
        self.order = order
        self.min_count = min_count

    def fit(self, X, y=None):
        corpus, vocab = prepare_corpus(X, self.order, self.min_count)
        return self.fit_corpus(corpus, vocab)

    def fit_corpus(self, corpus: Corpus, vocab):
        counts = _NgramCounts(self.order)
        for ctx, w in corpus_ngrams(corpus):
            counts.add(ctx, w)
        self.vocab_ = vocab
        self.counts_ = counts
        return self

    def ngram_prob(self, context, word) -> float:
        check_is_fitted(self, "counts_")
        ctx = tuple(context[len(context) - self.order + 1:]) if self.order > 1 else ()
        table = self.counts_.by_depth[self.order - 1].get(ctx, {})
        v = self.vocab_.effective_size
        return (table.get(word, 0) + 1) / (sum(table.values()) + v)

    def perplexity(self, X) -> float:
        corpus = encode_with(self.vocab_, X, self.order)
        n = corpus.n_scored_tokens
        if n == 0:
            raise CorpusError("empty corpus")
        lp = 0.0
        for sent in corpus.sentences:
            for ctx, w in sentence_ngrams(sent, self.order):
                lp += math.log(self.ngram_prob(ctx, w))
        return math.exp(-lp / n)


class InterpolatedKneserNeyLM(BaseEstimator):
    """Interpolated Kneser-Ney with a fixed absolute discount.

    Continuation counts drive the lower orders; the recursion bottoms out in
    a uniform distribution over the emittable vocabulary so no probability is
    ever zero.
    """

    def __init__(self, order: int = 3, discount: float = 0.75, min_count: int = 1):
        self.order = order
        self.discount = discount
        self.min_count = min_count

    def fit(self, X, y=None):
        corpus, vocab = prepare_corpus(X, self.order, self.min_count)
        return self.fit_corpus(corpus, vocab)

    def fit_corpus(self, corpus: Corpus, vocab):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        top = {}
        for ctx, w in corpus_ngrams(corpus):
            table = top.setdefault(ctx, {})
            table[w] = table.get(w, 0) + 1
        # continuation counts: at depth j, count distinct (j+1)-gram types
        levels = [top]
        for depth in range(self.order - 1, 0, -1):
            lower = {}
            for ctx, table in levels[-1].items():
                for w in table:
                    sub = lower.setdefault(ctx[1:], {})
                    sub[w] = sub.get(w, 0) + 1
            levels.append(lower)
        levels.reverse()  # levels[j] keyed by contexts of length j
        self.levels_ = levels
        self.vocab_ = vocab
        return self

    def _prob(self, ctx, word, depth: int) -> float:
        if depth < 0:
            return 1.0 / self.vocab_.effective_size
        table = self.levels_[depth].get(ctx[len(ctx) - depth:] if depth else ())
        lower = self._prob(ctx, word, depth - 1)
        if not table:
            return lower
        total = sum(table.values())
        d = self.discount
        discounted = max(table.get(word, 0) - d, 0.0) / total
        backoff = d * len(table) / total
        return discounted + backoff * lower

    def ngram_prob(self, context, word) -> float:
        check_is_fitted(self, "levels_")
        return self._prob(tuple(context), word, self.order - 1)

    def perplexity(self, X) -> float:
        corpus = encode_with(self.vocab_, X, self.order)
        n = corpus.n_scored_tokens
        if n == 0:
            raise CorpusError("empty corpus")
        lp = 0.0
        for sent in corpus.sentences:
            for ctx, w in sentence_ngrams(sent, self.order):
                lp += math.log(self.ngram_prob(ctx, w))
        return math.exp(-lp / n)
