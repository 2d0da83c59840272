"""Hierarchical Pitman-Yor n-gram language model over a back-off context trie.

Each trie node holds a restaurant whose base measure is the predictive
distribution of its parent node; the root's base is either a fixed uniform
distribution over the emittable vocabulary or an injected shared restaurant
(used by the hidden-state model).
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import Corpus, CorpusError, PAD_ID
from .pyp import PypParams, Restaurant, SeatingError, sample_hyperparameters
from .validation import check_is_fitted, check_positive, encode_with, prepare_corpus


class UniformBase:
    """Fixed uniform base over the emittable vocabulary (pad excluded)."""

    __slots__ = ("n",)

    def __init__(self, n: int):
        self.n = n

    def prob(self, dish) -> float:
        return 1.0 / self.n

    def add(self, dish, rng) -> None:
        pass

    def remove(self, dish, rng) -> None:
        pass

    def copy(self) -> "UniformBase":
        return UniformBase(self.n)


class SharedUnigram:
    """A restaurant over words with a uniform base, usable as a trie base.

    This is the order-1 model that the hidden-state emission tries share:
    new tables at any state's root push customers here.
    """

    __slots__ = ("restaurant", "params", "base")

    def __init__(self, vocab_size: int, params: PypParams | None = None):
        self.restaurant = Restaurant()
        self.params = params or PypParams(0.5, 1.0)
        self.base = UniformBase(vocab_size)

    def prob(self, dish) -> float:
        return self.restaurant.prob(dish, self.base.prob(dish), self.params)

    def add(self, dish, rng) -> None:
        self.restaurant.add(dish, self.base.prob(dish), self.params, rng)

    def remove(self, dish, rng) -> None:
        self.restaurant.remove(dish, rng)

    def copy(self) -> "SharedUnigram":
        dup = SharedUnigram(self.base.n, PypParams(self.params.discount, self.params.strength))
        dup.restaurant = self.restaurant.copy()
        return dup


class TrieNode:
    __slots__ = ("restaurant", "children")

    def __init__(self):
        self.restaurant = Restaurant()
        self.children: dict[int, TrieNode] = {}


class ContextTrie:
    """Back-off tree of restaurants keyed by context suffixes, newest word first.

    Depth j conditions on the j most recent context words; the maximum depth
    is order - 1.  ``params`` holds one PypParams per depth and may be a list
    shared with other tries (the hidden-state model shares emission params
    across states).
    """

    def __init__(self, order: int, base, params: list[PypParams] | None = None):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        self.base = base
        self.params = params if params is not None else [PypParams(0.5, 1.0) for _ in range(order)]
        self.root = TrieNode()

    def _path(self, context, create: bool):
        """Nodes along the context suffix, shallowest first; stops where absent."""
        path = [self.root]
        node = self.root
        for tok in reversed(context[max(0, len(context) - self.order + 1):]):
            child = node.children.get(tok)
            if child is None:
                if not create:
                    break
                child = TrieNode()
                node.children[tok] = child
            path.append(child)
            node = child
        return path

    def prob(self, context, word) -> float:
        """Predictive probability, backing off through the deepest existing node."""
        p = self.base.prob(word)
        for depth, node in enumerate(self._path(context, create=False)):
            p = node.restaurant.prob(word, p, self.params[depth])
        return p

    def _prefix_prob(self, path, depth: int, word) -> float:
        p = self.base.prob(word)
        for j in range(depth):
            p = path[j].restaurant.prob(word, p, self.params[j])
        return p

    def _add_at(self, path, depth: int, word, rng) -> None:
        if depth < 0:
            self.base.add(word, rng)
            return
        base_p = self._prefix_prob(path, depth, word)
        if path[depth].restaurant.add(word, base_p, self.params[depth], rng):
            self._add_at(path, depth - 1, word, rng)

    def insert(self, context, word, rng) -> None:
        """Add a customer at the deepest node; new tables cascade to parents."""
        path = self._path(context, create=True)
        self._add_at(path, len(path) - 1, word, rng)

    def _remove_at(self, path, depth: int, word, rng) -> None:
        if depth < 0:
            self.base.remove(word, rng)
            return
        if path[depth].restaurant.remove(word, rng):
            self._remove_at(path, depth - 1, word, rng)

    def remove(self, context, word, rng) -> None:
        """Remove one customer of (context, word); prunes emptied nodes."""
        path = self._path(context, create=False)
        suffix = tuple(reversed(context[max(0, len(context) - self.order + 1):]))
        if len(path) - 1 != len(suffix):
            raise SeatingError("n-gram was never inserted")
        self._remove_at(path, len(path) - 1, word, rng)
        for depth in range(len(path) - 1, 0, -1):
            node = path[depth]
            if node.restaurant.total_customers == 0 and not node.children:
                del path[depth - 1].children[suffix[depth - 1]]
            else:
                break

    def iter_nodes(self):
        """Yield (depth, context-suffix tuple, node) in sorted depth-first order."""
        stack = [(0, (), self.root)]
        while stack:
            depth, ctx, node = stack.pop()
            yield depth, ctx, node
            for tok in sorted(node.children, reverse=True):
                stack.append((depth + 1, ctx + (tok,), node.children[tok]))

    def depth_restaurants(self, depth: int) -> list[Restaurant]:
        return [node.restaurant for d, _, node in self.iter_nodes() if d == depth]

    @property
    def total_customers(self) -> int:
        return sum(node.restaurant.total_customers for _, _, node in self.iter_nodes())

    def customers_at_depth(self, depth: int) -> int:
        return sum(r.total_customers for r in self.depth_restaurants(depth))

    def audit(self) -> None:
        """Check seating invariants and parent/child propagation consistency."""
        for _, _, node in self.iter_nodes():
            node.restaurant.check()
            for child in node.children.values():
                for dish, tabs in child.restaurant.tables.items():
                    assert node.restaurant.customers(dish) >= len(tabs), (
                        "parent customers fell below child tables"
                    )

    def copy(self, base=None) -> "ContextTrie":
        dup = ContextTrie(self.order, base if base is not None else self.base, list(self.params))

        def clone(node: TrieNode) -> TrieNode:
            c = TrieNode()
            c.restaurant = node.restaurant.copy()
            c.children = {tok: clone(ch) for tok, ch in node.children.items()}
            return c

        dup.root = clone(self.root)
        return dup


def sentence_ngrams(sentence, order: int):
    """(context, word) pairs for the scored positions of one encoded sentence."""
    pad = order - 1
    return [(sentence[t - pad:t], sentence[t]) for t in range(pad, len(sentence))]


def corpus_ngrams(corpus: Corpus):
    grams = []
    for sent in corpus.sentences:
        grams.extend(sentence_ngrams(sent, corpus.order))
    return grams


def train_trie(
    corpus: Corpus,
    trie: ContextTrie,
    iterations: int,
    rng,
    resample_base_params=None,
) -> ContextTrie:
    """Seed the trie with every n-gram, then Gibbs remove/reinsert sweeps.

    Each sweep visits the n-grams in corpus order and finishes by resampling
    the per-depth Pitman-Yor parameters; ``resample_base_params`` is an
    optional hook for a shared base restaurant.
    """
    check_positive("iterations", iterations)
    grams = corpus_ngrams(corpus)
    if not grams:
        raise CorpusError("empty corpus")
    for ctx, w in grams:
        trie.insert(ctx, w, rng)
    for _ in range(iterations):
        for ctx, w in grams:
            trie.remove(ctx, w, rng)
            trie.insert(ctx, w, rng)
        for depth in range(trie.order):
            trie.params[depth] = sample_hyperparameters(
                trie.depth_restaurants(depth), trie.params[depth], rng
            )
        if resample_base_params is not None:
            resample_base_params(rng)
    return trie


def trie_sentence_logprob(trie: ContextTrie, sentence, order: int) -> float:
    lp = 0.0
    for ctx, w in sentence_ngrams(sentence, order):
        lp += math.log(trie.prob(ctx, w))
    return lp


class HierarchicalPitmanYorLM(BaseEstimator):
    """n-gram language model with hierarchical Pitman-Yor smoothing.

    Parameters
    ----------
    order : n-gram order (context length order - 1).
    iterations : Gibbs sweeps over the training n-grams.
    min_count : words seen fewer times map to the unknown symbol.
    seed : RNG seed; training is bit-reproducible given (data, params, seed).
    """

    def __init__(self, order: int = 3, iterations: int = 50, min_count: int = 1, seed: int = 0):
        self.order = order
        self.iterations = iterations
        self.min_count = min_count
        self.seed = seed

    def fit(self, X, y=None):
        corpus, vocab = prepare_corpus(X, self.order, self.min_count)
        return self.fit_corpus(corpus, vocab)

    def fit_corpus(self, corpus: Corpus, vocab):
        check_positive("order", self.order)
        rng = np.random.default_rng(self.seed)
        trie = ContextTrie(self.order, UniformBase(vocab.effective_size))
        train_trie(corpus, trie, self.iterations, rng)
        self.vocab_ = vocab
        self.trie_ = trie
        self.n_train_tokens_ = corpus.n_scored_tokens
        self.iterations_run_ = self.iterations
        return self

    def ngram_prob(self, context, word) -> float:
        """Probability of word id given a context window of order - 1 ids."""
        check_is_fitted(self, "trie_")
        if len(context) != self.order - 1:
            raise ValueError(f"context must have length {self.order - 1}")
        return self.trie_.prob(tuple(context), word)

    def sentence_logprob(self, sentence) -> float:
        check_is_fitted(self, "trie_")
        return trie_sentence_logprob(self.trie_, sentence, self.order)

    def corpus_logprob(self, corpus: Corpus) -> float:
        return sum(self.sentence_logprob(s) for s in corpus.sentences)

    def perplexity(self, X) -> float:
        """exp of mean negative log-probability per scored token on held-out text."""
        check_is_fitted(self, "trie_")
        corpus = encode_with(self.vocab_, X, self.order)
        n = corpus.n_scored_tokens
        if n == 0:
            raise CorpusError("empty corpus")
        return math.exp(-self.corpus_logprob(corpus) / n)

    def score(self, X, y=None) -> float:
        """Mean log-probability per token (higher is better)."""
        return -math.log(self.perplexity(X))
