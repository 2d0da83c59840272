"""Hidden-state n-gram language model with beam-sampled blocked Gibbs inference.

States form an unbounded mixture: transition rows are Dirichlet-process
restaurants sharing a stick-breaking base over states, and each state emits
words through its own Pitman-Yor context trie whose root backs off to one
shared unigram restaurant.  Inference alternates slice-truncated forward
filtering / backward sampling of whole sentences with resampling of seatings,
the shared stick, and every hyperparameter.

Slice semantics: the forward recursion keeps the transition factor inside the
truncated sum (predecessors with pi <= u_t are dropped, survivors contribute
pi-weighted mass), so disabling slices reproduces the exact forward-backward
sampler over the instantiated states.
"""

from __future__ import annotations

import math
import time

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import Corpus, CorpusError
from .eminit import bootstrap_smoothing, em_run
from .hpylm import ContextTrie, SharedUnigram, sentence_ngrams
from .pyp import PypParams, Restaurant, sample_hyperparameters
from .validation import check_is_fitted, check_positive, encode_with, prepare_corpus

MAX_SLICE_RETRIES = 5


class BeamExhausted(RuntimeError):
    """No reachable state under the current slice variables."""


class HmmState:
    """Mutable chain state: stick, transition rows, per-state emission tries.

    The transition matrix convention everywhere: rows 0..K-1 are states and
    row K is the sentence-start context; columns 0..K-1 are states and column
    K is the uninstantiated remainder.
    """

    def __init__(self, order, vocab_size, shared=None, emit_params=None, alpha=1.0, gamma=1.0):
        self.order = order
        self.vocab_size = vocab_size
        self.shared = shared if shared is not None else SharedUnigram(vocab_size)
        self.emit_params = (
            emit_params if emit_params is not None else [PypParams(0.5, 1.0) for _ in range(order)]
        )
        self.alpha = alpha
        self.gamma = gamma
        self.K = 0
        self.stick: list[float] = []
        self.stick_rem = 1.0
        self.trans: list[Restaurant] = []
        self.start_row = Restaurant()
        self.tries: list[ContextTrie] = []
        self.state_seqs: list[list[int]] = []

    def add_state(self) -> int:
        self.trans.append(Restaurant())
        self.tries.append(ContextTrie(self.order, self.shared, self.emit_params))
        self.K += 1
        return self.K - 1

    def trans_params(self) -> PypParams:
        return PypParams(0.0, self.alpha)

    def transition_matrix(self) -> np.ndarray:
        """Predictive transition probabilities, (K+1) x (K+1), rows sum to 1."""
        K = self.K
        beta = np.asarray(self.stick)
        P = np.empty((K + 1, K + 1))
        for r, rest in enumerate(self.trans + [self.start_row]):
            denom = rest.total_customers + self.alpha
            row = P[r]
            row[:K] = (self.alpha / denom) * beta
            row[K] = self.alpha * self.stick_rem / denom
            for dish, cnt in rest.dish_customers.items():
                row[dish] += cnt / denom
        return P

    def emit_prob(self, state_id: int, context, word) -> float:
        return self.tries[state_id].prob(context, word)

    def used_states(self) -> list[int]:
        return [k for k in range(self.K) if self.tries[k].root.restaurant.total_customers > 0]

    def audit(self, corpus: Corpus | None = None) -> None:
        assert abs(sum(self.stick) + self.stick_rem - 1.0) < 1e-9
        assert self.K == len(self.trans) == len(self.tries) == len(self.stick)
        for row in self.trans + [self.start_row]:
            row.check()
            for dish in row.tables:
                assert 0 <= dish < self.K
        for trie in self.tries:
            trie.audit()
        self.shared.restaurant.check()
        if corpus is not None:
            n = corpus.n_scored_tokens
            deepest = self.order - 1
            assert sum(t.customers_at_depth(deepest) for t in self.tries) == n
            assert (
                sum(r.total_customers for r in self.trans) + self.start_row.total_customers == n
            )


def marginal_word_prob(state: HmmState, prev_state: int, context, word, P=None) -> float:
    """Mixture predictive: sum_h pi(prev, h) emit(h, ctx, w) + remainder * base."""
    if not 0 <= prev_state < state.K:
        raise ValueError(f"prev_state must be in [0, {state.K})")
    if P is None:
        P = state.transition_matrix()
    row = P[prev_state]
    total = row[state.K] * state.shared.prob(word)
    for h in range(state.K):
        total += row[h] * state.tries[h].prob(context, word)
    return total


def sample_slices(state: HmmState, sentence, hseq, rng, P=None) -> np.ndarray:
    """u_t ~ Uniform(0, pi(h_{t-1}, h_t)), with the start row for the first position."""
    if P is None:
        P = state.transition_matrix()
    K = state.K
    prev = [K] + list(hseq[:-1])
    pis = P[prev, hseq]
    if np.any(pis <= 0.0):
        raise ValueError("inconsistent state sequence")
    return rng.random(len(hseq)) * pis


def beam_forward(state: HmmState, sentence, slices, P=None) -> list[np.ndarray]:
    """Slice-truncated filtered messages, one normalized array over states per position.

    Predecessors whose transition probability does not exceed the position's
    slice are dropped (equivalent to scanning each row's transitions in
    descending order and stopping at the threshold); survivors contribute
    pi-weighted mass.  ``slices=None`` disables truncation and yields the
    exact forward recursion over the instantiated states.
    """
    if P is None:
        P = state.transition_matrix()
    K = state.K
    pad = state.order - 1
    tries = state.tries
    Pk = P[:K, :K]
    start_vec = P[K, :K]
    msgs: list[np.ndarray] = []
    prev = None
    for i, t in enumerate(range(pad, len(sentence))):
        u = None if slices is None else slices[i]
        if prev is None:
            inc = start_vec if u is None else np.where(start_vec > u, start_vec, 0.0)
        else:
            M = Pk if u is None else np.where(Pk > u, Pk, 0.0)
            inc = prev @ M
        cand = np.flatnonzero(inc > 0.0)
        if cand.size == 0:
            raise BeamExhausted(f"no reachable state at position {i}")
        ctx = sentence[t - pad:t]
        w = sentence[t]
        m = np.zeros(K)
        for h in cand:
            m[h] = inc[h] * tries[h].prob(ctx, w)
        tot = m.sum()
        if tot <= 0.0:
            raise BeamExhausted(f"zero forward mass at position {i}")
        msgs.append(m / tot)
        prev = msgs[-1]
    return msgs


def _categorical(weights: np.ndarray, rng) -> int:
    cum = np.cumsum(weights)
    x = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, x, side="right"), len(weights) - 1))


def sample_state_sequence(messages, state: HmmState, slices, rng, P=None) -> list[int]:
    """Backward pass: h_T ~ last message, then h_{t-1} ~ msg * [u_t < pi] * pi."""
    if P is None:
        P = state.transition_matrix()
    K = state.K
    Pk = P[:K, :K]
    T = len(messages)
    seq = [0] * T
    h = _categorical(messages[-1], rng)
    seq[-1] = h
    for i in range(T - 2, -1, -1):
        col = Pk[:, h]
        w = messages[i] * col
        if slices is not None:
            w = np.where(col > slices[i + 1], w, 0.0)
        tot = w.sum()
        if tot <= 0.0:
            raise BeamExhausted(f"backward pass stranded at position {i}")
        h = _categorical(w / tot, rng)
        seq[i] = h
    return seq


def extend_state_space(state: HmmState, min_slice: float, rng, max_new: int = 100000) -> int:
    """Break the stick (Beta(1, gamma) proportions) until the remainder < min_slice."""
    if not 0.0 < min_slice <= 1.0:
        raise ValueError("min_slice must be in (0, 1]")
    added = 0
    while state.stick_rem >= min_slice:
        if added >= max_new:
            raise RuntimeError("stick extension did not terminate")
        b = rng.beta(1.0, state.gamma)
        state.stick.append(b * state.stick_rem)
        state.stick_rem *= 1.0 - b
        state.add_state()
        added += 1
    return added


def remove_sentence(state: HmmState, sentence, hseq, rng) -> None:
    pad = state.order - 1
    prev = None
    for i, t in enumerate(range(pad, len(sentence))):
        h = hseq[i]
        row = state.start_row if prev is None else state.trans[prev]
        row.remove(h, rng)
        state.tries[h].remove(sentence[t - pad:t], sentence[t], rng)
        prev = h


def add_sentence(state: HmmState, sentence, hseq, rng) -> None:
    pad = state.order - 1
    params = state.trans_params()
    prev = None
    for i, t in enumerate(range(pad, len(sentence))):
        h = hseq[i]
        row = state.start_row if prev is None else state.trans[prev]
        row.add(h, state.stick[h], params, rng)
        state.tries[h].insert(sentence[t - pad:t], sentence[t], rng)
        prev = h


def prune_states(state: HmmState) -> None:
    """Drop states without customers, folding their stick mass into the remainder.

    Held-out sequence probabilities are unchanged: an empty state emits via the
    shared base and transitions via the stick, exactly like the remainder.
    """
    used = state.used_states()
    if len(used) == state.K:
        return
    remap = {old: new for new, old in enumerate(used)}
    folded = sum(w for k, w in enumerate(state.stick) if k not in remap)
    state.stick = [state.stick[k] for k in used]
    state.stick_rem += folded
    state.tries = [state.tries[k] for k in used]
    rows = [state.trans[k] for k in used]
    for row in rows + [state.start_row]:
        row.tables = {remap[d]: tabs for d, tabs in row.tables.items()}
        row.dish_customers = {remap[d]: c for d, c in row.dish_customers.items()}
    state.trans = rows
    state.K = len(used)
    state.state_seqs = [[remap[h] for h in seq] for seq in state.state_seqs]


def resample_stick(state: HmmState, rng) -> None:
    """Dirichlet update of the shared base over states from table counts."""
    m = np.zeros(state.K)
    for row in state.trans + [state.start_row]:
        for dish, tabs in row.tables.items():
            m[dish] += len(tabs)
    draw = rng.dirichlet(np.append(m, state.gamma))
    state.stick = draw[:-1].tolist()
    state.stick_rem = float(draw[-1])


def resample_concentrations(state: HmmState, rng) -> None:
    """Auxiliary-variable updates for the row concentration and the top-level one."""
    rows = [r for r in state.trans + [state.start_row] if r.total_customers > 0]
    if not rows:
        return
    total_tables = sum(r.total_tables for r in rows)
    log_w = 0.0
    s_sum = 0
    for r in rows:
        c = r.total_customers
        log_w += math.log(rng.beta(state.alpha + 1.0, c))
        if rng.random() < c / (c + state.alpha):
            s_sum += 1
    state.alpha = max(float(rng.gamma(1.0 + total_tables - s_sum, 1.0 / (1.0 - log_w))), 1e-8)
    # Escobar-West for the stick concentration: the top level saw total_tables
    # draws occupying K distinct states, Gamma(1, 1) prior.
    m = total_tables
    k = state.K
    eta = rng.beta(state.gamma + 1.0, m)
    b = 1.0 - math.log(eta)
    odds = k / (m * b)
    shape = 1.0 + k if rng.random() < odds / (1.0 + odds) else float(k)
    state.gamma = max(float(rng.gamma(shape, 1.0 / b)), 1e-8)


def resample_emission_params(state: HmmState, rng) -> None:
    for depth in range(state.order):
        rests = [r for trie in state.tries for r in trie.depth_restaurants(depth)]
        state.emit_params[depth] = sample_hyperparameters(rests, state.emit_params[depth], rng)
    state.shared.params = sample_hyperparameters(
        [state.shared.restaurant], state.shared.params, rng
    )


def gibbs_iteration(state: HmmState, corpus: Corpus, rng) -> HmmState:
    """One blocked Gibbs sweep: per sentence slice/extend/filter/sample, then
    hyperparameters, then pruning and id compaction."""
    for s_idx, sentence in enumerate(corpus.sentences):
        hseq = state.state_seqs[s_idx]
        remove_sentence(state, sentence, hseq, rng)
        msgs = None
        slices = None
        P = None
        for _ in range(MAX_SLICE_RETRIES):
            P = state.transition_matrix()
            slices = sample_slices(state, sentence, hseq, rng, P=P)
            if extend_state_space(state, float(slices.min()), rng):
                P = state.transition_matrix()
            try:
                msgs = beam_forward(state, sentence, slices, P=P)
                break
            except BeamExhausted:
                msgs = None
        if msgs is None:
            # rare: repeated beam exhaustion; fall back to the exact pass
            P = state.transition_matrix()
            slices = None
            msgs = beam_forward(state, sentence, None, P=P)
        new_h = sample_state_sequence(msgs, state, slices, rng, P=P)
        add_sentence(state, sentence, new_h, rng)
        state.state_seqs[s_idx] = new_h
    prune_states(state)
    resample_stick(state, rng)
    resample_concentrations(state, rng)
    resample_emission_params(state, rng)
    return state


def sequence_logprob(state: HmmState, sentence, P=None) -> float:
    """Exact forward log-probability, marginalizing states plus the remainder.

    The remainder behaves as one aggregate fresh state: it emits from the
    shared base and leaves through the stick weights.
    """
    K = state.K
    if K == 0:
        raise ValueError("untrained model")
    if P is None:
        P = state.transition_matrix()
    A = np.empty((K + 1, K + 1))
    A[:K] = P[:K]
    A[K, :K] = state.stick
    A[K, K] = state.stick_rem
    start = P[K]
    pad = state.order - 1
    ll = 0.0
    v = None
    e = np.empty(K + 1)
    for t in range(pad, len(sentence)):
        ctx = sentence[t - pad:t]
        w = sentence[t]
        for h in range(K):
            e[h] = state.tries[h].prob(ctx, w)
        e[K] = state.shared.prob(w)
        v = (start if v is None else v @ A) * e
        tot = float(v.sum())
        if tot <= 0.0:
            raise ValueError("zero-probability sentence")
        ll += math.log(tot)
        v = v / tot
    return ll


def corpus_logprob(state: HmmState, corpus: Corpus) -> float:
    P = state.transition_matrix()
    return sum(sequence_logprob(state, s, P=P) for s in corpus.sentences)


def init_from_state_seqs(
    corpus: Corpus,
    seqs: list[list[int]],
    order: int,
    vocab_size: int,
    shared: SharedUnigram,
    emit_params: list[PypParams],
    rng,
    alpha: float = 1.0,
    gamma: float = 1.0,
) -> HmmState:
    """Seed a chain from fixed state sequences (normally the EM argmax)."""
    used = sorted({h for seq in seqs for h in seq})
    remap = {old: new for new, old in enumerate(used)}
    seqs = [[remap[h] for h in seq] for seq in seqs]
    state = HmmState(order, vocab_size, shared=shared, emit_params=emit_params,
                     alpha=alpha, gamma=gamma)
    K = len(used)
    for _ in range(K):
        state.add_state()
    state.stick = [1.0 / (K + 1)] * K
    state.stick_rem = 1.0 / (K + 1)
    for sentence, hseq in zip(corpus.sentences, seqs):
        add_sentence(state, sentence, hseq, rng)
    state.state_seqs = seqs
    resample_stick(state, rng)
    return state


class NgramHmmLM(BaseEstimator):
    """Hidden-state n-gram language model.

    fit() runs the two-stage initializer (Pitman-Yor bootstrap for smoothing
    parameters, truncated EM for the starting state sequences) and then the
    blocked Gibbs chain.  Perplexity averages sentence log-probabilities over
    posterior snapshots taken every ``sample_every`` iterations after
    ``burn_in`` (default: half the iterations).
    """

    def __init__(
        self,
        order: int = 3,
        iterations: int = 100,
        burn_in: int | None = None,
        sample_every: int = 10,
        max_snapshots: int = 10,
        em_states: int = 16,
        em_iterations: int = 20,
        em_tau: float = 0.0,
        em_tol: float = 1e-3,
        bootstrap_iterations: int = 20,
        min_count: int = 1,
        seed: int = 0,
        eval_every: int = 10,
    ):
        self.order = order
        self.iterations = iterations
        self.burn_in = burn_in
        self.sample_every = sample_every
        self.max_snapshots = max_snapshots
        self.em_states = em_states
        self.em_iterations = em_iterations
        self.em_tau = em_tau
        self.em_tol = em_tol
        self.bootstrap_iterations = bootstrap_iterations
        self.min_count = min_count
        self.seed = seed
        self.eval_every = eval_every

    def fit(self, X, y=None, heldout=None, log_path=None):
        corpus, vocab = prepare_corpus(X, self.order, self.min_count)
        held = encode_with(vocab, heldout, self.order) if heldout is not None else None
        return self.fit_corpus(corpus, vocab, heldout=held, log_path=log_path)

    def fit_corpus(self, corpus: Corpus, vocab, heldout=None, log_path=None,
                   shared=None, rng=None):
        from .serialize import dumps_hmm_state

        check_positive("iterations", self.iterations)
        check_positive("em_states", self.em_states)
        if not corpus.sentences:
            raise CorpusError("empty corpus")
        if rng is None:
            rng = np.random.default_rng(self.seed)
        _, boot_params = bootstrap_smoothing(
            corpus, vocab.effective_size, self.order, self.bootstrap_iterations, rng
        )
        emit_params = [PypParams(p.discount, p.strength) for p in boot_params]
        if shared is None:
            shared = SharedUnigram(vocab.effective_size)
        shared.params = PypParams(boot_params[0].discount, boot_params[0].strength)
        em = em_run(
            corpus, self.em_states, self.order, self.em_iterations, self.em_tol, rng,
            vocab.size, tau=self.em_tau,
        )
        state = init_from_state_seqs(
            corpus, em.state_seqs, self.order, vocab.effective_size, shared, emit_params, rng
        )
        burn = self.burn_in if self.burn_in is not None else self.iterations // 2
        snapshots: list[str] = []
        log_rows: list[str] = []
        for it in range(1, self.iterations + 1):
            started = time.perf_counter()
            gibbs_iteration(state, corpus, rng)
            elapsed = time.perf_counter() - started
            if it > burn and (it - burn) % self.sample_every == 0:
                snapshots.append(dumps_hmm_state(state))
                if len(snapshots) > self.max_snapshots:
                    snapshots.pop(0)
            if it % self.eval_every == 0 or it == self.iterations:
                train_ll = corpus_logprob(state, corpus)
                held_ppl = (
                    math.exp(-corpus_logprob(state, heldout) / heldout.n_scored_tokens)
                    if heldout is not None and heldout.sentences
                    else float("nan")
                )
            else:
                train_ll = float("nan")
                held_ppl = float("nan")
            log_rows.append(f"{it}\t{state.K}\t{train_ll:.6f}\t{held_ppl:.6f}\t{elapsed:.3f}")
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as f:
                f.write("\n".join(log_rows) + "\n")
        self.vocab_ = vocab
        self.state_ = state
        self.snapshots_ = snapshots
        self.n_states_ = state.K
        self.train_log_ = log_rows
        self.n_train_tokens_ = corpus.n_scored_tokens
        return self

    def _posterior_states(self, n_samples=None) -> list[HmmState]:
        from .serialize import loads_hmm_state

        snaps = self.snapshots_
        if n_samples is not None:
            snaps = snaps[-n_samples:]
        if not snaps:
            return [self.state_]
        return [loads_hmm_state(s) for s in snaps]

    def sequence_logprob(self, sentence) -> float:
        check_is_fitted(self, "state_")
        return sequence_logprob(self.state_, sentence)

    def perplexity(self, X, n_samples: int | None = None) -> float:
        """Posterior-averaged perplexity over the chain's stored snapshots."""
        check_is_fitted(self, "state_")
        corpus = encode_with(self.vocab_, X, self.order)
        n = corpus.n_scored_tokens
        if n == 0:
            raise CorpusError("empty corpus")
        states = self._posterior_states(n_samples)
        total = sum(corpus_logprob(st, corpus) for st in states) / len(states)
        return math.exp(-total / n)

    def score(self, X, y=None) -> float:
        return -math.log(self.perplexity(X))

    def similar_words(self, context, word, top_k: int = 10):
        """Rank vocabulary by shared hidden-state usage with ``word`` in ``context``."""
        from .jointspace import similar_words

        check_is_fitted(self, "state_")
        return similar_words(self.state_, self.vocab_, context, word, top_k)
