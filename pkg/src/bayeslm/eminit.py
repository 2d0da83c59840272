"""Two-stage chain initialization: Pitman-Yor bootstrap, then truncated EM.

The EM stage fits a fixed-size hidden-state model with forward messages only.
Truncation drops states whose normalized incoming mass falls below tau and
renormalizes the survivors; at tau = 0 the recursions are the exact forward
quantities and the algorithm is standard EM.  Smoothed posteriors are read
off anchored forward passes sent "in multiple paths": for every anchor
position the end-of-chain marginal of the anchored pass is that position's
smoothed posterior.  em_run assembles all anchors at once through the
equivalent single accumulation pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, CorpusError
from .hpylm import ContextTrie, UniformBase, train_trie
from .validation import check_positive


def bootstrap_smoothing(corpus: Corpus, vocab_eff_size: int, order: int, iterations: int, rng):
    """Train the smoothing backbone; returns (trie, per-depth PY params)."""
    trie = ContextTrie(order, UniformBase(vocab_eff_size))
    train_trie(corpus, trie, iterations, rng)
    return trie, trie.params


@dataclass
class EmModel:
    """Fixed-size HMM parameters for the EM stage."""

    start: np.ndarray  # (K,)
    trans: np.ndarray  # (K, K), rows normalized
    emit: np.ndarray   # (K, V), rows normalized

    @property
    def n_states(self) -> int:
        return len(self.start)


@dataclass
class ForwardResult:
    messages: list[np.ndarray]
    kept: list[np.ndarray]
    pre_totals: list[float]
    loglik: float


@dataclass
class EmMessages:
    """Message bundle: per-position forward maps, anchored multipath maps,
    and the truncation record (survivor masks and pre-truncation totals)."""

    forward: list[np.ndarray]
    multipath: dict[int, list[np.ndarray]] = field(default_factory=dict)
    kept: list[np.ndarray] = field(default_factory=list)
    pre_totals: list[float] = field(default_factory=list)


def em_forward(model: EmModel, words, tau: float = 0.0) -> ForwardResult:
    """Truncated forward recursion; each message normalized over survivors."""
    K = model.n_states
    msgs: list[np.ndarray] = []
    kept: list[np.ndarray] = []
    pre: list[float] = []
    ll = 0.0
    prev = None
    for w in words:
        inc = model.start if prev is None else prev @ model.trans
        raw = inc * model.emit[:, w]
        tot = float(raw.sum())
        if tot <= 0.0:
            # truncation starved the emission; keep the incoming mass alive
            raw = inc.copy()
            tot = float(raw.sum())
            if tot <= 0.0:
                raw = np.full(K, 1.0 / K)
                tot = 1.0
        norm = raw / tot
        keep = norm >= tau
        if not keep.any():
            keep = np.zeros(K, dtype=bool)
            keep[int(np.argmax(norm))] = True
        m = norm * keep
        m /= m.sum()
        msgs.append(m)
        kept.append(keep)
        pre.append(tot)
        ll += math.log(tot)
        prev = m
    return ForwardResult(msgs, kept, pre, ll)


def em_multipath(model: EmModel, words, anchor: int, tau: float = 0.0) -> list[np.ndarray]:
    """Anchored forward pass: per position i >= anchor a (K, K) map M[h, v]
    carrying the joint mass of (state at i = h, state at anchor = v).

    The end-of-chain column marginal is the anchor position's smoothed
    posterior; at the anchor itself the map is the diagonal of the forward
    message.
    """
    if not 0 <= anchor < len(words):
        raise ValueError("anchor out of range")
    fwd = em_forward(model, words, tau)
    M = np.diag(fwd.messages[anchor])
    out = [M]
    for i in range(anchor + 1, len(words)):
        M = (model.trans.T @ M) * model.emit[:, words[i]][:, None]
        tot = float(M.sum())
        if tot <= 0.0:
            M = np.repeat(fwd.messages[anchor][None, :], model.n_states, axis=0)
            M = M / M.sum()
        else:
            M = M / tot
        marg = M.sum(axis=1)
        keep = marg >= tau
        if not keep.any():
            keep = np.zeros(model.n_states, dtype=bool)
            keep[int(np.argmax(marg))] = True
        M = M * keep[:, None]
        M = M / M.sum()
        out.append(M)
    return out


def compute_messages(model: EmModel, words, tau: float = 0.0, anchors=None) -> EmMessages:
    fwd = em_forward(model, words, tau)
    bundle = EmMessages(fwd.messages, {}, fwd.kept, fwd.pre_totals)
    for j in anchors or ():
        bundle.multipath[j] = em_multipath(model, words, j, tau)
    return bundle


def posterior_stats(model: EmModel, words, tau: float = 0.0):
    """Smoothed per-position posteriors and summed pairwise posteriors.

    Equivalent to assembling em_multipath end-of-chain marginals for every
    anchor (the anchored passes are linear, so one reverse accumulation
    recovers them all); exact at tau = 0.
    """
    fwd = em_forward(model, words, tau)
    msgs, kept = fwd.messages, fwd.kept
    T = len(words)
    K = model.n_states
    gammas = np.empty((T, K))
    xi_sum = np.zeros((K, K))
    gammas[T - 1] = msgs[-1]
    r = np.ones(K)
    for i in range(T - 1, 0, -1):
        b = model.emit[:, words[i]] * r * kept[i]
        X = (msgs[i - 1][:, None] * model.trans) * b[None, :]
        xt = float(X.sum())
        if xt > 0.0:
            xi_sum += X / xt
        r = model.trans @ b
        rs = float(r.sum())
        r = r / rs if rs > 0.0 else np.ones(K)
        g = msgs[i - 1] * r
        gs = float(g.sum())
        gammas[i - 1] = g / gs if gs > 0.0 else msgs[i - 1]
    return gammas, xi_sum, fwd.loglik


@dataclass
class EmInitResult:
    model: EmModel
    state_seqs: list[list[int]]
    loglik_trace: list[float]
    n_iterations: int
    converged: bool


def em_run(
    corpus: Corpus,
    n_states: int,
    order: int,
    max_iters: int,
    tol: float,
    rng,
    vocab_size: int,
    tau: float = 0.0,
) -> EmInitResult:
    """Alternate truncated E-steps and count-normalizing M-steps.

    Stops when the log-likelihood trace improves by less than tol; the chain
    seed is the per-position argmax of the final smoothed posteriors.
    """
    check_positive("n_states", n_states)
    check_positive("max_iters", max_iters)
    sentences = [s[order - 1:] for s in corpus.sentences]
    if not any(sentences):
        raise CorpusError("empty corpus")
    K = n_states
    model = EmModel(
        start=rng.dirichlet(np.ones(K)),
        trans=rng.dirichlet(np.ones(K), size=K),
        emit=rng.dirichlet(np.ones(vocab_size), size=K),
    )
    trace: list[float] = []
    seqs: list[list[int]] = []
    m_steps = 0
    converged = False
    prev_ll = None

    def e_step(m):
        start_c = np.zeros(K)
        trans_c = np.zeros((K, K))
        emit_c = np.zeros((K, vocab_size))
        ll = 0.0
        argmax_seqs = []
        for words in sentences:
            gammas, xi, l = posterior_stats(m, words, tau)
            ll += l
            start_c += gammas[0]
            trans_c += xi
            np.add.at(emit_c.T, list(words), gammas)
            argmax_seqs.append(np.argmax(gammas, axis=1).tolist())
        return start_c, trans_c, emit_c, ll, argmax_seqs

    def normalize_rows(counts):
        out = counts.copy()
        sums = out.sum(axis=-1, keepdims=True)
        zero = (sums <= 0.0).ravel()
        if out.ndim == 1:
            return out / sums if sums.item() > 0 else np.full_like(out, 1.0 / out.shape[-1])
        out[zero] = 1.0 / out.shape[-1]
        sums[zero.reshape(sums.shape)] = 1.0
        return out / sums

    for _ in range(max_iters):
        start_c, trans_c, emit_c, ll, seqs = e_step(model)
        trace.append(ll)
        if prev_ll is not None and ll - prev_ll < tol:
            converged = True
            break
        prev_ll = ll
        model = EmModel(
            start=normalize_rows(start_c),
            trans=normalize_rows(trans_c),
            emit=normalize_rows(emit_c),
        )
        m_steps += 1
    if not converged:
        # refresh the seed sequences under the final parameters
        _, _, _, ll, seqs = e_step(model)
        trace.append(ll)
    return EmInitResult(model, seqs, trace, m_steps, converged)
