"""Greedy and beam-search decoding, sentence translation and pivoting.

The search routines talk to a *scorer*: an object with ``bos``/``eos`` ids
and three methods,

* ``start(src_ids)`` -> opaque state for a single hypothesis,
* ``step(state, prev_ids)`` -> ``(logprobs (K, V), new_state)``,
* ``select(state, rows)`` -> state restricted/reordered to ``rows``.

:class:`ModelScorer` adapts a :class:`Seq2SeqModel`; tests plug in toy
transition tables through the same interface.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import tag_token
from .model import DecoderState, Seq2SeqModel, decode_step, encode
from .numcore import log_softmax_array
from .subword import SPECIALS, apply_bpe, detok


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    logprob: float
    finished: bool = False

    def score(self, alpha):
        # a finished hypothesis counts its </s>
        n = len(self.tokens) + (1 if self.finished else 0)
        return self.logprob / max(n, 1) ** alpha if alpha else self.logprob


class ModelScorer:
    def __init__(self, model, bos=SPECIALS.index("<s>"), eos=SPECIALS.index("</s>")):
        self.model = model
        self.bos = bos
        self.eos = eos

    def start(self, src_ids):
        enc, state = encode(self.model, src_ids)
        return enc, state

    def step(self, state, prev_ids):
        enc, dec = state
        logits, new = decode_step(self.model, dec, prev_ids, enc)
        return log_softmax_array(logits.astype(np.float64)), (enc, new)

    def select(self, state, rows):
        enc, dec = state
        rows = np.asarray(rows, dtype=np.int64)
        return enc, DecoderState(
            tuple(h[rows] for h in dec.h), tuple(c[rows] for c in dec.c), dec.context[rows]
        )


def as_scorer(model):
    return ModelScorer(model) if isinstance(model, Seq2SeqModel) else model


def default_max_len(n_src):
    return 2 * n_src + 5


def greedy(model, src_ids, max_len=None):
    """Argmax decoding; ties go to the lowest token id. ``</s>`` is stripped."""
    scorer = as_scorer(model)
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    state = scorer.start(src_ids)
    prev, out = scorer.bos, []
    for _ in range(max_len):
        logp, state = scorer.step(state, np.array([prev]))
        prev = int(np.argmax(logp[0]))
        if prev == scorer.eos:
            break
        out.append(prev)
    return out


def _top_candidates(total, k):
    """Indices of the k best flat entries, at least, including boundary ties."""
    flat = total.ravel()
    if k >= flat.size:
        return np.arange(flat.size)
    kth = np.partition(flat, flat.size - k)[flat.size - k]
    return np.flatnonzero(flat >= kth)


def beam_search(model, tagged_src_ids, beam_size=10, max_len=None, len_norm_alpha=1.0, return_hyp=False):
    """Best token-id sequence under beam search.

    The live beam keeps ``beam_size`` minus the number of finished
    hypotheses, ranked by cumulative log-probability. Finished hypotheses
    compete by ``logprob / length**alpha`` (length counts ``</s>``); if none
    finished by ``max_len`` the best live hypothesis is returned. Equal
    scores go to the lexicographically smaller token sequence.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    scorer = as_scorer(model)
    if max_len is None:
        max_len = default_max_len(len(tagged_src_ids))
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = scorer.start(tagged_src_ids)
    alive = [Hypothesis((), 0.0)]
    finished = []
    for _ in range(max_len):
        prev = np.array([h.tokens[-1] if h.tokens else scorer.bos for h in alive])
        logp, state = scorer.step(state, prev)
        base = np.array([h.logprob for h in alive])
        total = base[:, None] + logp
        k = beam_size - len(finished)
        V = total.shape[1]
        cands = []
        for flat in _top_candidates(total, k):
            r, w = divmod(int(flat), V)
            cands.append((-float(total[r, w]), alive[r].tokens + (w,), r))
        cands.sort(key=lambda c: (c[0], c[1]))
        rows, nxt = [], []
        for neg, toks, r in cands[:k]:
            if toks[-1] == scorer.eos:
                finished.append(Hypothesis(toks[:-1], -neg, True))
            else:
                nxt.append(Hypothesis(toks, -neg))
                rows.append(r)
        if not nxt or len(finished) >= beam_size:
            break
        alive = nxt
        state = scorer.select(state, rows)
    pool = finished or alive
    best = min(pool, key=lambda h: (-h.score(len_norm_alpha), h.tokens))
    return best if return_hyp else list(best.tokens)


# ---------------------------------------------------------------------------
# text level


def _clean(vocab, ids):
    reserved = vocab.reserved_ids()
    return detok([vocab.itos[i] for i in ids if i not in reserved])


def translate(model, bpe, vocab, sentence, src, tgt, beam=10, alpha=1.0):
    """Tag, segment, search and detokenize one sentence."""
    sentence = tuple(sentence)
    if not sentence:
        return ()
    ids = vocab.encode(apply_bpe(bpe, (tag_token(tgt),) + sentence))
    out = beam_search(model, ids, beam, len_norm_alpha=alpha)
    return tuple(_clean(vocab, out))


def translate_all(model, bpe, vocab, sentences, src, tgt, beam=10, alpha=1.0):
    return [translate(model, bpe, vocab, s, src, tgt, beam, alpha) for s in sentences]


def pivot_translate(model_or_models, bpe, vocab, sentence, src, pivot, tgt, beam=10, alpha=1.0):
    """src -> pivot -> tgt; pass one model for both legs or a (first, second) pair."""
    if isinstance(model_or_models, (tuple, list)):
        first, second = model_or_models
    else:
        first = second = model_or_models
    mid = translate(first, bpe, vocab, sentence, src, pivot, beam, alpha)
    return translate(second, bpe, vocab, mid, pivot, tgt, beam, alpha)
