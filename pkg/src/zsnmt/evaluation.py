"""Corpus BLEU, perplexity and the mixed-language rate."""

import math
from collections import Counter
from dataclasses import dataclass

from .train import corpus_nll

MAX_ORDER = 4


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class BleuReport:
    bleu: float  # percentage
    precisions: tuple  # p1..p4 as fractions
    bp: float
    hyp_len: int
    ref_len: int

    @property
    def ratio(self):
        return self.hyp_len / self.ref_len if self.ref_len else 0.0

    def __str__(self):
        if self.ref_len == 0:
            return "BLEU = 0, 0/0/0/0 (BP=0, ratio=0, hyp_len=0, ref_len=0)"
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        return (
            f"BLEU = {self.bleu:.2f}, {p} (BP={self.bp:.3f}, ratio={self.ratio:.3f}, "
            f"hyp_len={self.hyp_len}, ref_len={self.ref_len})"
        )


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps, refs):
    """Corpus-level BLEU with multi-bleu.perl arithmetic (single reference)."""
    if len(hyps) != len(refs):
        raise InputError(f"{len(hyps)} hypotheses but {len(refs)} references")
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        h, r = list(h), list(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc = _ngrams(h, n)
            rc = _ngrams(r, n)
            correct[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(h) - n + 1, 0)
    prec = tuple(c / t if t else 0.0 for c, t in zip(correct, total))
    if ref_len == 0:
        return BleuReport(0.0, (0.0,) * MAX_ORDER, 0.0, hyp_len, 0)
    if hyp_len == 0:
        return BleuReport(0.0, prec, 0.0, 0, ref_len)
    bp = math.exp(1 - ref_len / hyp_len) if hyp_len < ref_len else 1.0
    if min(prec) == 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in prec) / MAX_ORDER)
    return BleuReport(100 * score, prec, bp, hyp_len, ref_len)


def perplexity(model, examples, vocab):
    """exp of the mean target-token NLL over an encoded corpus."""
    if not examples:
        raise InputError("perplexity of an empty corpus")
    total, count = corpus_nll(model, examples, vocab)
    return math.exp(total / count)


@dataclass(frozen=True)
class MixedRateReport:
    rate: float
    foreign: int
    total: int


def training_word_sets(corpora):
    """Word types seen per language on any side of the given corpora."""
    sets = {}
    for c in corpora:
        for p in c.pairs:
            sets.setdefault(c.src_lang, set()).update(p.src)
            sets.setdefault(c.tgt_lang, set()).update(p.tgt)
    return sets


def mixed_rate(hyps, tgt, lang_vocab):
    """Fraction of output words not attested in ``tgt``'s training vocabulary."""
    if tgt not in lang_vocab:
        raise InputError(f"no vocabulary for language {tgt!r}")
    words = lang_vocab[tgt]
    total = foreign = 0
    for h in hyps:
        for w in h:
            total += 1
            if w not in words:
                foreign += 1
    return MixedRateReport(foreign / total if total else 0.0, foreign, total)
