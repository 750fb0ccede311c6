import math
import re
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsnmt.evaluation import InputError, bleu, mixed_rate, training_word_sets
from zsnmt.corpus import ParallelCorpus

LAYOUT = re.compile(
    r"^BLEU = \d+\.\d\d, \d+\.\d/\d+\.\d/\d+\.\d/\d+\.\d "
    r"\(BP=\d\.\d\d\d, ratio=\d+\.\d\d\d, hyp_len=\d+, ref_len=\d+\)$"
)


def oracle_bleu(hyps, refs):
    """Straight transcription of the multi-bleu arithmetic with exact fractions."""
    correct, total = [0] * 4, [0] * 4
    hl = rl = 0
    for h, r in zip(hyps, refs):
        hl += len(h)
        rl += len(r)
        for n in range(1, 5):
            hg = Counter(tuple(h[i:i + n]) for i in range(len(h) - n + 1))
            rg = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
            for g, c in hg.items():
                correct[n - 1] += min(c, rg.get(g, 0))
            total[n - 1] += max(0, len(h) - n + 1)
    if hl == 0 or any(c == 0 for c in correct):
        return 0.0
    logp = sum(math.log(Fraction(c, t)) for c, t in zip(correct, total)) / 4
    bp = 1.0 if hl >= rl else math.exp(1 - rl / hl)
    return 100 * bp * math.exp(logp)


def test_identity_is_100():
    h = [("a", "b", "c", "d", "e"), ("x", "y", "z", "w")]
    r = bleu(h, h)
    assert f"{r.bleu:.2f}" == "100.00"
    assert str(r).startswith("BLEU = 100.00, 100.0/100.0/100.0/100.0 (BP=1.000, ratio=1.000")


def test_short_hypothesis_brevity_penalty():
    r = bleu([("the", "cat", "sat", "on")], [("the", "cat", "sat", "on", "the", "mat")])
    assert r.bleu == pytest.approx(60.65, abs=0.01)
    assert r.bp == pytest.approx(math.exp(-0.5))
    assert str(r) == "BLEU = 60.65, 100.0/100.0/100.0/100.0 (BP=0.607, ratio=0.667, hyp_len=4, ref_len=6)"


def test_no_matching_4gram_gives_zero():
    r = bleu([("a", "b", "c", "x", "d")], [("a", "b", "c", "y", "d")])
    assert r.precisions[3] == 0
    assert r.bleu == 0.0
    assert str(r).startswith("BLEU = 0.00, ")


def test_clipped_counts():
    r = bleu([("the",) * 7], [("the", "cat", "is", "on", "the", "mat", "x")])
    assert r.precisions[0] == pytest.approx(2 / 7)


def test_empty_inputs():
    assert str(bleu([], [])) == "BLEU = 0, 0/0/0/0 (BP=0, ratio=0, hyp_len=0, ref_len=0)"
    r = bleu([()], [("a",)])
    assert r.bleu == 0.0 and r.bp == 0.0
    with pytest.raises(InputError):
        bleu([("a",)], [])


sentences = st.lists(st.lists(st.sampled_from("abcde"), min_size=0, max_size=9), min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(sentences, st.data())
def test_matches_oracle(hyps, data):
    refs = [data.draw(st.lists(st.sampled_from("abcde"), min_size=1, max_size=9)) for _ in hyps]
    r = bleu(hyps, refs)
    assert r.bleu == pytest.approx(oracle_bleu(hyps, refs), abs=1e-9)
    if r.ref_len:
        assert LAYOUT.match(str(r)), str(r)
    assert 0.0 <= r.bleu <= 100.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8), min_size=1, max_size=6))
def test_self_bleu_is_100_when_every_sentence_has_a_4gram(hyps):
    if any(len(h) < 4 for h in hyps):
        return
    assert bleu(hyps, hyps).bleu == pytest.approx(100.0)


def test_mixed_rate():
    words = {"l2": {"ul", "ere"}, "l0": {"a"}}
    r = mixed_rate([("ul", "a"), ("ere",), ()], "l2", words)
    assert (r.foreign, r.total) == (1, 3)
    assert r.rate == pytest.approx(1 / 3)
    assert mixed_rate([()], "l2", words).rate == 0.0
    with pytest.raises(InputError):
        mixed_rate([("a",)], "l9", words)


def test_training_word_sets_cover_both_sides():
    c = ParallelCorpus.from_sides("l1", "l0", [("x", "y")], [("p",)])
    sets = training_word_sets([c, c.reversed()])
    assert sets == {"l1": {"x", "y"}, "l0": {"p"}}


def test_oracle_sanity_against_hand_count():
    # p1 = 3/4, p2 = 1/3, p3 = 0 -> zero
    assert oracle_bleu([list("abcd")], [list("abxd")]) == 0.0
    h, r = list("abcdeab"), list("abcdeab")
    assert oracle_bleu([h], [r]) == pytest.approx(100.0)
    assert np.isclose(bleu([h], [r]).bleu, 100.0)
