import numpy as np
import pytest

import zsnmt.loop as loop
from zsnmt.corpus import ConfigError, gen_family, make_dataset
from zsnmt.evaluation import training_word_sets
from zsnmt.loop import (
    LoopConfig,
    LoopContext,
    RoundReport,
    baseline_report,
    converged,
    derive_seed,
    dkey,
    extract_inference_set,
    generate_dual_pairs,
    parse_dkey,
    read_synthetic,
    run_loop,
)
from zsnmt.model import ModelConfig, Seq2SeqModel
from zsnmt.subword import build_vocab, learn_bpe
from zsnmt.train import TrainConfig

SPOKES = [("l0", s) for s in ("l1", "l2", "l3", "l4")]


@pytest.fixture(scope="module")
def family():
    return gen_family(2)


@pytest.fixture(scope="module")
def ctx(family):
    ds = make_dataset(family, SPOKES, 30, 4, 4, seed=1)
    corpora = list(ds.train.values())
    bpe = learn_bpe(corpora, 40)
    vocab = build_vocab(bpe, corpora, family.langs)
    return LoopContext(ds, bpe, vocab, training_word_sets(corpora))


def test_derive_seed_is_stable():
    assert derive_seed(0, "round", 1) == derive_seed(0, "round", 1)
    assert derive_seed(0, "round", 1) != derive_seed(0, "round", 2)
    # a frozen value guards against accidental changes to the derivation
    assert derive_seed(0, "infer") == int.from_bytes(
        __import__("hashlib").sha256(repr((0, "infer")).encode()).digest()[:4], "little"
    )


def test_direction_keys():
    assert dkey(("l1", "l2")) == "l1-l2"
    assert parse_dkey("l2-l1") == ("l2", "l1")


def test_inference_set(ctx):
    full = extract_inference_set(ctx.dataset.train, ("l1", "l2"), 1.0, 0)
    l1 = {s for (a, b), c in ctx.dataset.train.items() for s in (c.sources() if a == "l1" else c.targets() if b == "l1" else [])}
    assert set(full.sentences["l1"]) == l1
    assert len(full.sentences["l1"]) == len(set(full.sentences["l1"]))
    half = extract_inference_set(ctx.dataset.train, ("l1", "l2"), 0.5, 0)
    assert len(half.sentences["l2"]) == round(0.5 * len(full.sentences["l2"]))
    assert set(half.sentences["l2"]) <= set(full.sentences["l2"])
    assert half == extract_inference_set(ctx.dataset.train, ("l1", "l2"), 0.5, 0)
    with pytest.raises(ConfigError):
        extract_inference_set(ctx.dataset.train, ("l1", "l2"), 0.0, 0)


def test_dual_pairs_flip_direction(ctx, family, monkeypatch):
    def oracle_all(model, bpe, vocab, sentences, src, tgt, beam=10, alpha=1.0):
        out = [family.translate(s, src, tgt) for s in sentences]
        out[0] = ()  # one empty output gets dropped
        return out

    monkeypatch.setattr(loop, "translate_all", oracle_all)
    infer = extract_inference_set(ctx.dataset.train, ("l1", "l2"), 1.0, 0)
    synth = generate_dual_pairs(None, ctx.bpe, ctx.vocab, infer, ("l1", "l2"), 1, round_index=3)
    assert set(synth.corpora) == {("l1", "l2"), ("l2", "l1")}
    assert synth.dropped == 2 and synth.round == 3
    c = synth.corpora[("l2", "l1")]
    assert c.provenance == "synthetic:3"
    # targets are the original l1 sentences, sources their l2 translations
    assert list(c.targets()) == list(infer.sentences["l1"][1:])
    for p in c.pairs:
        assert family.translate(p.src, "l2", "l1") == p.tgt


def test_round_report_text_round_trip():
    rep = RoundReport(2, {"l1-l2": 12.5, "l0-l1": 80.0, "l2-l1": 3.25}, {"l1-l2": 0.5, "l2-l1": 0.25},
                      ("l1-l2", "l2-l1"), 1.234, {"l1-l2": 0.1}, 900, 3.0)
    again = RoundReport.from_text(rep.to_text())
    assert again == rep
    assert rep.mean_zero_shot() == pytest.approx(7.875)
    assert rep.mean_supervised() == 80.0
    with pytest.raises(ValueError):
        RoundReport.from_text("nonsense 1\n")


def _rep(r, zs):
    return RoundReport(r, {"a-b": zs, "b-a": zs, "x-y": 50.0}, {}, ("a-b", "b-a"), 1.0)


def test_convergence_rule():
    assert not converged([_rep(0, 1), _rep(1, 5)])
    assert not converged([_rep(0, 1), _rep(1, 5), _rep(2, 5.05)])
    assert converged([_rep(0, 1), _rep(1, 5), _rep(2, 5.05), _rep(3, 5.1)])
    assert not converged([_rep(0, 1), _rep(1, 5), _rep(2, 5.05), _rep(3, 5.2)])


def test_loop_config_validation():
    with pytest.raises(ConfigError):
        LoopConfig(rounds=0)
    with pytest.raises(ConfigError):
        LoopConfig(infer_portion=1.5)


def test_loop_runs_persists_and_resumes(ctx, tmp_path):
    model = Seq2SeqModel(ModelConfig(emb_dim=8, hidden_dim=8, dropout=0.0), len(ctx.vocab), seed=0)
    base = baseline_report(model, ctx, beam=2)
    assert len(base.bleu) == 10
    cfg = LoopConfig(rounds=2, epochs_per_round=1, beam=2, seed=0)
    tcfg = TrainConfig(batch_size=16)
    reports, final = run_loop(cfg, ctx, model.copy(), tcfg, base, tmp_path)
    assert [r.round for r in reports] == [0, 1, 2]
    for r in (1, 2):
        d = tmp_path / f"round_{r}"
        assert (d / ".done").exists() and (d / "checkpoint").exists()
        syn = read_synthetic(d, ("l2", "l1"), r)
        assert syn.synthetic_round == r
        assert (d / "train.log").read_text().count("\n") == 2
    # second call loads every round from disk
    again, model2 = run_loop(cfg, ctx, model.copy(), tcfg, base, tmp_path)
    assert [r.to_text() for r in again] == [r.to_text() for r in reports]
    assert np.array_equal(model2["out.w"], final["out.w"])


def test_rounds_discard_older_synthetic_data(ctx, family, monkeypatch):
    sizes = []
    monkeypatch.setattr(loop, "translate_all", lambda m, b, v, sents, s, t, *a: [family.translate(x, s, t) for x in sents])
    real = loop.train_epochs

    def spy(model, corpora, *a, **k):
        sizes.append(sum(len(c) for c in corpora))
        return real(model, corpora, *a, **k)

    monkeypatch.setattr(loop, "train_epochs", spy)
    model = Seq2SeqModel(ModelConfig(emb_dim=8, hidden_dim=8, dropout=0.0), len(ctx.vocab), seed=0)
    base = baseline_report(model, ctx, beam=1)
    run_loop(LoopConfig(rounds=2, epochs_per_round=1, beam=1, min_gain=-1), ctx, model, TrainConfig(), base)
    original = sum(len(c) for c in ctx.dataset.train.values())
    assert sizes == [original + 60, original + 60]


def test_loop_needs_a_baseline(ctx):
    with pytest.raises(ConfigError):
        run_loop(LoopConfig(), ctx, None, TrainConfig(), None)
