"""The train-infer-train loop for a zero-shot language pair.

Each round translates a fixed set of original training-side sentences in
both zero-shot directions with the current model, turns every output ``t*``
for an original sentence ``s`` into a synthetic pair ``(t*, s)`` for the
opposite direction, and continues training on the original corpora plus
that round's synthetic pairs only.
"""

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ConfigError, ParallelCorpus, SentencePair, read_lines, write_lines
from .decode import translate_all
from .evaluation import bleu, mixed_rate
from .model import Seq2SeqModel
from .train import TrainConfig, TrainState, encode_corpus, train_epochs

log = logging.getLogger(__name__)


def derive_seed(*parts):
    """Stable 32-bit child seed from any printable parts."""
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def dkey(direction):
    return f"{direction[0]}-{direction[1]}"


def parse_dkey(key):
    a, b = key.split("-")
    return a, b


@dataclass
class LoopConfig:
    zero_shot_pair: tuple = ("l1", "l2")
    rounds: int = 5
    epochs_per_round: int = 10
    infer_portion: float = 1.0
    beam: int = 10
    seed: int = 0
    min_gain: float = 0.1
    patience: int = 2

    def __post_init__(self):
        self.zero_shot_pair = tuple(self.zero_shot_pair)
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0 < self.infer_portion <= 1:
            raise ConfigError("infer_portion must lie in (0, 1]")


@dataclass(frozen=True)
class InferenceSet:
    sentences: dict  # lang -> tuple of sentences

    def __len__(self):
        return sum(len(v) for v in self.sentences.values())


@dataclass(frozen=True)
class SyntheticBatch:
    corpora: dict  # direction -> ParallelCorpus of (t*, s) pairs
    round: int
    dropped: int = 0


@dataclass
class RoundReport:
    round: int
    bleu: dict  # "a-b" -> BLEU on the test set
    mixed: dict  # zero-shot "a-b" -> mixed rate of test outputs
    zero_shot: tuple  # zero-shot direction keys
    valid_ppl: float
    synth_mixed: dict = field(default_factory=dict)  # zero-shot "a-b" -> mixed rate of synthetic sources
    train_size: int = 0
    wall_clock: float = 0.0

    def zero_shot_bleu(self):
        return {k: self.bleu[k] for k in self.zero_shot}

    def mean_zero_shot(self):
        return float(np.mean([self.bleu[k] for k in self.zero_shot]))

    def mean_supervised(self):
        return float(np.mean([v for k, v in self.bleu.items() if k not in self.zero_shot]))

    def to_text(self):
        lines = [f"round {self.round}", f"zero_shot {' '.join(self.zero_shot)}",
                 f"valid_ppl {self.valid_ppl!r}", f"train_size {self.train_size}"]
        lines += [f"bleu {k} {v!r}" for k, v in sorted(self.bleu.items())]
        lines += [f"mixed {k} {v!r}" for k, v in sorted(self.mixed.items())]
        lines += [f"synth_mixed {k} {v!r}" for k, v in sorted(self.synth_mixed.items())]
        lines.append(f"wall_clock {self.wall_clock:.1f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rep = cls(0, {}, {}, (), 0.0)
        for line in text.splitlines():
            key, *rest = line.split()
            if key == "round":
                rep.round = int(rest[0])
            elif key == "zero_shot":
                rep.zero_shot = tuple(rest)
            elif key == "valid_ppl":
                rep.valid_ppl = float(rest[0])
            elif key == "train_size":
                rep.train_size = int(rest[0])
            elif key == "wall_clock":
                rep.wall_clock = float(rest[0])
            elif key in ("bleu", "mixed", "synth_mixed"):
                getattr(rep, key)[rest[0]] = float(rest[1])
            else:
                raise ValueError(f"unknown report line {line!r}")
        return rep


@dataclass
class LoopContext:
    """Everything a round needs besides the model."""

    dataset: object
    bpe: object
    vocab: object
    word_sets: dict
    train_enc: list = None
    valid_enc: list = None

    def __post_init__(self):
        if self.train_enc is None:
            self.train_enc = [encode_corpus(c, self.bpe, self.vocab) for c in self.dataset.train.values()]
        if self.valid_enc is None:
            self.valid_enc = [encode_corpus(c, self.bpe, self.vocab) for c in self.dataset.valid.values()]


def extract_inference_set(train, zero_shot_pair, portion=1.0, seed=0):
    """Unique training-side sentences of each zero-shot language, subsampled."""
    if not 0 < portion <= 1:
        raise ConfigError("portion must lie in (0, 1]")
    out = {}
    for lang in zero_shot_pair:
        seen = {}
        for (s, t), corpus in sorted(train.items()):
            if s == lang:
                side = corpus.sources()
            elif t == lang:
                side = corpus.targets()
            else:
                continue
            for sent in side:
                seen.setdefault(sent, None)
        if not seen:
            raise ConfigError(f"zero-shot language {lang} has no supervised corpus")
        unique = list(seen)
        n = round(portion * len(unique))
        if n < len(unique):
            rng = np.random.default_rng(derive_seed(seed, "infer", lang))
            keep = np.sort(rng.choice(len(unique), size=n, replace=False))
            unique = [unique[i] for i in keep]
        out[lang] = tuple(unique)
    return InferenceSet(out)


def generate_dual_pairs(model, bpe, vocab, infer_set, zero_shot_pair, beam=10, round_index=1):
    """Translate each side of the inference set and flip the results into pairs."""
    a, b = zero_shot_pair
    corpora, dropped = {}, 0
    for src, tgt in ((a, b), (b, a)):
        originals = infer_set.sentences[src]
        outputs = translate_all(model, bpe, vocab, originals, src, tgt, beam)
        pairs = []
        for s, t_star in zip(originals, outputs):
            if not t_star:
                dropped += 1
                continue
            pairs.append(SentencePair(tgt, src, tuple(t_star), tuple(s)))
        # outputs in language tgt become sources for tgt -> src
        corpora[(tgt, src)] = ParallelCorpus(tgt, src, tuple(pairs), f"synthetic:{round_index}")
    if dropped:
        log.warning("dropped %d empty synthetic translations in round %d", dropped, round_index)
    return SyntheticBatch(corpora, round_index, dropped)


def evaluate(model, ctx, beam=10):
    """BLEU on every test direction and mixed rate on the zero-shot ones."""
    ds = ctx.dataset
    zs = {dkey(d) for d in ds.zero_shot_directions()}
    scores, mixed = {}, {}
    for (s, t), corpus in ds.test.items():
        hyps = translate_all(model, ctx.bpe, ctx.vocab, corpus.sources(), s, t, beam)
        key = dkey((s, t))
        scores[key] = bleu(hyps, corpus.targets()).bleu
        if key in zs:
            mixed[key] = mixed_rate(hyps, t, ctx.word_sets).rate
    return scores, mixed


def round_train_config(base, epochs, seed, round_index):
    return TrainConfig(
        optimizer="sgd",
        lr=1.0,
        decay_factor=base.decay_factor,
        decay_epoch_start=base.decay_epoch_start,
        batch_size=base.batch_size,
        epochs=epochs,
        clip_norm=base.clip_norm,
        seed=derive_seed(seed, "round", round_index),
    )


def run_round(model, ctx, synth, train_cfg, beam=10, log_path=None, echo=None):
    """Train on original + this round's synthetic pairs, then evaluate."""
    t0 = time.perf_counter()
    synth_enc = [encode_corpus(c, ctx.bpe, ctx.vocab) for _, c in sorted(synth.corpora.items())]
    corpora = list(ctx.train_enc) + synth_enc
    model, history, _ = train_epochs(
        model, corpora, train_cfg, ctx.valid_enc, ctx.vocab, TrainState.start(train_cfg),
        log_path=log_path, phase=f"round{synth.round}", log=echo,
    )
    scores, mixed = evaluate(model, ctx, beam)
    synth_mixed = {
        dkey(d): mixed_rate(c.sources(), d[0], ctx.word_sets).rate for d, c in sorted(synth.corpora.items())
    }
    report = RoundReport(
        round=synth.round,
        bleu=scores,
        mixed=mixed,
        zero_shot=tuple(dkey(d) for d in ctx.dataset.zero_shot_directions()),
        valid_ppl=history[-1]["valid_ppl"] if history else float("nan"),
        synth_mixed=synth_mixed,
        train_size=sum(len(c) for c in corpora),
        wall_clock=time.perf_counter() - t0,
    )
    return model, report


def baseline_report(model, ctx, beam=10, valid_ppl=float("nan")):
    scores, mixed = evaluate(model, ctx, beam)
    zs = tuple(dkey(d) for d in ctx.dataset.zero_shot_directions())
    return RoundReport(0, scores, mixed, zs, valid_ppl)


def converged(reports, min_gain=0.1, patience=2):
    """True once the mean zero-shot BLEU gained < min_gain in each of the last ``patience`` rounds."""
    if len(reports) <= patience:
        return False
    means = [r.mean_zero_shot() for r in reports[-patience - 1 :]]
    return all(b - a < min_gain for a, b in zip(means, means[1:]))


def _write_synthetic(directory, synth):
    for (s, t), corpus in sorted(synth.corpora.items()):
        write_lines(directory / f"synthetic.{s}-{t}.src", corpus.sources())
        write_lines(directory / f"synthetic.{s}-{t}.tgt", corpus.targets())


def read_synthetic(directory, direction, round_index):
    s, t = direction
    directory = Path(directory)
    srcs = read_lines(directory / f"synthetic.{s}-{t}.src")
    tgts = read_lines(directory / f"synthetic.{s}-{t}.tgt")
    return ParallelCorpus.from_sides(s, t, srcs, tgts, f"synthetic:{round_index}")


def run_loop(cfg, ctx, model, train_cfg, base_report, out_dir=None, echo=None):
    """Iterate rounds 1..cfg.rounds from a trained baseline (round 0).

    With ``out_dir`` every round leaves ``round_k/checkpoint``,
    ``round_k/synthetic.*`` and ``round_k/report``; completed rounds found
    there are loaded instead of recomputed.
    """
    if model is None or base_report is None:
        raise ConfigError("the loop needs a trained baseline model and its report")
    zs = tuple(cfg.zero_shot_pair)
    infer = extract_inference_set(ctx.dataset.train, zs, cfg.infer_portion, derive_seed(cfg.seed, "infer"))
    reports = [base_report]
    vocab_hash = ctx.vocab.hash()
    for r in range(1, cfg.rounds + 1):
        rdir = Path(out_dir) / f"round_{r}" if out_dir is not None else None
        if rdir is not None and (rdir / ".done").exists():
            model = Seq2SeqModel.load(rdir / "checkpoint", vocab_hash)
            report = RoundReport.from_text((rdir / "report").read_text(encoding="utf-8"))
        else:
            synth = generate_dual_pairs(model, ctx.bpe, ctx.vocab, infer, zs, cfg.beam, r)
            tcfg = round_train_config(train_cfg, cfg.epochs_per_round, cfg.seed, r)
            log_path = None
            if rdir is not None:
                rdir.mkdir(parents=True, exist_ok=True)
                _write_synthetic(rdir, synth)
                log_path = rdir / "train.log"
                log_path.unlink(missing_ok=True)
            model, report = run_round(model, ctx, synth, tcfg, cfg.beam, log_path, echo)
            if rdir is not None:
                model.save(rdir / "checkpoint", vocab_hash)
                (rdir / "report").write_text(report.to_text(), encoding="utf-8")
                (rdir / ".done").write_text("", encoding="utf-8")
        reports.append(report)
        if echo is not None:
            echo(f"round {r}: zero-shot " + ", ".join(f"{k} {v:.2f}" for k, v in report.zero_shot_bleu().items())
                 + f"; supervised mean {report.mean_supervised():.2f}")
        if converged(reports, cfg.min_gain, cfg.patience):
            break
    return reports, model
