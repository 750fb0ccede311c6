"""Command-line entry point: ``zsnmt <subcommand> ...``."""

import argparse
import logging
import sys
from pathlib import Path

from .corpus import ConfigError, Family, gen_family, is_tag, make_dataset, read_dataset, read_lines, write_dataset
from .decode import pivot_translate, translate
from .evaluation import bleu
from .harness import BpeConfig, ExperimentConfig, RunDir, StageError, apply_overrides, emit_report, load_report, run_experiment
from .model import ModelConfig, Seq2SeqModel
from .subword import SPECIALS, BpeModel, Vocabulary, apply_bpe, build_vocab, learn_bpe
from .train import TrainConfig, encode_corpus, train_epochs


class InputLineError(ValueError):
    pass


def _config(args):
    data = {}
    if getattr(args, "config", None):
        import yaml

        data = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    cfg = ExperimentConfig.from_dict(apply_overrides(data, args.set or []))
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    return cfg


def _read_input(path):
    """Sentences from a text file; rejects lines the models cannot take."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if raw.endswith(b"\n"):
        lines.pop()
    out = []
    for n, line in enumerate(lines, start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InputLineError(f"{path}:{n}: not valid UTF-8 ({exc.reason})") from None
        text = text.rstrip("\r")
        if any(ord(ch) < 32 and ch != "\t" for ch in text):
            raise InputLineError(f"{path}:{n}: control character in input")
        tokens = tuple(text.split())
        for t in tokens:
            if is_tag(t) or t in SPECIALS:
                raise InputLineError(f"{path}:{n}: reserved token {t!r} in input")
        out.append(tokens)
    return out


def _write_output(path, sentences):
    text = "".join(" ".join(s) + "\n" for s in sentences)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _find_bpe_dir(ckpt, given):
    if given:
        return Path(given)
    for parent in Path(ckpt).resolve().parents:
        if (parent / "bpe" / "codes").exists():
            return parent / "bpe"
    raise ConfigError(f"no bpe/ directory found above {ckpt}; pass --bpe")


def _load_model(ckpt, bpe_dir):
    d = _find_bpe_dir(ckpt, bpe_dir)
    bpe = BpeModel.load(d / "codes")
    vocab = Vocabulary.load(d / "vocab.txt")
    return Seq2SeqModel.load(ckpt, vocab.hash()), bpe, vocab


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = _config(args)
    fam = gen_family(args.seed if args.seed is not None else cfg.seed, cfg.family.n_stems,
                     cfg.family.n_templates, (cfg.family.min_arity, cfg.family.max_arity))
    pairs = [(fam.pivot, s) for s in cfg.data.spokes]
    ds = make_dataset(fam, pairs, cfg.data.n_train, cfg.data.n_valid, cfg.data.n_test,
                      fam.seed, tuple(cfg.data.zero_shot))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fam.save(out / "family.json")
    write_dataset(out, ds)
    print(f"wrote family and {len(ds.train)} training directions to {out}")


def cmd_learn_bpe(args):
    ds = read_dataset(args.data)
    fam = Family.load(Path(args.data) / "family.json")
    corpora = list(ds.train.values())
    bpe = learn_bpe(corpora, args.merges, args.threshold)
    vocab = build_vocab(bpe, corpora, fam.langs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bpe.save(out / "codes")
    vocab.save(out / "vocab.txt")
    print(f"learned {len(bpe.merges)} merges; vocabulary of {len(vocab)} symbols in {out}")


def cmd_apply_bpe(args):
    bpe = BpeModel.load(args.codes)
    _write_output(args.output, [apply_bpe(bpe, s) for s in _read_input(args.input)])


def cmd_train(args):
    ds = read_dataset(args.data)
    bpe_dir = Path(args.bpe)
    bpe = BpeModel.load(bpe_dir / "codes")
    vocab = Vocabulary.load(bpe_dir / "vocab.txt")
    if args.init:
        model = Seq2SeqModel.load(args.init, vocab.hash())
    else:
        mcfg = ModelConfig(emb_dim=args.emb_dim, hidden_dim=args.hidden_dim, dropout=args.dropout)
        model = Seq2SeqModel(mcfg, len(vocab), seed=args.seed)
    tcfg = TrainConfig(optimizer=args.optimizer, lr=args.lr if args.lr else (0.001 if args.optimizer == "adam" else 1.0),
                       epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    train = [encode_corpus(c, bpe, vocab) for c in ds.train.values()]
    valid = [encode_corpus(c, bpe, vocab) for c in ds.valid.values()]
    train_epochs(model, train, tcfg, valid, vocab, log_path=args.log, log=print)
    model.save(args.out, vocab.hash())


def cmd_translate(args):
    model, bpe, vocab = _load_model(args.model, args.bpe)
    sents = _read_input(args.input)
    _write_output(args.output, [translate(model, bpe, vocab, s, args.src, args.tgt, args.beam) for s in sents])


def cmd_pivot(args):
    model, bpe, vocab = _load_model(args.model, args.bpe)
    models = model
    if args.second_model:
        second, _, _ = _load_model(args.second_model, args.bpe)
        models = (model, second)
    sents = _read_input(args.input)
    out = [pivot_translate(models, bpe, vocab, s, args.src, args.pivot, args.tgt, args.beam) for s in sents]
    _write_output(args.output, out)


def cmd_bleu(args):
    print(bleu(read_lines(args.hyp), read_lines(args.ref)))


def cmd_run(args):
    cfg = _config(args)
    report = run_experiment(cfg, echo=print)
    print(report.to_text(), end="")


def cmd_zeroshot_loop(args):
    cfg = ExperimentConfig.load(Path(args.run) / "config.yaml", args.set or [])
    cfg.output_dir = args.run
    run = RunDir(cfg)
    if not (run.root / "baseline" / ".done").exists():
        raise ConfigError(f"{args.run}: no trained baseline; run the earlier stages first")
    run_experiment(cfg, echo=print, until="loop")


def cmd_report(args):
    report = load_report(args.run)
    text, _ = emit_report(report, args.run)
    print(text, end="")


def build_parser():
    p = argparse.ArgumentParser(prog="zsnmt", description="zero-shot multilingual NMT laboratory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("gen-data", help="generate a language family and its corpora")
    with_config(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("learn-bpe", help="learn joint BPE merges and the vocabulary")
    sp.add_argument("--data", required=True)
    sp.add_argument("--merges", type=int, default=BpeConfig.merges)
    sp.add_argument("--threshold", type=int, default=BpeConfig.threshold)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_learn_bpe)

    sp = sub.add_parser("apply-bpe", help="segment a text file")
    sp.add_argument("--codes", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_apply_bpe)

    sp = sub.add_parser("train", help="train a multilingual model on a data directory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--bpe", required=True, help="directory holding codes and vocab.txt")
    sp.add_argument("--out", required=True)
    sp.add_argument("--init", help="continue from this checkpoint")
    sp.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--emb-dim", type=int, default=32)
    sp.add_argument("--hidden-dim", type=int, default=64)
    sp.add_argument("--dropout", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--log", help="append the per-epoch log here")
    sp.set_defaults(func=cmd_train)

    for name, func in (("translate", cmd_translate), ("pivot", cmd_pivot)):
        sp = sub.add_parser(name, help=f"{name} a file of sentences")
        sp.add_argument("--model", required=True)
        sp.add_argument("--bpe", help="directory with codes and vocab.txt (default: found above the model)")
        sp.add_argument("--src", required=True)
        sp.add_argument("--tgt", required=True)
        sp.add_argument("--beam", type=int, default=10)
        sp.add_argument("--input", required=True)
        sp.add_argument("--output")
        if name == "pivot":
            sp.add_argument("--pivot", default="l0")
            sp.add_argument("--second-model", help="checkpoint for the pivot -> target leg")
        sp.set_defaults(func=func)

    sp = sub.add_parser("bleu", help="corpus BLEU in multi-bleu layout")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.set_defaults(func=cmd_bleu)

    sp = sub.add_parser("zeroshot-loop", help="run the train-infer-train rounds of a run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_zeroshot_loop)

    sp = sub.add_parser("report", help="print and write the comparison report of a finished run")
    sp.add_argument("--run", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("run", help="full experiment: data, BPE, baseline, references, loop, report")
    with_config(sp)
    sp.add_argument("--out", help="output directory (overrides output_dir)")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (InputLineError, ConfigError, StageError, FileNotFoundError, ValueError) as exc:
        print(f"zsnmt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
