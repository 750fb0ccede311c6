"""Experiment configuration, the staged pipeline and the comparison report.

A run directory looks like::

    config.yaml, config.hash
    data/        family.json and every corpus split
    bpe/         codes, vocab.txt
    baseline/    checkpoint, train.log, report
    bilingual/   <a>-<b>/checkpoint, train.log; scores
    pivot/       scores, hypotheses
    loop/        round_k/{checkpoint, synthetic.*, report, train.log}
    report.txt, report.csv

Every stage directory gets a ``.done`` marker holding the config hash, so a
rerun skips finished stages and refuses directories made by another config.
"""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .baselines import bilingual_setups, train_bilingual
from .corpus import ConfigError, Family, gen_family, make_dataset, read_dataset, write_dataset, write_lines
from .decode import pivot_translate
from .evaluation import bleu, mixed_rate, training_word_sets
from .loop import LoopConfig, LoopContext, RoundReport, baseline_report, derive_seed, dkey, run_loop
from .model import ModelConfig, Seq2SeqModel
from .subword import BpeModel, Vocabulary, build_vocab, learn_bpe
from .train import TrainConfig, train_epochs

log = logging.getLogger(__name__)

STAGES = ("data", "bpe", "baseline", "bilingual", "pivot", "loop", "report")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class FamilyConfig:
    n_stems: int = 60
    n_templates: int = 8
    min_arity: int = 3
    max_arity: int = 8


@dataclass
class DataConfig:
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 300
    spokes: tuple = ("l1", "l2", "l3", "l4")
    zero_shot: tuple = ("l1", "l2")


@dataclass
class BpeConfig:
    merges: int = 60
    threshold: int = 2


# Adam phases decay on validation plateaus only; the epoch trigger is meant
# for the plain-SGD rounds and would stall Adam long before convergence.
def _default_baseline():
    return TrainConfig(optimizer="adam", lr=0.002, epochs=30, decay_epoch_start=30)


def _default_rounds():
    return TrainConfig(optimizer="sgd", lr=1.0, epochs=10)


def _default_bilingual():
    return TrainConfig(optimizer="adam", lr=0.002, epochs=80, decay_epoch_start=80)


def _default_model():
    return ModelConfig(dropout=0.1)


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    beam: int = 10
    family: FamilyConfig = field(default_factory=FamilyConfig)
    data: DataConfig = field(default_factory=DataConfig)
    bpe: BpeConfig = field(default_factory=BpeConfig)
    model: ModelConfig = field(default_factory=_default_model)
    baseline: TrainConfig = field(default_factory=_default_baseline)
    rounds: TrainConfig = field(default_factory=_default_rounds)
    bilingual: TrainConfig = field(default_factory=_default_bilingual)
    loop: LoopConfig = field(default_factory=LoopConfig)

    def to_dict(self):
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data):
        return _build(cls, data)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text):
        return cls.from_dict(yaml.safe_load(text) or {})

    @classmethod
    def load(cls, path, overrides=()):
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls.from_dict(apply_overrides(data, overrides))

    def hash(self):
        """Hash of everything that affects results (the output path does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {data!r}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    defaults = cls()
    kw = {}
    for name, f in known.items():
        if name not in data:
            continue
        current = getattr(defaults, name)
        value = data[name]
        if is_dataclass(current):
            merged = asdict(current)
            merged.update(value or {})
            kw[name] = _build(type(current), merged)
        elif isinstance(current, tuple):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    return cls(**kw)


def apply_overrides(data, overrides):
    """Apply ``key.sub=value`` strings to a nested config mapping (values parsed as YAML)."""
    data = json.loads(json.dumps(data))
    template = ExperimentConfig().to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node, tnode = data, template
        for p in parts[:-1]:
            if not isinstance(tnode, dict) or p not in tnode:
                raise ConfigError(f"unknown config key {key!r}")
            tnode = tnode[p]
            node = node.setdefault(p, {})
        if not isinstance(tnode, dict) or parts[-1] not in tnode:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


# ---------------------------------------------------------------------------
# stage bookkeeping


class RunDir:
    def __init__(self, cfg):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.hash = cfg.hash()

    def stamp(self):
        self.root.mkdir(parents=True, exist_ok=True)
        hfile = self.root / "config.hash"
        if hfile.exists():
            old = hfile.read_text(encoding="utf-8").strip()
            if old != self.hash:
                raise ConfigError(
                    f"{self.root} holds artifacts of config {old}, not {self.hash}; use a fresh output_dir"
                )
        else:
            hfile.write_text(self.hash + "\n", encoding="utf-8")
        (self.root / "config.yaml").write_text(self.cfg.to_yaml(), encoding="utf-8")

    def stage(self, name):
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def done(self, name):
        marker = self.root / name / ".done"
        if not marker.exists():
            return False
        got = marker.read_text(encoding="utf-8").strip()
        if got != self.hash:
            raise ConfigError(f"stage {name} in {self.root} was produced by config {got}")
        return True

    def mark(self, name):
        (self.root / name / ".done").write_text(self.hash + "\n", encoding="utf-8")


def _scores_text(table):
    return "".join(f"{k} {b!r} {m!r}\n" for k, (b, m) in sorted(table.items()))


def _read_scores(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        k, b, m = line.split()
        out[k] = (float(b), float(m))
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class ComparisonReport:
    zero_shot: tuple  # direction keys
    bilingual: dict  # key -> (bleu, mixed)
    pivot: dict
    rounds: list  # RoundReport, index 0 = baseline

    SYSTEMS = ("bilingual", "pivot", "multi-nmt", "multi-nmt*")

    def rows(self):
        base, final = self.rounds[0], self.rounds[-1]
        out = []
        for d in self.zero_shot:
            out.append((d, "bilingual") + self.bilingual[d])
            out.append((d, "pivot") + self.pivot[d])
            out.append((d, "multi-nmt", base.bleu[d], base.mixed[d]))
            out.append((d, "multi-nmt*", final.bleu[d], final.mixed[d]))
        return out

    def to_text(self):
        base, final = self.rounds[0], self.rounds[-1]
        lines = ["# zero-shot directions", f"{'direction':<10} {'system':<11} {'BLEU':>6} {'mixed_rate':>10}"]
        for d, system, b, m in self.rows():
            lines.append(f"{d:<10} {system:<11} {b:6.2f} {m:10.4f}")
        lines += ["", "# supervised directions", f"{'direction':<10} {'baseline':>8} {'final':>8} {'delta':>7}"]
        for k in sorted(base.bleu):
            if k in self.zero_shot:
                continue
            lines.append(f"{k:<10} {base.bleu[k]:8.2f} {final.bleu[k]:8.2f} {final.bleu[k] - base.bleu[k]:+7.2f}")
        lines.append(f"{'mean':<10} {base.mean_supervised():8.2f} {final.mean_supervised():8.2f} "
                     f"{final.mean_supervised() - base.mean_supervised():+7.2f}")
        lines += ["", "# zero-shot BLEU per round (round 0 = baseline)",
                  f"{'round':<6}" + "".join(f" {d:>8}" for d in self.zero_shot)]
        for r in self.rounds:
            lines.append(f"{r.round:<6}" + "".join(f" {r.bleu[d]:8.2f}" for d in self.zero_shot))
        return "\n".join(lines) + "\n"

    def to_csv(self):
        lines = ["direction,round,zero_shot_bleu,mixed_rate,pivot_bleu"]
        for d in self.zero_shot:
            for r in self.rounds:
                lines.append(f"{d},{r.round},{r.bleu[d]:.2f},{r.mixed[d]:.4f},{self.pivot[d][0]:.2f}")
        return "\n".join(lines) + "\n"


def emit_report(report, directory=None):
    """Return (text, csv) and write them as report.txt/report.csv when a directory is given."""
    text, csv = report.to_text(), report.to_csv()
    if directory is not None:
        Path(directory, "report.txt").write_text(text, encoding="utf-8")
        Path(directory, "report.csv").write_text(csv, encoding="utf-8")
    return text, csv


# ---------------------------------------------------------------------------
# pipeline


def _train_cfg(base, seed):
    d = asdict(base)
    d["seed"] = seed
    return TrainConfig(**d)


def run_experiment(cfg, echo=None, until=None):
    """Run (or resume) every stage up to ``until`` and return the report.

    ``echo`` receives progress strings. When ``until`` stops before the
    report stage the return value is ``None``.
    """
    echo = echo or log.info
    run = RunDir(cfg)
    run.stamp()
    state = {}
    for name in STAGES:
        try:
            result = _STAGE_FUNCS[name](cfg, run, state, echo)
        except (ConfigError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        state[name] = result
        if until == name:
            return state.get("report")
    return state["report"]


def _stage_data(cfg, run, state, echo):
    d = run.root / "data"
    if not run.done("data"):
        echo("data: generating family and corpora")
        fam = gen_family(derive_seed(cfg.seed, "family"), cfg.family.n_stems, cfg.family.n_templates,
                         (cfg.family.min_arity, cfg.family.max_arity))
        pairs = [(fam.pivot, s) for s in cfg.data.spokes]
        ds = make_dataset(fam, pairs, cfg.data.n_train, cfg.data.n_valid, cfg.data.n_test,
                          derive_seed(cfg.seed, "data"), tuple(cfg.data.zero_shot))
        run.stage("data")
        fam.save(d / "family.json")
        write_dataset(d, ds)
        run.mark("data")
    return Family.load(d / "family.json"), read_dataset(d)


def _stage_bpe(cfg, run, state, echo):
    d = run.root / "bpe"
    fam, ds = state["data"]
    if not run.done("bpe"):
        echo("bpe: learning joint merges")
        corpora = list(ds.train.values())
        bpe = learn_bpe(corpora, cfg.bpe.merges, cfg.bpe.threshold)
        vocab = build_vocab(bpe, corpora, fam.langs)
        run.stage("bpe")
        bpe.save(d / "codes")
        vocab.save(d / "vocab.txt")
        run.mark("bpe")
    return BpeModel.load(d / "codes"), Vocabulary.load(d / "vocab.txt")


def _context(state):
    if "context" not in state:
        fam, ds = state["data"]
        bpe, vocab = state["bpe"]
        state["context"] = LoopContext(ds, bpe, vocab, training_word_sets(ds.train.values()))
    return state["context"]


def _stage_baseline(cfg, run, state, echo):
    d = run.root / "baseline"
    ctx = _context(state)
    vocab = ctx.vocab
    if not run.done("baseline"):
        echo("baseline: training the multilingual model")
        run.stage("baseline")
        (d / "train.log").unlink(missing_ok=True)
        model = Seq2SeqModel(cfg.model, len(vocab), seed=derive_seed(cfg.seed, "baseline-init"))
        tcfg = _train_cfg(cfg.baseline, derive_seed(cfg.seed, "baseline-train"))
        model, history, _ = train_epochs(model, ctx.train_enc, tcfg, ctx.valid_enc, vocab,
                                         log_path=d / "train.log", phase="baseline", log=echo)
        ppl = history[-1]["valid_ppl"] if history else math.nan
        report = baseline_report(model, ctx, cfg.beam, ppl)
        model.save(d / "checkpoint", vocab.hash())
        (d / "report").write_text(report.to_text(), encoding="utf-8")
        run.mark("baseline")
    model = Seq2SeqModel.load(d / "checkpoint", vocab.hash())
    return model, RoundReport.from_text((d / "report").read_text(encoding="utf-8"))


def _stage_bilingual(cfg, run, state, echo):
    d = run.root / "bilingual"
    ctx = _context(state)
    if not run.done("bilingual"):
        run.stage("bilingual")
        scores = {}
        for setup in bilingual_setups(ctx.dataset):
            key = dkey(setup.direction)
            echo(f"bilingual: training {key}")
            sub = d / key
            sub.mkdir(parents=True, exist_ok=True)
            (sub / "train.log").unlink(missing_ok=True)
            tcfg = _train_cfg(cfg.bilingual, derive_seed(cfg.seed, "bilingual-train", key))
            model, rep, hyps, _ = train_bilingual(setup, cfg.model, tcfg, ctx.bpe, ctx.vocab, cfg.beam,
                                                  derive_seed(cfg.seed, "bilingual-init", key), sub / "train.log")
            model.save(sub / "checkpoint", ctx.vocab.hash())
            write_lines(sub / "hyp", hyps)
            scores[key] = (rep.bleu, mixed_rate(hyps, setup.direction[1], ctx.word_sets).rate)
        (d / "scores").write_text(_scores_text(scores), encoding="utf-8")
        run.mark("bilingual")
    return _read_scores(d / "scores")


def _stage_pivot(cfg, run, state, echo):
    d = run.root / "pivot"
    ctx = _context(state)
    model, _ = state["baseline"]
    fam, ds = state["data"]
    if not run.done("pivot"):
        run.stage("pivot")
        scores = {}
        for src, tgt in ds.zero_shot_directions():
            key = dkey((src, tgt))
            echo(f"pivot: {src} -> {fam.pivot} -> {tgt}")
            test = ds.test[(src, tgt)]
            hyps = [pivot_translate(model, ctx.bpe, ctx.vocab, s, src, fam.pivot, tgt, cfg.beam)
                    for s in test.sources()]
            write_lines(d / f"hyp.{key}", hyps)
            scores[key] = (bleu(hyps, test.targets()).bleu, mixed_rate(hyps, tgt, ctx.word_sets).rate)
        (d / "scores").write_text(_scores_text(scores), encoding="utf-8")
        run.mark("pivot")
    return _read_scores(d / "scores")


def _stage_loop(cfg, run, state, echo):
    ctx = _context(state)
    model, base = state["baseline"]
    lcfg = LoopConfig(**{**asdict(cfg.loop), "seed": derive_seed(cfg.seed, "loop")})
    if run.done("loop"):
        reports = [base]
        for r in range(1, cfg.loop.rounds + 1):
            p = run.root / "loop" / f"round_{r}" / "report"
            if p.exists():
                reports.append(RoundReport.from_text(p.read_text(encoding="utf-8")))
        return reports
    run.stage("loop")
    reports, _ = run_loop(lcfg, ctx, model, cfg.rounds, base, run.root / "loop", echo)
    run.mark("loop")
    return reports


def _stage_report(cfg, run, state, echo):
    _, ds = state["data"]
    report = ComparisonReport(
        tuple(dkey(d) for d in ds.zero_shot_directions()), state["bilingual"], state["pivot"], state["loop"]
    )
    emit_report(report, run.root)
    run.stage("report")
    run.mark("report")
    return report


_STAGE_FUNCS = {
    "data": _stage_data,
    "bpe": _stage_bpe,
    "baseline": _stage_baseline,
    "bilingual": _stage_bilingual,
    "pivot": _stage_pivot,
    "loop": _stage_loop,
    "report": _stage_report,
}


def load_report(directory):
    """Rebuild the comparison report from a finished run directory."""
    root = Path(directory)
    cfg = ExperimentConfig.from_yaml((root / "config.yaml").read_text(encoding="utf-8"))
    cfg.output_dir = str(root)
    for name in STAGES[:-1]:
        if not (root / name / ".done").exists():
            raise ConfigError(f"{root}: stage {name} has not completed")
    return run_experiment(cfg)
