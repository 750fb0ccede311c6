"""Synthetic five-language family, parallel corpora and target-forcing tags.

Every language shares one stem inventory. A surface word is ``stem + suffix``
with a suffix chosen per (language, word category); a sentence is a template
(sequence of categories) whose slots each language emits in its own fixed
order. Both maps are bijective, so :meth:`Family.translate` is an exact
oracle between any two languages.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PIVOT = "l0"
LANGS = ("l0", "l1", "l2", "l3", "l4")
CATEGORIES = ("N", "V", "A", "R")
# share of the stem inventory per category
_CATEGORY_WEIGHTS = (0.4, 0.25, 0.2, 0.15)
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

# Suffix inventories per category.  l1 and l2 are sister dialects of the
# pivot: they keep its noun and adjective forms and its word order up to a few
# adjacent swaps, and differ from it (and from each other) in verbs and
# adverbs.  With fully disjoint forms a desk-scale model never leaves the
# pivot language on unseen directions, so nothing would be left to learn.
_SUFFIXES = {
    "l0": {"N": "", "V": "ed", "A": "y", "R": "ly"},
    "l1": {"N": "", "V": "are", "A": "y", "R": "mente"},
    "l2": {"N": "", "V": "ere", "A": "y", "R": "esc"},
    "l3": {"N": "en", "V": "te", "A": "ig", "R": "lich"},
    "l4": {"N": "je", "V": "den", "A": "ische", "R": "erwijs"},
}
SISTERS = ("l1", "l2")
SISTER_SWAPS = 2

MIN_ARITY, MAX_ARITY = 3, 12


class ConfigError(ValueError):
    pass


class OracleError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "oracle error"


def tag_token(lang):
    return f"<2{lang}>"


def is_tag(token):
    return token.startswith("<2") and token.endswith(">")


@dataclass(frozen=True)
class SentencePair:
    src_lang: str
    tgt_lang: str
    src: tuple
    tgt: tuple

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise ValueError("sentence pair sides must be non-empty")
        if any(is_tag(w) for w in self.src) or any(is_tag(w) for w in self.tgt):
            raise ValueError("raw sentence text may not contain tag tokens")


@dataclass(frozen=True)
class ParallelCorpus:
    src_lang: str
    tgt_lang: str
    pairs: tuple
    provenance: str = "original"

    def __post_init__(self):
        for p in self.pairs:
            if (p.src_lang, p.tgt_lang) != (self.src_lang, self.tgt_lang):
                raise ValueError(
                    f"pair direction {p.src_lang}-{p.tgt_lang} does not match "
                    f"corpus {self.src_lang}-{self.tgt_lang}"
                )
        if self.provenance != "original" and not self.provenance.startswith("synthetic:"):
            raise ValueError(f"bad provenance {self.provenance!r}")

    @classmethod
    def from_sides(cls, src_lang, tgt_lang, srcs, tgts, provenance="original"):
        pairs = tuple(SentencePair(src_lang, tgt_lang, tuple(s), tuple(t)) for s, t in zip(srcs, tgts))
        return cls(src_lang, tgt_lang, pairs, provenance)

    @property
    def direction(self):
        return (self.src_lang, self.tgt_lang)

    @property
    def synthetic_round(self):
        if self.provenance == "original":
            return None
        return int(self.provenance.split(":", 1)[1])

    def __len__(self):
        return len(self.pairs)

    def sources(self):
        return [p.src for p in self.pairs]

    def targets(self):
        return [p.tgt for p in self.pairs]

    def reversed(self):
        return ParallelCorpus(
            self.tgt_lang,
            self.src_lang,
            tuple(SentencePair(p.tgt_lang, p.src_lang, p.tgt, p.src) for p in self.pairs),
            self.provenance,
        )


@dataclass(frozen=True)
class LangSpec:
    code: str
    lexicon: dict  # stem -> surface word
    suffixes: dict  # category -> suffix
    order_rule: tuple  # per template: surface position -> canonical slot
    templates: tuple  # canonical category sequences, shared by the family

    def render(self, template_id, stems):
        perm = self.order_rule[template_id]
        return tuple(self.lexicon[stems[k]] for k in perm)


@dataclass(frozen=True)
class Family:
    seed: int
    stems: tuple
    stem_category: dict
    templates: tuple
    specs: dict  # code -> LangSpec
    pivot: str = PIVOT
    _inverse: dict = field(default=None, compare=False, repr=False)
    _parse_index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        inverse = {code: {w: s for s, w in spec.lexicon.items()} for code, spec in self.specs.items()}
        index = {}
        for code, spec in self.specs.items():
            table = {}
            for tid, perm in enumerate(spec.order_rule):
                cats = tuple(self.templates[tid][k] for k in perm)
                table[cats] = tid
            index[code] = table
        object.__setattr__(self, "_inverse", inverse)
        object.__setattr__(self, "_parse_index", index)

    @property
    def langs(self):
        return tuple(self.specs)

    def parse(self, sentence, lang):
        """Surface sentence -> (template id, stems in canonical slot order)."""
        if lang not in self.specs:
            raise OracleError(f"unknown language {lang!r}")
        inv = self._inverse[lang]
        stems = []
        for w in sentence:
            if w not in inv:
                raise OracleError(f"token {w!r} is not a {lang} word")
            stems.append(inv[w])
        cats = tuple(self.stem_category[s] for s in stems)
        tid = self._parse_index[lang].get(cats)
        if tid is None:
            raise OracleError(f"sentence matches no {lang} template: {' '.join(sentence)}")
        perm = self.specs[lang].order_rule[tid]
        canon = [None] * len(stems)
        for pos, slot in enumerate(perm):
            canon[slot] = stems[pos]
        return tid, tuple(canon)

    def render(self, meaning, lang):
        tid, stems = meaning
        return self.specs[lang].render(tid, stems)

    def translate(self, sentence, src, tgt):
        return oracle_translate(sentence, src, tgt, self)

    def word_sets(self):
        return {code: set(spec.lexicon.values()) for code, spec in self.specs.items()}

    def sample_meaning(self, rng):
        tid = int(rng.integers(len(self.templates)))
        by_cat = self._stems_by_category()
        stems = tuple(by_cat[c][int(rng.integers(len(by_cat[c])))] for c in self.templates[tid])
        return tid, stems

    def _stems_by_category(self):
        out = {c: [] for c in CATEGORIES}
        for s in self.stems:
            out[self.stem_category[s]].append(s)
        return out

    def to_manifest(self):
        return {
            "format": "zsnmt-family-1",
            "seed": self.seed,
            "pivot": self.pivot,
            "stems": [[s, self.stem_category[s]] for s in self.stems],
            "templates": ["".join(t) for t in self.templates],
            "languages": {
                code: {
                    "suffixes": spec.suffixes,
                    "order_rule": [list(p) for p in spec.order_rule],
                }
                for code, spec in self.specs.items()
            },
        }

    @classmethod
    def from_manifest(cls, data):
        stems = tuple(s for s, _ in data["stems"])
        cats = {s: c for s, c in data["stems"]}
        templates = tuple(tuple(t) for t in data["templates"])
        specs = {}
        for code, d in data["languages"].items():
            lexicon = {s: s + d["suffixes"][cats[s]] for s in stems}
            specs[code] = LangSpec(
                code, lexicon, dict(d["suffixes"]), tuple(tuple(p) for p in d["order_rule"]), templates
            )
        return cls(int(data["seed"]), stems, cats, templates, specs, data["pivot"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_manifest(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_manifest(json.loads(Path(path).read_text(encoding="utf-8")))


def gen_family(seed, n_stems=60, n_templates=8, arity=(3, 8)):
    """Build a deterministic five-language family.

    ``arity`` bounds the template lengths and must lie within 3..12.
    """
    if n_stems < 20:
        raise ConfigError(f"n_stems must be >= 20, got {n_stems}")
    if n_templates < 5:
        raise ConfigError(f"n_templates must be >= 5, got {n_templates}")
    lo, hi = arity
    if not (MIN_ARITY <= lo <= hi <= MAX_ARITY):
        raise ConfigError(f"template arity range {arity} outside {MIN_ARITY}..{MAX_ARITY}")
    rng = np.random.default_rng(seed)

    pool = [a + b + c + d for a in _CONSONANTS for b in _VOWELS for c in _CONSONANTS for d in _VOWELS]
    picks = rng.choice(len(pool), size=n_stems, replace=False)
    stems = tuple(pool[i] for i in picks)
    counts = [max(1, int(round(w * n_stems))) for w in _CATEGORY_WEIGHTS]
    counts[0] += n_stems - sum(counts)
    cat_list = [c for c, k in zip(CATEGORIES, counts) for _ in range(k)]
    stem_category = dict(zip(stems, cat_list))

    templates = []
    seen = set()
    while len(templates) < n_templates:
        n = int(rng.integers(lo, hi + 1))
        t = tuple(CATEGORIES[int(rng.integers(len(CATEGORIES)))] for _ in range(n))
        if t not in seen:
            seen.add(t)
            templates.append(t)
    templates = tuple(templates)

    specs = {}
    sister_order = None
    for code in LANGS:
        suffixes = dict(_SUFFIXES[code])
        lexicon = {s: s + suffixes[stem_category[s]] for s in stems}
        if code == PIVOT:
            order = tuple(tuple(range(len(t))) for t in templates)
        elif code in SISTERS:
            if sister_order is None:
                sister_order = _draw_orders(rng, templates, SISTER_SWAPS)
            order = sister_order
        else:
            order = _draw_orders(rng, templates)
        specs[code] = LangSpec(code, lexicon, suffixes, order, templates)
    return Family(int(seed), stems, stem_category, templates, specs)


def _draw_orders(rng, templates, swaps=None):
    """Random slot orders, or with ``swaps`` the pivot order after that many adjacent swaps."""
    # resample until the permuted category sequences identify their template
    while True:
        if swaps is None:
            order = tuple(tuple(int(k) for k in rng.permutation(len(t))) for t in templates)
        else:
            order = tuple(_adjacent_swaps(rng, len(t), swaps) for t in templates)
        keys = {tuple(t[k] for k in p) for t, p in zip(templates, order)}
        if len(keys) == len(templates):
            return order


def _adjacent_swaps(rng, n, swaps):
    p = list(range(n))
    for _ in range(swaps):
        i = int(rng.integers(n - 1))
        p[i], p[i + 1] = p[i + 1], p[i]
    return tuple(p)


def bigram_set(words):
    return {w[i : i + 2] for w in words for i in range(len(w) - 1)}


def shared_bigram_ratio(family, a, b):
    """Fraction of the union of surface bigrams of ``a`` and ``b`` present in both."""
    ba = bigram_set(family.specs[a].lexicon.values())
    bb = bigram_set(family.specs[b].lexicon.values())
    return len(ba & bb) / len(ba | bb)


def oracle_translate(sentence, src, tgt, family):
    """Exact translation: inverse lexicon, reorder slots, target lexicon."""
    sentence = tuple(sentence)
    if tgt not in family.specs:
        raise OracleError(f"unknown language {tgt!r}")
    meaning = family.parse(sentence, src)
    if src == tgt:
        return sentence
    return family.render(meaning, tgt)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """All splits of a desk experiment.

    ``train``/``valid``/``test`` map direction tuples to corpora; the
    zero-shot directions appear only in ``test``. ``direct_train`` and
    ``direct_valid`` hold oracle-generated pairs for the zero-shot language
    pair, reserved for the bilingual reference models.
    """

    train: dict
    valid: dict
    test: dict
    direct_train: dict
    direct_valid: dict
    zero_shot: tuple

    def supervised_directions(self):
        return list(self.train)

    def zero_shot_directions(self):
        a, b = self.zero_shot
        return [(a, b), (b, a)]

    def all_test_directions(self):
        return list(self.test)


def make_dataset(family, pairs, n_train, n_valid, n_test, seed, zero_shot=("l1", "l2")):
    """Sample disjoint splits for the spoke pairs and the zero-shot pair.

    Each spoke contributes both directions over the same sentences. Meanings
    are unique across every split and spoke, so no sentence string can occur
    in two splits.
    """
    pairs = [tuple(p) for p in pairs]
    for a, b in pairs:
        if family.pivot not in (a, b) or a == b:
            raise ConfigError(f"pair {a}-{b} does not connect through the pivot {family.pivot}")
    za, zb = zero_shot
    spokes = {x for p in pairs for x in p if x != family.pivot}
    if za not in spokes or zb not in spokes:
        raise ConfigError(f"zero-shot languages {zero_shot} need supervised spokes")
    if set(zero_shot) in [set(p) for p in pairs]:
        raise ConfigError("zero-shot pair may not have supervised data")
    rng = np.random.default_rng(seed)
    used = set()

    def draw(n):
        out = []
        while len(out) < n:
            m = family.sample_meaning(rng)
            if m not in used:
                used.add(m)
                out.append(m)
        return out

    def corpus(meanings, s, t):
        return ParallelCorpus.from_sides(
            s, t, [family.render(m, s) for m in meanings], [family.render(m, t) for m in meanings]
        )

    train, valid, test = {}, {}, {}
    for a, b in pairs:
        tr, va, te = draw(n_train), draw(n_valid), draw(n_test)
        for s, t in ((a, b), (b, a)):
            train[(s, t)] = corpus(tr, s, t)
            valid[(s, t)] = corpus(va, s, t)
            test[(s, t)] = corpus(te, s, t)
    zte = draw(n_test)
    dtr, dva = draw(n_train), draw(n_valid)
    direct_train, direct_valid = {}, {}
    for s, t in ((za, zb), (zb, za)):
        test[(s, t)] = corpus(zte, s, t)
        direct_train[(s, t)] = corpus(dtr, s, t)
        direct_valid[(s, t)] = corpus(dva, s, t)
    return Dataset(train, valid, test, direct_train, direct_valid, (za, zb))


def tag_source(pair):
    """Prepend the single target-forcing token to the source side."""
    return (tag_token(pair.tgt_lang),) + tuple(pair.src)


def untag(tokens):
    tokens = tuple(tokens)
    if tokens and is_tag(tokens[0]):
        return tokens[1:]
    return tokens


# ---------------------------------------------------------------------------
# files


def corpus_filenames(split, src, tgt):
    return f"{split}.{src}-{tgt}.{src}", f"{split}.{src}-{tgt}.{tgt}"


def write_lines(path, sentences):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")


def read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [tuple(line.split()) for line in fh.read().splitlines()]


def write_corpus(directory, split, corpus):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fs, ft = corpus_filenames(split, corpus.src_lang, corpus.tgt_lang)
    write_lines(directory / fs, corpus.sources())
    write_lines(directory / ft, corpus.targets())


def read_corpus(directory, split, src, tgt, provenance="original"):
    directory = Path(directory)
    fs, ft = corpus_filenames(split, src, tgt)
    srcs, tgts = read_lines(directory / fs), read_lines(directory / ft)
    if len(srcs) != len(tgts):
        raise ValueError(f"{fs} and {ft} are not line-aligned ({len(srcs)} vs {len(tgts)})")
    return ParallelCorpus.from_sides(src, tgt, srcs, tgts, provenance)


def write_dataset(directory, ds):
    for split, table in (
        ("train", ds.train),
        ("valid", ds.valid),
        ("test", ds.test),
        ("direct-train", ds.direct_train),
        ("direct-valid", ds.direct_valid),
    ):
        for corpus in table.values():
            write_corpus(directory, split, corpus)
    index = {
        "zero_shot": list(ds.zero_shot),
        "train": [list(d) for d in ds.train],
        "test": [list(d) for d in ds.test],
        "direct": [list(d) for d in ds.direct_train],
    }
    (Path(directory) / "dataset.json").write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")


def read_dataset(directory):
    directory = Path(directory)
    index = json.loads((directory / "dataset.json").read_text(encoding="utf-8"))
    train = {tuple(d): read_corpus(directory, "train", *d) for d in index["train"]}
    valid = {tuple(d): read_corpus(directory, "valid", *d) for d in index["train"]}
    test = {tuple(d): read_corpus(directory, "test", *d) for d in index["test"]}
    dtrain = {tuple(d): read_corpus(directory, "direct-train", *d) for d in index["direct"]}
    dvalid = {tuple(d): read_corpus(directory, "direct-valid", *d) for d in index["direct"]}
    return Dataset(train, valid, test, dtrain, dvalid, tuple(index["zero_shot"]))
