"""Joint byte-pair encoding and the shared multilingual vocabulary."""

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ConfigError, is_tag, tag_token

EOW = "</w>"
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
BPE_FORMAT = "zsnmt-bpe 1"


@dataclass(frozen=True)
class BpeModel:
    merges: tuple  # ((left, right), ...) in learning order
    freqs: tuple  # training frequency of each merge
    threshold: int = 1
    eow_marker: str = EOW
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("duplicate merge rule")
        if len(self.freqs) != len(self.merges):
            raise ValueError("merges and freqs differ in length")

    def ranks(self):
        """Rank of every merge that survives the application threshold."""
        return {pair: r for r, (pair, f) in enumerate(zip(self.merges, self.freqs)) if f >= self.threshold}

    def save(self, path):
        lines = [f"{BPE_FORMAT} threshold={self.threshold}"]
        lines += [f"{a} {b} {f}" for (a, b), f in zip(self.merges, self.freqs)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        head = lines[0].split()
        if " ".join(head[:2]) != BPE_FORMAT:
            raise ValueError(f"{path}: not a BPE model file")
        threshold = int(head[2].split("=", 1)[1])
        merges, freqs = [], []
        for line in lines[1:]:
            a, b, f = line.split()
            merges.append((a, b))
            freqs.append(int(f))
        return cls(tuple(merges), tuple(freqs), threshold)


def _word_symbols(word):
    return tuple(word[:-1]) + (word[-1] + EOW,)


def word_counts(corpora):
    counts = Counter()
    for c in corpora:
        for p in c.pairs:
            counts.update(p.src)
            counts.update(p.tgt)
    return counts


def learn_bpe(corpora, n_merges, threshold=1):
    """Greedy most-frequent-pair merging over every side of every corpus.

    Ties go to the lexicographically smallest pair; learning stops early
    when no pair occurs at least twice.
    """
    if n_merges < 0:
        raise ConfigError("n_merges must be >= 0")
    counts = word_counts(corpora)
    if not counts:
        raise ConfigError("cannot learn BPE from an empty corpus union")
    words = [list(_word_symbols(w)) for w in sorted(counts)]
    freq = [counts[w] for w in sorted(counts)]

    stats = Counter()
    where = defaultdict(set)
    for i, sym in enumerate(words):
        for pair in zip(sym, sym[1:]):
            stats[pair] += freq[i]
            where[pair].add(i)

    merges, mfreqs = [], []
    for _ in range(n_merges):
        if not stats:
            break
        best_f = max(stats.values())
        if best_f < 2:
            break
        best = min(p for p, f in stats.items() if f == best_f)
        merges.append(best)
        mfreqs.append(best_f)
        a, b = best
        joined = a + b
        for i in sorted(where.pop(best, ())):
            sym = words[i]
            for pair in zip(sym, sym[1:]):
                stats[pair] -= freq[i]
                if stats[pair] <= 0:
                    del stats[pair]
            out, k = [], 0
            while k < len(sym):
                if k + 1 < len(sym) and sym[k] == a and sym[k + 1] == b:
                    out.append(joined)
                    k += 2
                else:
                    out.append(sym[k])
                    k += 1
            words[i] = out
            for pair in zip(out, out[1:]):
                stats[pair] += freq[i]
                where[pair].add(i)
        stats.pop(best, None)
    return BpeModel(tuple(merges), tuple(mfreqs), threshold)


def segment_word(model, word):
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    ranks = model._cache.get(None)
    if ranks is None:
        ranks = model.ranks()
        model._cache[None] = ranks
    sym = list(_word_symbols(word))
    while len(sym) > 1:
        best, best_rank = None, None
        for pair in zip(sym, sym[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        a, b = best
        out, k = [], 0
        while k < len(sym):
            if k + 1 < len(sym) and sym[k] == a and sym[k + 1] == b:
                out.append(a + b)
                k += 2
            else:
                out.append(sym[k])
                k += 1
        sym = out
    result = tuple(sym)
    model._cache[word] = result
    return result


def apply_bpe(model, tokens):
    """Segment words into subwords; tag tokens pass through untouched."""
    out = []
    for w in tokens:
        if is_tag(w):
            out.append(w)
        else:
            out.extend(segment_word(model, w))
    return out


def detok(subwords):
    """Join subwords back into words at end-of-word markers."""
    words, buf = [], []
    for s in subwords:
        if s.endswith(EOW):
            buf.append(s[: -len(EOW)])
            words.append("".join(buf))
            buf = []
        else:
            buf.append(s)
    if buf:
        words.append("".join(buf))
    return words


class Vocabulary:
    """Bijective token/id table shared by every language."""

    def __init__(self, tokens):
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")
        for s in SPECIALS:
            if s not in self.stoi:
                raise ValueError(f"vocabulary lacks reserved symbol {s}")
        self.pad, self.bos, self.eos, self.unk = (self.stoi[s] for s in SPECIALS)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def reserved_ids(self):
        return {i for i, t in enumerate(self.itos) if t in SPECIALS or is_tag(t)}

    def encode(self, tokens):
        return [self.stoi.get(t, self.unk) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def text(self):
        return "".join(t + "\n" for t in self.itos)

    def hash(self):
        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()

    def save(self, path):
        Path(path).write_text(self.text(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def build_vocab(model, corpora, langs):
    """Reserved symbols, one tag per language, then every observed subword."""
    seen = set()
    for w in word_counts(corpora):
        seen.update(segment_word(model, w))
    tags = [tag_token(code) for code in sorted(langs)]
    return Vocabulary(list(SPECIALS) + tags + sorted(seen))
