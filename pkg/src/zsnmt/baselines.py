"""Bilingual reference models for the zero-shot pair.

They train on oracle-generated direct pairs that the multilingual model never
sees, and share its vocabulary, tags and decoding path.
"""

from dataclasses import dataclass

from .corpus import ConfigError
from .decode import translate_all
from .evaluation import bleu
from .model import Seq2SeqModel
from .train import encode_corpus, train_epochs


@dataclass(frozen=True)
class BilingualSetup:
    direction: tuple
    train: object  # ParallelCorpus of direct pairs
    valid: object
    test: object


def bilingual_setups(dataset):
    setups = []
    for d in dataset.zero_shot_directions():
        if d not in dataset.direct_train:
            raise ConfigError(f"no direct corpus for {d[0]}-{d[1]}")
        setups.append(BilingualSetup(d, dataset.direct_train[d], dataset.direct_valid[d], dataset.test[d]))
    return setups


def train_bilingual(setup, model_cfg, train_cfg, bpe, vocab, beam=10, model_seed=0, log_path=None, echo=None):
    """Train one direction from scratch.

    Returns ``(model, test BLEU report, test hypotheses, history)``.
    """
    model = Seq2SeqModel(model_cfg, len(vocab), seed=model_seed)
    enc = encode_corpus(setup.train, bpe, vocab)
    valid = encode_corpus(setup.valid, bpe, vocab)
    phase = f"bilingual-{setup.direction[0]}-{setup.direction[1]}"
    model, history, _ = train_epochs(model, [enc], train_cfg, [valid], vocab, log_path=log_path, phase=phase, log=echo)
    src, tgt = setup.direction
    hyps = translate_all(model, bpe, vocab, setup.test.sources(), src, tgt, beam)
    return model, bleu(hyps, setup.test.targets()), hyps, history
