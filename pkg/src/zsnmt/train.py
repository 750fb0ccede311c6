"""Optimizers, the learning-rate schedule and the multi-direction epoch loop.

Phase one trains with Adam; every later round restarts SGD at lr 1.0. In both
phases the rate is multiplied by 0.7 after an epoch whose validation
perplexity did not improve, and after every epoch past the seventh.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import ConfigError, tag_source
from .model import forward_loss, make_batch, token_losses
from .numcore import DimensionError, Tape
from .subword import apply_bpe

OPTIMIZERS = ("adam", "sgd")
LOG_HEADER = "epoch,phase,lr,train_loss,valid_ppl"


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 0.001
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    decay_factor: float = 0.7
    decay_epoch_start: int = 7
    batch_size: int = 32
    epochs: int = 10
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        self.adam_betas = tuple(self.adam_betas)

    @classmethod
    def sgd_round(cls, **kw):
        """Settings for a train-infer-train round."""
        return cls(optimizer="sgd", lr=1.0, **kw)


@dataclass
class TrainState:
    lr: float
    epoch: int = 0  # epochs completed in this phase
    best_ppl: float = math.inf
    step: int = 0  # Adam bias-correction counter
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def start(cls, cfg):
        return cls(lr=cfg.lr)


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"parameter shape {p.shape} vs gradient shape {g.shape}")


def clip_global_norm(grads, clip_norm):
    """Scale all gradients together so their joint L2 norm is at most clip_norm."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if clip_norm is not None and norm > clip_norm:
        s = clip_norm / norm
        return [g * g.dtype.type(s) for g in grads], norm
    return list(grads), norm


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """In-place Adam update of the arrays in ``params``; moments live in ``state``."""
    _check_shapes(params, grads)
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p)
            state.v[i] = np.zeros_like(p)
        v = state.v[i]
        if m.shape != p.shape:
            raise DimensionError(f"optimizer moment shape {m.shape} vs parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


def sgd_step(params, grads, lr, clip_norm=None):
    """Clip by global norm, then ``p -= lr * g`` in place."""
    _check_shapes(params, grads)
    grads, _ = clip_global_norm(grads, clip_norm)
    for p, g in zip(params, grads):
        p -= p.dtype.type(lr) * g
    return params


def maybe_decay(state, new_valid_ppl, epoch, factor=0.7, start=7):
    if not new_valid_ppl > 0:
        raise ValueError("perplexity must be positive")
    if new_valid_ppl >= state.best_ppl or epoch > start:
        state.lr *= factor
    state.best_ppl = min(state.best_ppl, new_valid_ppl)
    return state.lr


# ---------------------------------------------------------------------------
# data plumbing


def encode_corpus(corpus, bpe, vocab):
    """Tag, segment and map a corpus to ``(src_ids, tgt_ids)`` integer arrays."""
    out = []
    for p in corpus.pairs:
        src = vocab.encode(apply_bpe(bpe, tag_source(p)))
        tgt = vocab.encode(apply_bpe(bpe, p.tgt))
        out.append((np.array(src, dtype=np.int64), np.array(tgt, dtype=np.int64)))
    return out


def make_batches(examples, batch_size, rng, pool=50):
    """Shuffle, then sort pools of ``pool`` batches by length and cut them.

    Every example lands in exactly one batch. The batch order is shuffled
    again so that length buckets are interleaved.
    """
    order = rng.permutation(len(examples))
    batches = []
    span = batch_size * pool
    for lo in range(0, len(order), span):
        chunk = sorted(order[lo : lo + span], key=lambda i: (len(examples[i][0]), len(examples[i][1])))
        batches += [chunk[k : k + batch_size] for k in range(0, len(chunk), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def _sorted_batches(examples, batch_size):
    order = sorted(range(len(examples)), key=lambda i: (len(examples[i][0]), len(examples[i][1]), i))
    return [order[k : k + batch_size] for k in range(0, len(order), batch_size)]


def corpus_nll(model, examples, vocab, batch_size=64):
    """Summed target negative log-likelihood and token count (``</s>`` included)."""
    if not examples:
        raise ConfigError("cannot score an empty corpus")
    total, count = 0.0, 0
    for idx in _sorted_batches(examples, batch_size):
        batch = make_batch([examples[i] for i in idx], vocab.pad, vocab.bos, vocab.eos)
        total += float(token_losses(model, batch).sum(dtype=np.float64))
        count += batch.n_tokens
    return total, count


def validation_ppl(model, valid_sets, vocab):
    """Perplexity pooled over every supervised direction's validation set."""
    total, count = 0.0, 0
    for examples in valid_sets:
        t, c = corpus_nll(model, examples, vocab)
        total += t
        count += c
    return math.exp(total / count)


def train_step(model, batch, cfg, state, rng):
    params = model.parameters()
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = forward_loss(model, batch, train_mode=True, rng=rng)
        tape.backward(loss)
    arrays = [p.data for p in params]
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if cfg.optimizer == "adam":
        grads, _ = clip_global_norm(grads, cfg.clip_norm)
        adam_step(arrays, grads, state, state.lr, cfg.adam_betas, cfg.adam_eps)
    else:
        sgd_step(arrays, grads, state.lr, cfg.clip_norm)
    return loss.data.item()


def train_epochs(model, corpora, cfg, valid_sets, vocab, state=None, log_path=None, phase=None, log=None):
    """Run ``cfg.epochs`` epochs over the union of ``corpora``.

    ``corpora`` and ``valid_sets`` are lists of encoded example lists (see
    :func:`encode_corpus`). Returns ``(model, log, state)`` where ``log`` holds
    one dict per epoch.
    """
    union = [ex for c in corpora for ex in c]
    if not union:
        raise ConfigError("training union is empty")
    state = state or TrainState.start(cfg)
    phase = phase or cfg.optimizer
    history = []
    for _ in range(cfg.epochs):
        epoch = state.epoch + 1
        rng = np.random.default_rng((cfg.seed, epoch))
        lr_used = state.lr
        t0 = time.perf_counter()
        loss_sum, tok_sum = 0.0, 0
        for idx in make_batches(union, cfg.batch_size, rng):
            batch = make_batch([union[i] for i in idx], vocab.pad, vocab.bos, vocab.eos)
            n = batch.n_tokens
            loss_sum += train_step(model, batch, cfg, state, rng) * n
            tok_sum += n
        ppl = validation_ppl(model, valid_sets, vocab)
        maybe_decay(state, ppl, epoch, cfg.decay_factor, cfg.decay_epoch_start)
        state.epoch = epoch
        row = {"epoch": epoch, "phase": phase, "lr": lr_used, "train_loss": loss_sum / tok_sum, "valid_ppl": ppl}
        history.append(row)
        if log_path is not None:
            append_log(log_path, row)
        if log is not None:
            log(f"{phase} epoch {epoch}: lr {lr_used:.6g} loss {row['train_loss']:.4f} "
                f"valid ppl {ppl:.4f} ({time.perf_counter() - t0:.1f}s)")
    return model, history, state


def format_log_row(row):
    return f"{row['epoch']},{row['phase']},{row['lr']:.8g},{row['train_loss']:.6f},{row['valid_ppl']:.6f}"


def append_log(path, row):
    new = not _exists_nonempty(path)
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write(LOG_HEADER + "\n")
        fh.write(format_log_row(row) + "\n")


def read_log(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for line in lines[1:]:
        epoch, phase, lr, loss, ppl = line.split(",")
        rows.append({"epoch": int(epoch), "phase": phase, "lr": float(lr),
                     "train_loss": float(loss), "valid_ppl": float(ppl)})
    return rows


def _exists_nonempty(path):
    try:
        with open(path, "rb") as fh:
            return bool(fh.read(1))
    except FileNotFoundError:
        return False
