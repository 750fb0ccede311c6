"""Recurrent encoder-decoder with bilinear attention.

Training runs the whole target sequence through the decoder LSTM at once
(there is no input feeding, so the decoder recurrence does not depend on
attention), then attends and projects every position in one batched op.
Inference uses :func:`decode_step`, which computes the same quantities one
position at a time on raw arrays.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .corpus import ConfigError
from .numcore import Tensor

MAGIC = b"MNMT1\n"


@dataclass
class ModelConfig:
    emb_dim: int = 32
    hidden_dim: int = 64
    enc_depth: int = 1
    dec_depth: int = 1
    dropout: float = 0.3
    bidirectional: bool = True

    def __post_init__(self):
        for name in ("emb_dim", "hidden_dim", "enc_depth", "dec_depth"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @classmethod
    def paper_scale(cls):
        return cls(emb_dim=512, hidden_dim=1024, enc_depth=2, dec_depth=2, dropout=0.3, bidirectional=True)


@dataclass(frozen=True)
class DecoderState:
    h: tuple  # per layer, (B, H)
    c: tuple
    context: np.ndarray  # last attention context, (B, H); zeros before the first step


class Seq2SeqModel:
    def __init__(self, cfg, vocab_size, seed=0, dtype=np.float32, init=True):
        self.cfg = cfg
        self.vocab_size = int(vocab_size)
        self.params = {}
        shapes = self.param_shapes()
        if init:
            rng = np.random.default_rng(seed)
            for name, shape in shapes.items():
                self.params[name] = Tensor(
                    rng.uniform(-0.1, 0.1, size=shape), requires_grad=True, name=name, dtype=dtype
                )

    @property
    def directions(self):
        return ("fwd", "bwd") if self.cfg.bidirectional else ("fwd",)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def param_shapes(self):
        E, H, V = self.cfg.emb_dim, self.cfg.hidden_dim, self.vocab_size
        nd = len(self.directions)
        shapes = {"src_emb": (V, E), "tgt_emb": (V, E)}
        for layer in range(self.cfg.enc_depth):
            d_in = E if layer == 0 else nd * H
            for d in self.directions:
                shapes[f"enc.{layer}.{d}.w_x"] = (d_in, 4 * H)
                shapes[f"enc.{layer}.{d}.w_h"] = (H, 4 * H)
                shapes[f"enc.{layer}.{d}.b"] = (4 * H,)
        if self.cfg.bidirectional:
            shapes["enc.proj"] = (2 * H, H)
            for layer in range(self.cfg.dec_depth):
                shapes[f"bridge.{layer}.h"] = (2 * H, H)
                shapes[f"bridge.{layer}.c"] = (2 * H, H)
        for layer in range(self.cfg.dec_depth):
            shapes[f"dec.{layer}.w_x"] = (E if layer == 0 else H, 4 * H)
            shapes[f"dec.{layer}.w_h"] = (H, 4 * H)
            shapes[f"dec.{layer}.b"] = (4 * H,)
        shapes["attn.w"] = (H, H)
        shapes["out.w"] = (2 * H, V)
        shapes["out.b"] = (V,)
        return shapes

    def parameters(self):
        return list(self.params.values())

    def __getitem__(self, name):
        return self.params[name].data

    def n_params(self):
        return sum(p.data.size for p in self.params.values())

    def copy(self, dtype=None):
        other = Seq2SeqModel(self.cfg, self.vocab_size, init=False)
        for name, p in self.params.items():
            other.params[name] = Tensor(
                p.data.copy() if dtype is None else p.data.astype(dtype),
                requires_grad=True,
                name=name,
            )
        return other

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def save(self, path, vocab_hash):
        header = {
            "config": asdict(self.cfg),
            "vocab_size": self.vocab_size,
            "vocab_hash": vocab_hash,
            "arrays": [[n, list(p.shape)] for n, p in self.params.items()],
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for p in self.params.values():
                fh.write(p.data.astype("<f4").tobytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path, vocab_hash=None):
        raw = Path(path).read_bytes()
        if not raw.startswith(MAGIC):
            raise ValueError(f"{path}: not a model checkpoint")
        nl = raw.index(b"\n", len(MAGIC))
        header = json.loads(raw[len(MAGIC) : nl])
        if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
            raise ValueError(f"{path}: checkpoint was trained with a different vocabulary")
        model = cls(ModelConfig(**header["config"]), header["vocab_size"], init=False)
        offset = nl + 1
        for name, shape in header["arrays"]:
            n = int(np.prod(shape))
            data = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape)
            model.params[name] = Tensor(data.astype(np.float32), requires_grad=True, name=name)
            offset += 4 * n
        if offset != len(raw):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
        model.vocab_hash = header["vocab_hash"]
        return model


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    src: np.ndarray  # (S, B) ids, time-major
    src_mask: np.ndarray  # (S, B) uint8
    dec_in: np.ndarray  # (T, B)
    dec_out: np.ndarray  # (T, B)
    tgt_mask: np.ndarray  # (T, B) uint8

    @property
    def n_tokens(self):
        return int(self.tgt_mask.sum())


def make_batch(examples, pad, bos, eos):
    """Pad ``(src_ids, tgt_ids)`` examples; targets get ``<s>``/``</s>`` here."""
    if not examples:
        raise ConfigError("empty batch")
    B = len(examples)
    S = max(len(s) for s, _ in examples)
    T = max(len(t) for _, t in examples) + 1
    src = np.full((S, B), pad, dtype=np.int64)
    src_mask = np.zeros((S, B), dtype=np.uint8)
    dec_in = np.full((T, B), pad, dtype=np.int64)
    dec_out = np.full((T, B), pad, dtype=np.int64)
    tgt_mask = np.zeros((T, B), dtype=np.uint8)
    for b, (s, t) in enumerate(examples):
        if not len(s):
            raise ConfigError("empty source sequence")
        src[: len(s), b] = s
        src_mask[: len(s), b] = 1
        dec_in[0, b] = bos
        dec_in[1 : len(t) + 1, b] = t
        dec_out[: len(t), b] = t
        dec_out[len(t), b] = eos
        tgt_mask[: len(t) + 1, b] = 1
    return Batch(src, src_mask, dec_in, dec_out, tgt_mask)


# ---------------------------------------------------------------------------
# forward pass on tensors


def _zeros(model, B):
    return Tensor(np.zeros((B, model.cfg.hidden_dim), dtype=model.dtype))


def _encode(model, src, src_mask, train, rng):
    P = model.params
    x = nc.dropout(nc.embedding(P["src_emb"], src), model.cfg.dropout, rng, train)
    B = src.shape[1]
    finals = []
    for layer in range(model.cfg.enc_depth):
        outs, fin = [], []
        for d in model.directions:
            xw = nc.add(nc.matmul(x, P[f"enc.{layer}.{d}.w_x"]), P[f"enc.{layer}.{d}.b"])
            hs, h_last, c_last = nc.lstm(
                xw, P[f"enc.{layer}.{d}.w_h"], _zeros(model, B), _zeros(model, B), src_mask, d == "bwd"
            )
            outs.append(hs)
            fin.append((h_last, c_last))
        x = nc.concat(outs, axis=-1) if len(outs) > 1 else outs[0]
        finals.append(fin)
    if model.cfg.bidirectional:
        x = nc.matmul(x, P["enc.proj"])
    init = []
    for layer in range(model.cfg.dec_depth):
        fin = finals[min(layer, model.cfg.enc_depth - 1)]
        if model.cfg.bidirectional:
            h = nc.matmul(nc.concat([fin[0][0], fin[1][0]]), P[f"bridge.{layer}.h"])
            c = nc.matmul(nc.concat([fin[0][1], fin[1][1]]), P[f"bridge.{layer}.c"])
        else:
            h, c = fin[0]
        init.append((h, c))
    return x, init


def _decode_all(model, enc, init, batch, train, rng):
    P = model.params
    y = nc.dropout(nc.embedding(P["tgt_emb"], batch.dec_in), model.cfg.dropout, rng, train)
    for layer in range(model.cfg.dec_depth):
        yw = nc.add(nc.matmul(y, P[f"dec.{layer}.w_x"]), P[f"dec.{layer}.b"])
        h0, c0 = init[layer]
        y, _, _ = nc.lstm(yw, P[f"dec.{layer}.w_h"], h0, c0, batch.tgt_mask, False)
    dec = nc.transpose(y, (1, 0, 2))
    keys = nc.transpose(enc, (1, 0, 2))
    ctx, _ = nc.attention(dec, keys, P["attn.w"], batch.src_mask.T.astype(bool))
    feat = nc.dropout(nc.concat([dec, ctx], axis=-1), model.cfg.dropout, rng, train)
    return nc.add(nc.matmul(feat, P["out.w"]), P["out.b"])  # (B, T, V)


def batch_logits(model, batch, train_mode=False, rng=None):
    if train_mode and rng is None:
        raise ConfigError("training mode needs a random generator for dropout")
    enc, init = _encode(model, batch.src, batch.src_mask, train_mode, rng)
    return _decode_all(model, enc, init, batch, train_mode, rng)


def forward_loss(model, batch, train_mode=False, rng=None, vocab=None):
    """Mean per-token negative log-likelihood under teacher forcing.

    ``batch`` is either a :class:`Batch` or a list of ``(src_ids, tgt_ids)``
    (the latter needs ``vocab`` for the special ids).
    """
    if not isinstance(batch, Batch):
        if not batch:
            raise ConfigError("empty batch")
        batch = make_batch(batch, vocab.pad, vocab.bos, vocab.eos)
    logits = batch_logits(model, batch, train_mode, rng)
    return nc.cross_entropy(logits, batch.dec_out.T, batch.tgt_mask.T)


def token_losses(model, batch):
    """Per-token NLL (B, T) at inference; zero on padding."""
    logits = batch_logits(model, batch).data
    logp = nc.log_softmax_array(logits)
    tgt = batch.dec_out.T
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    return -picked * batch.tgt_mask.T


# ---------------------------------------------------------------------------
# inference on arrays


def _check_ids(model, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= model.vocab_size):
        raise IndexError(f"token id out of range for vocabulary of size {model.vocab_size}")
    return ids


def encode(model, src_ids):
    """Encoder states (S, H) and the initial decoder state for one sentence."""
    ids = _check_ids(model, src_ids)
    if ids.size == 0:
        raise ConfigError("cannot encode an empty sequence")
    src = ids.reshape(-1, 1)
    enc, init = _encode(model, src, np.ones_like(src, dtype=np.uint8), False, None)
    H = model.cfg.hidden_dim
    state = DecoderState(
        tuple(h.data for h, _ in init),
        tuple(c.data for _, c in init),
        np.zeros((1, H), dtype=model.dtype),
    )
    return enc.data[:, 0, :], state


def attend(dec_hidden, enc_states, w):
    """Bilinear attention of decoder vector(s) over encoder states.

    ``dec_hidden`` is (H,) or (K, H); ``enc_states`` is (S, H).
    """
    dec = np.atleast_2d(dec_hidden)
    ctx, weights, _ = nc.attention_arrays(dec, enc_states, w, None)
    if np.ndim(dec_hidden) == 1:
        return ctx[0], weights[0]
    return ctx, weights


def decode_step(model, state, prev_ids, enc_states):
    """Advance the decoder one position for a batch of K hypotheses.

    ``prev_ids`` (K,) and a state with (K, H) arrays; ``enc_states`` (S, H) is
    shared by all hypotheses. Returns ``(logits (K, V), new_state)``.
    """
    ids = _check_ids(model, prev_ids).reshape(-1)
    P = model.params
    kern = nc.kernels
    y = P["tgt_emb"].data[ids]
    ones = np.ones((1, ids.size), dtype=np.uint8)
    hs, cs = [], []
    for layer in range(model.cfg.dec_depth):
        xw = (y @ P[f"dec.{layer}.w_x"].data + P[f"dec.{layer}.b"].data)[None]
        h, c, _, _ = kern.lstm_forward(xw, P[f"dec.{layer}.w_h"].data, state.h[layer], state.c[layer], ones, False)
        y = h[0]
        hs.append(h[0])
        cs.append(c[0])
    ctx, _ = attend(y, enc_states, P["attn.w"].data)
    logits = np.concatenate([y, ctx], axis=-1) @ P["out.w"].data + P["out.b"].data
    return logits, DecoderState(tuple(hs), tuple(cs), ctx)
