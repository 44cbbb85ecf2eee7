"""Conversational encoder, response decoder, and the intent classifier head.

The encoder is a bidirectional transformer whose position-0 ([CLS]) hidden
state passes through a linear+tanh pooling head to give the utterance or
response embedding. The decoder reuses the encoder's block weights by value,
adds causal masking and per-block cross-attention over the encoder's
per-position hidden states, and puts a language-model head on top.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import Parameter

MASK_BIAS = -1e9  # additive logit bias for disallowed attention edges
INIT_STD = 0.1  # larger than the 768-dim convention; desk-scale models train from scratch


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ffn: int = 256
    dropout_p: float = 0.1
    max_positions: int = 512
    pooled_dim: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.vocab_size < 1 or self.max_positions < 1:
            raise ValueError("vocab_size and max_positions must be positive")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "d_ffn": self.d_ffn,
            "dropout_p": self.dropout_p,
            "max_positions": self.max_positions,
            "pooled_dim": self.pooled_dim,
        }


def _normal(rng: np.random.Generator, shape, std=None):
    return rng.normal(0.0, INIT_STD if std is None else std, size=shape)


class Linear:
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = Parameter(f"{name}.w", _normal(rng, (d_in, d_out)))
        self.b = Parameter(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w.tensor) + self.b.tensor

    def parameters(self):
        return [self.w, self.b]


class LayerNorm:
    def __init__(self, name: str, dim: int):
        self.gamma = Parameter(f"{name}.gamma", np.ones(dim))
        self.beta = Parameter(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma.tensor, self.beta.tensor)

    def parameters(self):
        return [self.gamma, self.beta]


class MultiHeadAttention:
    """Scaled dot-product attention over full query/key projections."""

    def __init__(self, name: str, d_model: int, n_heads: int, rng: np.random.Generator):
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(f"{name}.wq", d_model, d_model, rng)
        self.wk = Linear(f"{name}.wk", d_model, d_model, rng)
        self.wv = Linear(f"{name}.wv", d_model, d_model, rng)
        self.wo = Linear(f"{name}.wo", d_model, d_model, rng)

    def __call__(self, x_q: Tensor, x_kv: Tensor, bias, dropout_p, rng, training) -> Tensor:
        B, Tq, dm = x_q.shape
        Tk = x_kv.shape[1]
        h, dh = self.n_heads, self.d_head
        q = self.wq(x_q).reshape(B, Tq, h, dh).transpose(0, 2, 1, 3)
        k = self.wk(x_kv).reshape(B, Tk, h, dh).transpose(0, 2, 1, 3)
        v = self.wv(x_kv).reshape(B, Tk, h, dh).transpose(0, 2, 1, 3)
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        if bias is not None:
            scores = scores + bias
        probs = ad.softmax(scores, axis=-1)
        probs = ad.dropout(probs, dropout_p, rng, training)
        ctx = ad.matmul(probs, v).transpose(0, 2, 1, 3).reshape(B, Tq, dm)
        return self.wo(ctx)

    def parameters(self):
        return self.wq.parameters() + self.wk.parameters() + self.wv.parameters() + self.wo.parameters()


class FeedForward:
    def __init__(self, name: str, d_model: int, d_ffn: int, rng: np.random.Generator):
        self.lin1 = Linear(f"{name}.lin1", d_model, d_ffn, rng)
        self.lin2 = Linear(f"{name}.lin2", d_ffn, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.gelu(self.lin1(x)))

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()


class EncoderBlock:
    """Post-norm transformer block: attention and FFN sublayers with residuals."""

    def __init__(self, name: str, cfg: EncoderConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(f"{name}.attn", cfg.d_model, cfg.n_heads, rng)
        self.ln1 = LayerNorm(f"{name}.ln1", cfg.d_model)
        self.ffn = FeedForward(f"{name}.ffn", cfg.d_model, cfg.d_ffn, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", cfg.d_model)

    def __call__(self, x: Tensor, bias, dropout_p, rng, training) -> Tensor:
        a = self.attn(x, x, bias, dropout_p, rng, training)
        x = self.ln1(x + ad.dropout(a, dropout_p, rng, training))
        f = self.ffn(x)
        return self.ln2(x + ad.dropout(f, dropout_p, rng, training))

    def parameters(self):
        return (
            self.attn.parameters()
            + self.ln1.parameters()
            + self.ffn.parameters()
            + self.ln2.parameters()
        )


def pad_batch(seqs, pad_id: int = 0, pad_to: int | None = None):
    """Right-pad integer sequences to a common length; returns (ids, mask)."""
    lengths = [len(s) for s in seqs]
    T = max(lengths) if pad_to is None else pad_to
    if pad_to is not None and pad_to < max(lengths):
        raise ValueError(f"pad_to {pad_to} shorter than longest sequence {max(lengths)}")
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = np.asarray(s, dtype=np.int64)
        mask[i, : len(s)] = 1.0
    return ids, mask


def _key_bias(mask: np.ndarray, dtype) -> np.ndarray:
    # (B, T) validity mask -> additive (B, 1, 1, T) bias over key positions
    return ((1.0 - mask) * MASK_BIAS)[:, None, None, :].astype(dtype)


def _causal_bias(T: int, dtype) -> np.ndarray:
    bias = np.triu(np.full((T, T), MASK_BIAS), k=1)
    return bias[None, None, :, :].astype(dtype)


class ConversationalEncoder:
    """Shared transformer encoder + linear/tanh pooling over the [CLS] state."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.tok_emb = Parameter("tok_emb", _normal(rng, (cfg.vocab_size, cfg.d_model)))
        self.pos_emb = Parameter("pos_emb", _normal(rng, (cfg.max_positions, cfg.d_model)))
        self.emb_ln = LayerNorm("emb_ln", cfg.d_model)
        self.blocks = [EncoderBlock(f"layer{i}", cfg, rng) for i in range(cfg.n_layers)]
        self.pool = Linear("pool", cfg.d_model, cfg.pooled_dim, rng)

    def parameters(self):
        return self.backbone_parameters() + self.pool.parameters()

    def backbone_parameters(self):
        """Everything except the pooling head; the per-position hidden-state
        path that response generation trains."""
        params = [self.tok_emb, self.pos_emb] + self.emb_ln.parameters()
        for blk in self.blocks:
            params.extend(blk.parameters())
        return params

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def _embed(self, ids: np.ndarray, dropout_p, rng, training) -> Tensor:
        T = ids.shape[1]
        if T > self.cfg.max_positions:
            raise ValueError(f"sequence length {T} exceeds max_positions {self.cfg.max_positions}")
        x = ad.embedding(self.tok_emb.tensor, ids) + ad.embedding(
            self.pos_emb.tensor, np.arange(T)
        )
        x = self.emb_ln(x)
        return ad.dropout(x, dropout_p, rng, training)

    def forward_hidden(self, seqs, training=False, rng=None, pad_to=None, dropout_p=None):
        """Per-position hidden states for a batch of id sequences.

        Returns (hidden (B, T, d_model) tensor, validity mask (B, T) array).
        Attention never reads PAD positions. ``dropout_p`` overrides the
        construction-time rate; evaluation mode always disables dropout.
        """
        p = (self.cfg.dropout_p if dropout_p is None else dropout_p) if training else 0.0
        ids, mask = pad_batch(seqs, pad_id=0, pad_to=pad_to)
        bias = _key_bias(mask, self.tok_emb.data.dtype)
        x = self._embed(ids, p, rng, training)
        for blk in self.blocks:
            x = blk(x, bias, p, rng, training)
        return x, mask

    def pool_cls(self, hidden: Tensor) -> Tensor:
        """tanh(W h_cls + b): components always lie in (-1, 1)."""
        return ad.tanh(self.pool(ad.token_at(hidden, 0)))

    def encode_batch(self, seqs, training=False, rng=None, pad_to=None, dropout_p=None) -> Tensor:
        hidden, _ = self.forward_hidden(
            seqs, training=training, rng=rng, pad_to=pad_to, dropout_p=dropout_p
        )
        return self.pool_cls(hidden)

    def encode(self, ids) -> Tensor:
        """Deterministic eval-mode embedding of a single id sequence."""
        if len(ids) == 0:
            raise ValueError("cannot encode an empty id sequence")
        return self.encode_batch([list(ids)]).reshape(self.cfg.pooled_dim)

    def encode_pair(self, u_ids, r_ids) -> tuple[Tensor, Tensor]:
        """Embed an utterance and a response with the same shared weights."""
        return self.encode(u_ids), self.encode(r_ids)


class DecoderBlock:
    """Causal self-attention, cross-attention over encoder states, FFN."""

    def __init__(self, name: str, cfg: EncoderConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(f"{name}.attn", cfg.d_model, cfg.n_heads, rng)
        self.ln1 = LayerNorm(f"{name}.ln1", cfg.d_model)
        self.cross_attn = MultiHeadAttention(f"{name}.cross", cfg.d_model, cfg.n_heads, rng)
        self.ln_cross = LayerNorm(f"{name}.ln_cross", cfg.d_model)
        self.ffn = FeedForward(f"{name}.ffn", cfg.d_model, cfg.d_ffn, rng)
        self.ln2 = LayerNorm(f"{name}.ln2", cfg.d_model)

    def __call__(self, x, self_bias, enc_hidden, cross_bias, dropout_p, rng, training):
        a = self.self_attn(x, x, self_bias, dropout_p, rng, training)
        x = self.ln1(x + ad.dropout(a, dropout_p, rng, training))
        c = self.cross_attn(x, enc_hidden, cross_bias, dropout_p, rng, training)
        x = self.ln_cross(x + ad.dropout(c, dropout_p, rng, training))
        f = self.ffn(x)
        return self.ln2(x + ad.dropout(f, dropout_p, rng, training))

    def parameters(self):
        return (
            self.self_attn.parameters()
            + self.ln1.parameters()
            + self.cross_attn.parameters()
            + self.ln_cross.parameters()
            + self.ffn.parameters()
            + self.ln2.parameters()
        )


class ResponseDecoder:
    """Causal decoder with cross-attention and a language-model head."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, bos_id: int, eos_id: int):
        self.cfg = cfg
        self.bos_id = bos_id
        self.eos_id = eos_id
        self.tok_emb = Parameter("tok_emb", _normal(rng, (cfg.vocab_size, cfg.d_model)))
        self.pos_emb = Parameter("pos_emb", _normal(rng, (cfg.max_positions, cfg.d_model)))
        self.emb_ln = LayerNorm("emb_ln", cfg.d_model)
        self.blocks = [DecoderBlock(f"layer{i}", cfg, rng) for i in range(cfg.n_layers)]
        self.lm_head = Linear("lm_head", cfg.d_model, cfg.vocab_size, rng)

    def parameters(self):
        params = [self.tok_emb, self.pos_emb] + self.emb_ln.parameters()
        for blk in self.blocks:
            params.extend(blk.parameters())
        params.extend(self.lm_head.parameters())
        return params

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def forward_teacher_forced(self, enc_hidden, enc_mask, r_seqs, training=False, rng=None,
                               dropout_p=None):
        """Logits over next tokens for gold-prefix response sequences.

        Row t of the output depends only on response tokens <= t (causal
        mask) and on the non-PAD utterance states. Every sequence must
        start with [BOS].

        Returns (logits (B, T, vocab) tensor, response validity mask (B, T)).
        """
        for i, s in enumerate(r_seqs):
            if len(s) == 0 or int(s[0]) != self.bos_id:
                raise ValueError(f"response sequence {i} is missing the leading BOS token")
        p = (self.cfg.dropout_p if dropout_p is None else dropout_p) if training else 0.0
        ids, mask = pad_batch(r_seqs, pad_id=0)
        T = ids.shape[1]
        if T > self.cfg.max_positions:
            raise ValueError(f"sequence length {T} exceeds max_positions {self.cfg.max_positions}")
        dtype = self.tok_emb.data.dtype
        self_bias = _causal_bias(T, dtype) + _key_bias(mask, dtype)
        cross_bias = _key_bias(enc_mask, dtype)
        x = ad.embedding(self.tok_emb.tensor, ids) + ad.embedding(
            self.pos_emb.tensor, np.arange(T)
        )
        x = self.emb_ln(x)
        x = ad.dropout(x, p, rng, training)
        for blk in self.blocks:
            x = blk(x, self_bias, enc_hidden, cross_bias, p, rng, training)
        return self.lm_head(x), mask

    def generate(self, encoder: ConversationalEncoder, u_ids, max_t: int) -> list[int]:
        """Greedy decoding from [BOS] until [EOS] or max_t tokens; deterministic."""
        if max_t <= 0:
            return []
        enc_hidden, enc_mask = encoder.forward_hidden([list(u_ids)])
        seq = [self.bos_id]
        out: list[int] = []
        for _ in range(max_t):
            logits, _ = self.forward_teacher_forced(enc_hidden, enc_mask, [seq])
            nxt = int(np.argmax(logits.data[0, -1]))
            if nxt == self.eos_id:
                break
            out.append(nxt)
            seq.append(nxt)
        return out


def init_decoder_from_encoder(
    encoder: ConversationalEncoder,
    rng: np.random.Generator,
    bos_id: int = 4,
    eos_id: int = 5,
) -> ResponseDecoder:
    """Build a decoder whose self-attention/FFN/embedding weights are value
    copies of the encoder's; cross-attention and LM head are fresh.

    The copies are independent: training the decoder afterwards never
    mutates the encoder weights, and vice versa.
    """
    dec = ResponseDecoder(encoder.cfg, rng, bos_id=bos_id, eos_id=eos_id)
    dec.tok_emb.tensor.data = encoder.tok_emb.data.copy()
    dec.pos_emb.tensor.data = encoder.pos_emb.data.copy()
    dec.emb_ln.gamma.tensor.data = encoder.emb_ln.gamma.data.copy()
    dec.emb_ln.beta.tensor.data = encoder.emb_ln.beta.data.copy()
    for dblk, eblk in zip(dec.blocks, encoder.blocks):
        for dst, src in (
            (dblk.self_attn, eblk.attn),
            (dblk.ffn, eblk.ffn),
        ):
            for dp, sp in zip(dst.parameters(), src.parameters()):
                dp.tensor.data = sp.data.copy()
        for dln, eln in ((dblk.ln1, eblk.ln1), (dblk.ln2, eblk.ln2)):
            dln.gamma.tensor.data = eln.gamma.data.copy()
            dln.beta.tensor.data = eln.beta.data.copy()
    return dec


class IntentClassifier:
    """Two-layer MLP over pooled embeddings: linear, tanh, linear."""

    def __init__(self, pooled_dim: int, n_classes: int, rng: np.random.Generator):
        self.n_classes = n_classes
        self.lin1 = Linear("clf.lin1", pooled_dim, pooled_dim, rng)
        self.lin2 = Linear("clf.lin2", pooled_dim, n_classes, rng)

    def __call__(self, q: Tensor) -> Tensor:
        return self.lin2(ad.tanh(self.lin1(q)))

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]
