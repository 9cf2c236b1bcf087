"""Miniature post-norm transformer encoder.

Per token: learned token + position embeddings, then n_layers blocks of
multi-head scaled dot-product self-attention and a relu FFN, each with
residual + layer norm.  All layer states are kept so heads can attend
over depth.  Pad positions are excluded as attention keys but flow
through as queries; their rows are garbage and callers ignore them.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .corpus import PAD_ID
from .tensor import (
    MASK_LOGIT, Tensor, add, add_rowvec, concat_cols, dropout, gather_rows,
    matmul, mul_rowvec, relu, row_norm, scale, slice_cols, softmax, transpose,
)

HEAD_TYPES = ("final", "avgl", "mhmla")
INIT_STD = 0.02


@dataclass
class ModelConfig:
    """Architecture knobs.  key_dim defaults to hidden // layer_attn_heads."""
    n_layers: int = 4
    hidden: int = 64
    self_attn_heads: int = 4
    ffn_dim: int = 128
    layer_attn_heads: int = 4
    key_dim: int | None = None
    vocab_size: int = 4
    max_len: int = 32
    n_classes: int = 2
    dropout: float = 0.3
    attn_dropout: float = 0.3
    head_type: str = "mhmla"

    def __post_init__(self):
        if self.key_dim is None:
            self.key_dim = self.hidden // self.layer_attn_heads
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.hidden < 1 or self.ffn_dim < 1 or self.key_dim < 1:
            raise ValueError("hidden, ffn_dim and key_dim must be positive")
        if self.hidden % self.self_attn_heads != 0:
            raise ValueError(
                f"hidden ({self.hidden}) not divisible by self_attn_heads "
                f"({self.self_attn_heads})")
        if self.hidden % self.layer_attn_heads != 0:
            raise ValueError(
                f"hidden ({self.hidden}) not divisible by layer_attn_heads "
                f"({self.layer_attn_heads})")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the 4 reserved ids")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        for name in ("dropout", "attn_dropout"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {r}")
        if self.head_type not in HEAD_TYPES:
            raise ValueError(
                f"head_type must be one of {HEAD_TYPES}, got {self.head_type!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class LayerParams:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class EncoderParams:
    token_embedding: Tensor
    position_embedding: Tensor
    layers: list[LayerParams] = field(default_factory=list)

    def named(self):
        yield "embed.token", self.token_embedding
        yield "embed.position", self.position_embedding
        for i, lp in enumerate(self.layers):
            base = f"enc.{i:02d}"
            yield f"{base}.attn.w_q", lp.w_q
            yield f"{base}.attn.b_q", lp.b_q
            yield f"{base}.attn.w_k", lp.w_k
            yield f"{base}.attn.b_k", lp.b_k
            yield f"{base}.attn.w_v", lp.w_v
            yield f"{base}.attn.b_v", lp.b_v
            yield f"{base}.attn.w_o", lp.w_o
            yield f"{base}.attn.b_o", lp.b_o
            yield f"{base}.ln1.gain", lp.ln1_gain
            yield f"{base}.ln1.bias", lp.ln1_bias
            yield f"{base}.ffn.w1", lp.w_ff1
            yield f"{base}.ffn.b1", lp.b_ff1
            yield f"{base}.ffn.w2", lp.w_ff2
            yield f"{base}.ffn.b2", lp.b_ff2
            yield f"{base}.ln2.gain", lp.ln2_gain
            yield f"{base}.ln2.bias", lp.ln2_bias


def _weight(rng: np.random.Generator, *shape: int, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_encoder_params(config: ModelConfig, rng: np.random.Generator,
                        init_std: float = INIT_STD) -> EncoderParams:
    """Weights N(0, init_std), biases 0, layer-norm gain 1.  Training
    keeps the default; gradient checks pass a larger std so every path
    carries a gradient comfortably above finite-difference noise."""
    h, f = config.hidden, config.ffn_dim
    layers = [
        LayerParams(
            w_q=_weight(rng, h, h, std=init_std), b_q=_zeros(h),
            w_k=_weight(rng, h, h, std=init_std), b_k=_zeros(h),
            w_v=_weight(rng, h, h, std=init_std), b_v=_zeros(h),
            w_o=_weight(rng, h, h, std=init_std), b_o=_zeros(h),
            ln1_gain=_ones(h), ln1_bias=_zeros(h),
            w_ff1=_weight(rng, h, f, std=init_std), b_ff1=_zeros(f),
            w_ff2=_weight(rng, f, h, std=init_std), b_ff2=_zeros(h),
            ln2_gain=_ones(h), ln2_bias=_zeros(h),
        )
        for _ in range(config.n_layers)
    ]
    return EncoderParams(
        token_embedding=_weight(rng, config.vocab_size, h, std=init_std),
        position_embedding=_weight(rng, config.max_len, h, std=init_std),
        layers=layers,
    )


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return add_rowvec(mul_rowvec(row_norm(x), gain), bias)


def _validate_ids(token_ids: np.ndarray, config: ModelConfig) -> None:
    if token_ids.ndim != 1 or token_ids.size == 0:
        raise ValueError("token_ids must be a non-empty 1-D sequence")
    if token_ids.size > config.max_len:
        raise ValueError(
            f"sequence of {token_ids.size} tokens exceeds max_len "
            f"{config.max_len}; truncate before encoding")
    if token_ids.min() < 0 or token_ids.max() >= config.vocab_size:
        raise ValueError(
            f"token id out of range [0, {config.vocab_size}): "
            f"{token_ids.min()}..{token_ids.max()}")


def _embed_rows(ids: np.ndarray, positions: np.ndarray, params: EncoderParams,
                config: ModelConfig, train_mode: bool,
                rng: np.random.Generator | None) -> Tensor:
    h0 = add(gather_rows(params.token_embedding, ids),
             gather_rows(params.position_embedding, positions))
    if train_mode and config.dropout > 0.0:
        h0 = dropout(h0, config.dropout, rng)
    return h0


def embed_input(token_ids, params: EncoderParams, config: ModelConfig,
                train_mode: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Token + position lookup for one sentence: rows h0[n]."""
    ids = np.asarray(token_ids, dtype=np.int64)
    _validate_ids(ids, config)
    return _embed_rows(ids, np.arange(ids.size), params, config, train_mode, rng)


def _attention_bias(allowed: np.ndarray) -> Tensor:
    """Additive score matrix: 0 where key is visible, MASK_LOGIT where not.
    exp() of masked entries underflows to exactly 0, so masked keys get
    exactly zero weight and every stored value stays finite."""
    return Tensor(np.where(allowed, 0.0, MASK_LOGIT))


def transformer_block(h_prev: Tensor, layer_params: LayerParams,
                      config: ModelConfig, mask,
                      train_mode: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """One block over a single sentence.  mask[k] False excludes token k
    as an attention key (pads); queries are never excluded."""
    mask = np.asarray(mask, dtype=bool)
    n = h_prev.shape[0]
    if mask.shape != (n,):
        raise ValueError(f"mask shape {mask.shape} does not match {n} tokens")
    bias = _attention_bias(np.broadcast_to(mask, (n, n)))
    return _block(h_prev, layer_params, config, bias, train_mode, rng)


def _block(h: Tensor, lp: LayerParams, config: ModelConfig, bias: Tensor,
           train_mode: bool, rng: np.random.Generator | None) -> Tensor:
    a_heads = config.self_attn_heads
    dh = config.hidden // a_heads
    inv_sqrt = 1.0 / math.sqrt(dh)

    q = add_rowvec(matmul(h, lp.w_q), lp.b_q)
    k = add_rowvec(matmul(h, lp.w_k), lp.b_k)
    v = add_rowvec(matmul(h, lp.w_v), lp.b_v)
    per_head = []
    for a in range(a_heads):
        lo, hi = a * dh, (a + 1) * dh
        scores = scale(matmul(slice_cols(q, lo, hi),
                              transpose(slice_cols(k, lo, hi))), inv_sqrt)
        probs = softmax(add(scores, bias), axis=1)
        if train_mode and config.attn_dropout > 0.0:
            probs = dropout(probs, config.attn_dropout, rng)
        per_head.append(matmul(probs, slice_cols(v, lo, hi)))
    attn_out = add_rowvec(matmul(concat_cols(per_head), lp.w_o), lp.b_o)
    if train_mode and config.dropout > 0.0:
        attn_out = dropout(attn_out, config.dropout, rng)
    h = layer_norm(add(h, attn_out), lp.ln1_gain, lp.ln1_bias)

    ff = add_rowvec(matmul(h, lp.w_ff1), lp.b_ff1)
    ff = add_rowvec(matmul(relu(ff), lp.w_ff2), lp.b_ff2)
    if train_mode and config.dropout > 0.0:
        ff = dropout(ff, config.dropout, rng)
    return layer_norm(add(h, ff), lp.ln2_gain, lp.ln2_bias)


def encode(token_ids, params: EncoderParams, config: ModelConfig,
           train_mode: bool = False,
           rng: np.random.Generator | None = None) -> list[Tensor]:
    """All layer states of one sentence: [h0, h1, ..., hL], each
    [n_tokens x hidden].  Positions holding PAD_ID are masked out as
    attention keys automatically."""
    ids = np.asarray(token_ids, dtype=np.int64)
    _validate_ids(ids, config)
    states, _ = _encode_flat(ids, np.arange(ids.size), ids != PAD_ID,
                             np.zeros(ids.size, dtype=np.int64),
                             params, config, train_mode, rng)
    return states


def encode_batch(sentences: list, params: EncoderParams, config: ModelConfig,
                 train_mode: bool = False,
                 rng: np.random.Generator | None = None):
    """Forward several sentences as one matrix.

    Each sentence is padded with PAD_ID to the longest length in the
    batch and the rows are stacked:  row b * T + n is token n of
    sentence b.  The attention bias is block-diagonal, so a token only
    sees real keys of its own sentence and the result on real rows
    equals the per-sentence forward.

    Returns (states, real): L+1 tensors of shape [B*T x hidden] and a
    bool vector marking real rows.
    """
    if not sentences:
        raise ValueError("encode_batch needs at least one sentence")
    t_max = max(len(s) for s in sentences)
    if t_max > config.max_len:
        raise ValueError(
            f"sequence of {t_max} tokens exceeds max_len {config.max_len}; "
            f"truncate before encoding")
    ids = np.full((len(sentences), t_max), PAD_ID, dtype=np.int64)
    for b, s in enumerate(sentences):
        arr = np.asarray(s, dtype=np.int64)
        if arr.size == 0:
            raise ValueError(f"sentence {b} is empty")
        ids[b, :arr.size] = arr
    flat = ids.reshape(-1)
    if flat.min() < 0 or flat.max() >= config.vocab_size:
        raise ValueError(
            f"token id out of range [0, {config.vocab_size}): "
            f"{flat.min()}..{flat.max()}")
    positions = np.tile(np.arange(t_max), len(sentences))
    sent_of = np.repeat(np.arange(len(sentences)), t_max)
    real = flat != PAD_ID
    states, real_out = _encode_flat(flat, positions, real, sent_of,
                                    params, config, train_mode, rng)
    return states, real_out


def _encode_flat(ids, positions, real, sent_of, params, config,
                 train_mode, rng):
    h = _embed_rows(ids, positions, params, config, train_mode, rng)
    allowed = (sent_of[:, None] == sent_of[None, :]) & real[None, :]
    bias = _attention_bias(allowed)
    states = [h]
    for lp in params.layers:
        h = _block(h, lp, config, bias, train_mode, rng)
        states.append(h)
    return states, real
