"""Shared-weight transformer stack and the tied output projection.

One parameter set serves every role: the same blocks encode the dialogue
context, both persona profiles and the shifted-right output prefix, and the
token table doubles as the logit projection. Blocks are pre-norm with causal
self-attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embedding import INIT_SCALE, EmbeddingTables
from .errors import CapacityError, ConfigError, ShapeMismatchError

MASK_FILL = -1e9


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    window: int = 256
    vocab_size: int = 0
    n_areas: int = 0
    n_interests: int = 0
    n: int = 64          # fixed per-utterance length
    l_max: int = 2       # history utterances kept in the context
    max_response_len: int = 16
    pooling: str = "mean"  # fusion-head pooling reducer: "mean" or "max"

    def __post_init__(self):
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.window < self.n:
            raise ConfigError(f"context window {self.window} smaller than utterance length {self.n}")
        if self.pooling not in ("mean", "max"):
            raise ConfigError(f"pooling must be 'mean' or 'max', got {self.pooling!r}")

    @staticmethod
    def toy(vocab_size, n_areas, n_interests, **overrides):
        """Desk-scale defaults: trains in minutes on a CPU."""
        kw = dict(
            layers=2, heads=4, d_model=64, d_ff=256, window=256,
            vocab_size=vocab_size, n_areas=n_areas, n_interests=n_interests,
            n=16, l_max=3, max_response_len=12,
        )
        kw.update(overrides)
        return ModelConfig(**kw)

    @staticmethod
    def full(vocab_size, n_areas, n_interests, **overrides):
        """Production-scale preset (12 blocks, width 768); not used in tests."""
        kw = dict(
            layers=12, heads=12, d_model=768, d_ff=3072, window=512,
            vocab_size=vocab_size, n_areas=n_areas, n_interests=n_interests,
            n=64, l_max=6, max_response_len=48,
        )
        kw.update(overrides)
        return ModelConfig(**kw)


@dataclass
class AttentionParams:
    wq: T.Tensor
    bq: T.Tensor
    wk: T.Tensor
    bk: T.Tensor
    wv: T.Tensor
    bv: T.Tensor
    wo: T.Tensor
    bo: T.Tensor

    @staticmethod
    def create(rng, d):
        def w():
            return T.parameter(rng.normal(0.0, INIT_SCALE, size=(d, d)))

        def b():
            return T.parameter(np.zeros(d))

        return AttentionParams(w(), b(), w(), b(), w(), b(), w(), b())

    def named(self, prefix):
        return [
            (f"{prefix}.wq", self.wq), (f"{prefix}.bq", self.bq),
            (f"{prefix}.wk", self.wk), (f"{prefix}.bk", self.bk),
            (f"{prefix}.wv", self.wv), (f"{prefix}.bv", self.bv),
            (f"{prefix}.wo", self.wo), (f"{prefix}.bo", self.bo),
        ]


@dataclass
class BlockParams:
    ln1_g: T.Tensor
    ln1_b: T.Tensor
    attn: AttentionParams
    ln2_g: T.Tensor
    ln2_b: T.Tensor
    w1: T.Tensor
    b1: T.Tensor
    w2: T.Tensor
    b2: T.Tensor

    @staticmethod
    def create(rng, d, d_ff):
        return BlockParams(
            T.parameter(np.ones(d)), T.parameter(np.zeros(d)),
            AttentionParams.create(rng, d),
            T.parameter(np.ones(d)), T.parameter(np.zeros(d)),
            T.parameter(rng.normal(0.0, INIT_SCALE, size=(d, d_ff))), T.parameter(np.zeros(d_ff)),
            T.parameter(rng.normal(0.0, INIT_SCALE, size=(d_ff, d))), T.parameter(np.zeros(d)),
        )

    def named(self, prefix):
        out = [(f"{prefix}.ln1_g", self.ln1_g), (f"{prefix}.ln1_b", self.ln1_b)]
        out += self.attn.named(f"{prefix}.attn")
        out += [
            (f"{prefix}.ln2_g", self.ln2_g), (f"{prefix}.ln2_b", self.ln2_b),
            (f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2),
        ]
        return out


@dataclass
class ModelParams:
    """Every trainable table and weight of the shared encoder/decoder.

    ``cross`` is the attention block the fusion stage uses for all four of
    its attention operations; the logit projection is tied to the token
    embedding table, so it has no weights of its own.
    """

    tables: EmbeddingTables
    blocks: list[BlockParams]
    final_ln_g: T.Tensor
    final_ln_b: T.Tensor
    cross: AttentionParams

    @staticmethod
    def create(rng, cfg):
        tables = EmbeddingTables.create(rng, cfg.vocab_size, cfg.n_areas, cfg.n_interests, cfg.d_model)
        blocks = [BlockParams.create(rng, cfg.d_model, cfg.d_ff) for _ in range(cfg.layers)]
        return ModelParams(
            tables,
            blocks,
            T.parameter(np.ones(cfg.d_model)),
            T.parameter(np.zeros(cfg.d_model)),
            AttentionParams.create(rng, cfg.d_model),
        )

    def named_parameters(self):
        """Fixed, documented ordering used by the optimizer and checkpoints."""
        out = [
            ("tables.token", self.tables.token),
            ("tables.gender", self.tables.gender),
            ("tables.area", self.tables.area),
            ("tables.interest", self.tables.interest),
        ]
        for i, blk in enumerate(self.blocks):
            out += blk.named(f"blocks.{i}")
        out += [("final_ln_g", self.final_ln_g), ("final_ln_b", self.final_ln_b)]
        out += self.cross.named("cross")
        return out


def multi_head_attention(q_in, k_in, v_in, key_mask, causal, heads, p):
    """Scaled dot-product attention with per-head 1/sqrt(d_head) scaling.

    ``key_mask`` removes pad keys; ``causal`` additionally forbids attending
    to future positions (requires equal query/key lengths).
    """
    d = q_in.shape[1]
    if k_in.shape[1] != d or v_in.shape[1] != d:
        raise ShapeMismatchError(f"attention widths differ: {q_in.shape}, {k_in.shape}, {v_in.shape}")
    lq, lk = q_in.shape[0], k_in.shape[0]
    key_mask = np.asarray(key_mask, dtype=bool)
    if key_mask.shape != (lk,):
        raise ShapeMismatchError(f"key mask {key_mask.shape} vs key length {lk}")
    if causal and lq != lk:
        raise ShapeMismatchError(f"causal attention needs square scores, got {lq}x{lk}")

    d_head = d // heads
    q = T.add(T.matmul(q_in, p.wq), p.bq)
    k = T.add(T.matmul(k_in, p.wk), p.bk)
    v = T.add(T.matmul(v_in, p.wv), p.bv)

    bias = np.where(key_mask[None, :], 0.0, MASK_FILL)
    bias = np.broadcast_to(bias, (lq, lk)).copy()
    if causal:
        bias += np.triu(np.full((lq, lk), MASK_FILL), k=1)
    bias_t = T.constant(bias)

    outs = []
    for h in range(heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = T.slice_cols(q, lo, hi)
        kh = T.slice_cols(k, lo, hi)
        vh = T.slice_cols(v, lo, hi)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(d_head))
        weights = T.softmax(T.add(scores, bias_t), axis=-1)
        outs.append(T.matmul(weights, vh))
    merged = T.concat_cols(outs) if heads > 1 else outs[0]
    return T.add(T.matmul(merged, p.wo), p.bo)


def encode(seq_matrix, mask, params, cfg):
    """Apply the block stack (causal self-attention + feed-forward, pre-norm).

    With zero layers this is the identity on the embedding.
    """
    if seq_matrix.shape[0] > cfg.window:
        raise CapacityError(f"sequence of {seq_matrix.shape[0]} rows exceeds window {cfg.window}")
    x = seq_matrix
    for blk in params.blocks:
        h = T.layer_norm(x, blk.ln1_g, blk.ln1_b)
        x = T.add(x, multi_head_attention(h, h, h, mask, True, cfg.heads, blk.attn))
        h = T.layer_norm(x, blk.ln2_g, blk.ln2_b)
        h = T.relu(T.add(T.matmul(h, blk.w1), blk.b1))
        x = T.add(x, T.add(T.matmul(h, blk.w2), blk.b2))
    return x


def final_norm(x, params):
    return T.layer_norm(x, params.final_ln_g, params.final_ln_b)


def project_logits(decoded, params):
    """Linear projection with weights tied to the token embedding table."""
    return T.matmul(decoded, T.transpose(params.tables.token))
