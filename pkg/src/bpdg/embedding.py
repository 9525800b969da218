"""Persona-composed input embeddings for contexts, profiles, and prefixes.

Every utterance row is the token-wise sum of its token embedding, the
speaker's gender/area/interest embeddings (broadcast to all positions), and
a sinusoidal position encoding. Contexts concatenate per-utterance blocks
with separator rows; position indices run across the whole sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import PAD, SEP, USER, profile_tokens
from .errors import CapacityError, ConfigError

INIT_SCALE = 0.02


@dataclass
class EmbeddingTables:
    """Token, gender, area and interest embedding tables of equal width."""

    token: T.Tensor
    gender: T.Tensor
    area: T.Tensor
    interest: T.Tensor

    @property
    def width(self):
        return self.token.shape[1]

    @staticmethod
    def create(rng, vocab_size, n_areas, n_interests, width):
        def table(rows):
            return T.parameter(rng.normal(0.0, INIT_SCALE, size=(rows, width)))

        return EmbeddingTables(table(vocab_size), table(2), table(n_areas), table(n_interests))


@dataclass
class EmbeddedSequence:
    """An embedded [L, d] block plus the ids, pad mask and utterance spans."""

    matrix: T.Tensor
    token_ids: np.ndarray
    mask: np.ndarray
    segments: list[tuple[int, int]]

    @property
    def length(self):
        return self.matrix.shape[0]


def position_encoding(length, width):
    """Sinusoidal table: (i, 2k) -> sin(i / 10000^(2k/d)), (i, 2k+1) -> cos(same)."""
    if width % 2 != 0:
        raise ConfigError(f"position encoding width must be even, got {width}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    k2 = np.arange(0, width, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, k2 / width)
    out = np.zeros((length, width))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def _interest_embedding(profile, tables):
    # average of the first three interest embeddings (extra interests ignored)
    rows = T.gather_rows(tables.interest, list(profile.interests[:3]))
    return T.mean_rows(rows)


def embed_utterance(token_ids, profile, tables, n, pos_offset=0, add_persona=True):
    """Pad/truncate to n rows; each row is token + persona + position."""
    ids = np.full(n, PAD, dtype=np.intp)
    kept = list(token_ids[:n])
    ids[: len(kept)] = kept
    mask = np.zeros(n, dtype=bool)
    mask[: len(kept)] = True

    x = T.gather_rows(tables.token, ids)
    if add_persona:
        g = T.gather_rows(tables.gender, [profile.gender])
        a = T.gather_rows(tables.area, [profile.area])
        t = _interest_embedding(profile, tables)
        x = T.add(T.add(T.add(x, g), a), t)
    pos = T.constant(position_encoding(pos_offset + n, tables.width)[pos_offset:])
    x = T.add(x, pos)
    return EmbeddedSequence(x, ids, mask, [(0, n)])


def _sep_row(tables, pos_offset):
    row = T.gather_rows(tables.token, [SEP])
    pos = T.constant(position_encoding(pos_offset + 1, tables.width)[pos_offset:])
    return T.add(row, pos)


def build_context(turns, user_profile, robot_profile, tables, n, l_max, window, add_persona=True):
    """Embed the dialogue context: recent history plus the current user input.

    ``turns`` is the (speaker, token_ids) list ending with the current user
    input; only the most recent ``l_max`` history turns are kept. Utterance
    blocks are joined by separator rows and positions continue across the
    whole sequence.
    """
    if n > window:
        raise CapacityError(f"per-utterance length {n} exceeds context window {window}")
    if not turns:
        raise CapacityError("context needs at least the current input turn")
    history, current = list(turns[:-1]), turns[-1]
    if l_max < len(history):
        history = history[len(history) - l_max :] if l_max > 0 else []
    kept = history + [current]

    total = len(kept) * n + (len(kept) - 1)
    if total > window:
        raise CapacityError(f"context of {total} rows exceeds window {window}")

    parts, ids, mask, segments = [], [], [], []
    offset = 0
    for i, (speaker, token_ids) in enumerate(kept):
        if i > 0:
            parts.append(_sep_row(tables, offset))
            ids.append(np.array([SEP], dtype=np.intp))
            mask.append(np.array([True]))
            offset += 1
        profile = user_profile if speaker == USER else robot_profile
        seq = embed_utterance(token_ids, profile, tables, n, pos_offset=offset, add_persona=add_persona)
        segments.append((offset, offset + n))
        parts.append(seq.matrix)
        ids.append(seq.token_ids)
        mask.append(seq.mask)
        offset += n

    return EmbeddedSequence(
        T.concat_rows(parts), np.concatenate(ids), np.concatenate(mask), segments
    )


def embed_profile(profile, tables, vocab, attrs):
    """Key/value/comma token embeddings plus positions; no persona addition."""
    toks = profile_tokens(profile, attrs)
    ids = np.array([vocab.id(t) for t in toks], dtype=np.intp)
    x = T.gather_rows(tables.token, ids)
    x = T.add(x, T.constant(position_encoding(len(ids), tables.width)))
    return EmbeddedSequence(x, ids, np.ones(len(ids), dtype=bool), [(0, len(ids))])


def embed_prefix(token_ids, tables):
    """Token + position embedding of a decoder prefix (no persona rows)."""
    ids = np.asarray(token_ids, dtype=np.intp)
    x = T.gather_rows(tables.token, ids)
    x = T.add(x, T.constant(position_encoding(len(ids), tables.width)))
    return EmbeddedSequence(x, ids, np.ones(len(ids), dtype=bool), [(0, len(ids))])
