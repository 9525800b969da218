"""Embedding composition: positions, utterances, contexts, profiles."""

import math

import numpy as np
import pytest

from bpdg import corpus as C
from bpdg import embedding as E
from bpdg import tensor as T
from bpdg.errors import CapacityError, ConfigError


@pytest.fixture
def tables():
    rng = np.random.default_rng(0)
    return E.EmbeddingTables.create(rng, vocab_size=12, n_areas=3, n_interests=4, width=8)


@pytest.fixture
def profile():
    return C.Profile(gender=1, area=2, interests=(0, 3))


class TestPositionEncoding:
    def test_row_zero(self):
        pe = E.position_encoding(3, 6)
        np.testing.assert_array_equal(pe[0, 0::2], 0.0)
        np.testing.assert_array_equal(pe[0, 1::2], 1.0)

    def test_analytic_entry(self):
        pe = E.position_encoding(2, 4)
        assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)
        assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-12)

    def test_bounded(self):
        pe = E.position_encoding(50, 16)
        assert np.all(np.abs(pe) <= 1.0)

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            E.position_encoding(4, 7)

    def test_pure_function(self):
        np.testing.assert_array_equal(E.position_encoding(9, 8), E.position_encoding(9, 8))


class TestEmbedUtterance:
    def test_zeroed_persona_tables_reduce_to_token_plus_position(self, tables, profile):
        rng = np.random.default_rng(1)
        zeroed = E.EmbeddingTables(
            tables.token,
            T.parameter(np.zeros(tables.gender.shape)),
            T.parameter(np.zeros(tables.area.shape)),
            T.parameter(np.zeros(tables.interest.shape)),
        )
        ids = [5, 6, 7]
        full = E.embed_utterance(ids, profile, zeroed, n=4)
        bare = E.embed_utterance(ids, profile, tables, n=4, add_persona=False)
        np.testing.assert_allclose(full.matrix.values, bare.matrix.values, atol=1e-15)

    def test_ablated_matches_zeroed_tables(self, tables, profile):
        ids = [5, 6]
        ablated = E.embed_utterance(ids, profile, tables, n=4, add_persona=False)
        expected = tables.token.values[[5, 6, C.PAD, C.PAD]] + E.position_encoding(4, 8)
        np.testing.assert_allclose(ablated.matrix.values, expected, atol=1e-15)

    def test_truncation_keeps_prefix(self, tables, profile):
        ids = list(range(10))
        seq = E.embed_utterance(ids, profile, tables, n=4)
        assert seq.matrix.shape == (4, 8)
        np.testing.assert_array_equal(seq.token_ids, [0, 1, 2, 3])
        assert seq.mask.all()

    def test_single_interest_average_is_that_row(self, tables):
        p1 = C.Profile(gender=0, area=0, interests=(2,))
        seq = E.embed_utterance([5], p1, tables, n=1)
        expected = (
            tables.token.values[5]
            + tables.gender.values[0]
            + tables.area.values[0]
            + tables.interest.values[2]
            + E.position_encoding(1, 8)[0]
        )
        np.testing.assert_allclose(seq.matrix.values[0], expected, atol=1e-15)

    def test_interest_average_uses_first_three(self, tables):
        p = C.Profile(gender=0, area=0, interests=(0, 1, 2, 3))
        seq = E.embed_utterance([5], p, tables, n=1)
        mean3 = tables.interest.values[[0, 1, 2]].mean(axis=0)
        expected = (
            tables.token.values[5]
            + tables.gender.values[0]
            + tables.area.values[0]
            + mean3
            + E.position_encoding(1, 8)[0]
        )
        np.testing.assert_allclose(seq.matrix.values[0], expected, atol=1e-15)

    def test_pad_mask_marks_padding(self, tables, profile):
        seq = E.embed_utterance([5], profile, tables, n=3)
        np.testing.assert_array_equal(seq.mask, [True, False, False])
        np.testing.assert_array_equal(seq.token_ids[1:], C.PAD)


class TestBuildContext:
    def test_two_segments_one_separator(self, tables, profile):
        turns = [(C.USER, [5, 6]), (C.USER, [7])]
        seq = E.build_context(turns, profile, profile, tables, n=3, l_max=4, window=32)
        assert seq.matrix.shape[0] == 2 * 3 + 1
        assert seq.token_ids[3] == C.SEP

    def test_lmax_zero_keeps_only_current(self, tables, profile):
        turns = [(C.USER, [5]), (C.ROBOT, [6]), (C.USER, [7])]
        seq = E.build_context(turns, profile, profile, tables, n=3, l_max=0, window=32)
        assert seq.matrix.shape[0] == 3
        assert seq.token_ids[0] == 7

    def test_row_arithmetic_three_turns(self, tables, profile):
        turns = [(C.USER, [5]), (C.ROBOT, [6]), (C.USER, [7])]
        seq = E.build_context(turns, profile, profile, tables, n=4, l_max=4, window=64)
        assert seq.matrix.shape[0] == 3 * 4 + 2
        assert len(seq.segments) == 3

    def test_capacity_error(self, tables, profile):
        with pytest.raises(CapacityError):
            E.build_context([(C.USER, [5])], profile, profile, tables, n=40, l_max=2, window=32)

    def test_speaker_profiles_applied(self, tables):
        user = C.Profile(gender=0, area=0, interests=(0,))
        robot = C.Profile(gender=1, area=1, interests=(1,))
        turns = [(C.USER, [5]), (C.ROBOT, [5]), (C.USER, [5])]
        seq = E.build_context(turns, user, robot, tables, n=1, l_max=4, window=16)
        # same token, different personas: user rows equal each other, differ from robot row
        u0, r0, u1 = seq.matrix.values[0], seq.matrix.values[2], seq.matrix.values[4]
        assert not np.allclose(u0, r0)
        # positions differ between the two user rows; strip them before comparing
        pe = E.position_encoding(5, 8)
        np.testing.assert_allclose(u0 - pe[0], u1 - pe[4], atol=1e-15)


class TestEmbedProfile:
    @staticmethod
    def setup_vocab_tables(profiles):
        attrs = C.AttributeTables(("city00", "city01", "city02"), ("hobby00", "hobby01", "hobby02", "hobby03"))
        d = C.Dialogue(
            "d", profiles[0], profiles[1], (C.Utterance(C.USER, "hello"), C.Utterance(C.ROBOT, "hi"))
        )
        vocab = C.build_vocab([d], attrs)
        tables = E.EmbeddingTables.create(np.random.default_rng(2), vocab.size, 3, 4, width=8)
        return attrs, vocab, tables

    def test_layout_three_attributes_two_commas(self, profile):
        attrs, vocab, tables = self.setup_vocab_tables((profile, profile))
        seq = E.embed_profile(profile, tables, vocab, attrs)
        toks = C.profile_tokens(profile, attrs)
        assert toks.count(",") == 2
        assert seq.matrix.shape[0] == len(toks)
        assert seq.mask.all()

    def test_deterministic(self, profile):
        attrs, vocab, tables = self.setup_vocab_tables((profile, profile))
        a = E.embed_profile(profile, tables, vocab, attrs)
        b = E.embed_profile(profile, tables, vocab, attrs)
        np.testing.assert_array_equal(a.matrix.values, b.matrix.values)

    def test_gender_swap_flips_only_gender_value_row(self):
        p0 = C.Profile(gender=0, area=1, interests=(0,))
        p1 = C.Profile(gender=1, area=1, interests=(0,))
        attrs, vocab, tables = self.setup_vocab_tables((p0, p1))
        a = E.embed_profile(p0, tables, vocab, attrs).matrix.values
        b = E.embed_profile(p1, tables, vocab, attrs).matrix.values
        diff_rows = np.flatnonzero(np.abs(a - b).sum(axis=1) > 0)
        assert list(diff_rows) == [1]  # the gender value position
