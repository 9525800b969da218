"""Corpus schema, tokenizer, labeling heuristic, and generator tests."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpdg import corpus as C
from bpdg.errors import ConfigError, DataError


@pytest.fixture
def tables():
    return C.AttributeTables(("city00", "city01", "city02"), ("hobby00", "hobby01", "hobby02", "hobby03"))


@pytest.fixture
def profiles():
    user = C.Profile(gender=0, area=0, interests=(0, 1))
    robot = C.Profile(gender=1, area=1, interests=(2,))
    return user, robot


def make_dialogue(tables, user, robot, texts):
    turns = tuple(
        C.Utterance(C.USER if i % 2 == 0 else C.ROBOT, t) for i, t in enumerate(texts)
    )
    return C.Dialogue("d0", user, robot, turns)


class TestSchema:
    def test_alternation_enforced(self, tables, profiles):
        user, robot = profiles
        with pytest.raises(DataError):
            C.Dialogue("x", user, robot, (C.Utterance(C.ROBOT, "hi"), C.Utterance(C.USER, "yo")))

    def test_final_turn_must_be_robot(self, profiles):
        user, robot = profiles
        with pytest.raises(DataError):
            C.Dialogue("x", user, robot, (C.Utterance(C.USER, "a"), C.Utterance(C.ROBOT, "b"), C.Utterance(C.USER, "c")))

    def test_two_turn_dialogue_reference(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["hello there", "hi friend"])
        assert d.reference.text == "hi friend"


class TestCorpusIO:
    def test_round_trip(self, tmp_path, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["hello city01", "i live in city01"])
        d = C.label_dialogue(d, tables)
        path = tmp_path / "c.jsonl"
        C.save_corpus(path, [d], tables)
        loaded = C.load_corpus(path, tables)
        assert loaded == [d]

    def test_empty_file(self, tmp_path, tables):
        path = tmp_path / "c.jsonl"
        path.write_text(C.CORPUS_HEADER + "\n")
        assert C.load_corpus(path, tables) == []

    def test_missing_header(self, tmp_path, tables):
        path = tmp_path / "c.jsonl"
        path.write_text("{}\n")
        with pytest.raises(DataError):
            C.load_corpus(path, tables)

    def test_missing_robot_profile_names_field_and_line(self, tmp_path, tables):
        rec = {
            "id": "x",
            "user_profile": {"gender": 0, "area": "city00", "interests": ["hobby00"]},
            "turns": [{"speaker": "user", "text": "a"}, {"speaker": "robot", "text": "b"}],
        }
        path = tmp_path / "c.jsonl"
        path.write_text(C.CORPUS_HEADER + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(DataError) as exc:
            C.load_corpus(path, tables)
        assert "robot_profile" in str(exc.value)
        assert "line 2" in str(exc.value)

    def test_malformed_json_reports_line(self, tmp_path, tables):
        path = tmp_path / "c.jsonl"
        path.write_text(C.CORPUS_HEADER + "\n{not json\n")
        with pytest.raises(DataError) as exc:
            C.load_corpus(path, tables)
        assert "line 2" in str(exc.value)

    def test_tables_round_trip(self, tmp_path, tables):
        path = tmp_path / "attributes.json"
        C.save_tables(path, tables)
        assert C.load_tables(path) == tables


class TestTokenizer:
    def test_empty(self):
        vocab = C.build_vocab([])
        assert C.tokenize("", vocab) == []

    def test_round_trip_in_vocab(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["hello world", "hello friend"])
        vocab = C.build_vocab([d], tables)
        ids = C.tokenize("hello world", vocab)
        assert ids == [vocab.id("hello"), vocab.id("world")]
        assert C.detokenize(ids, vocab) == "hello world"

    def test_oov_maps_to_unk(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["hello world", "hello friend"])
        vocab = C.build_vocab([d], tables)
        assert C.tokenize("zzz", vocab) == [C.UNK]

    @given(st.lists(st.sampled_from(["alpha", "beta", "gamma", "delta"]), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, words):
        text = " ".join(words)
        user = C.Profile(0, 0, (0,))
        robot = C.Profile(1, 1, (1,))
        tables = C.AttributeTables(("city00", "city01"), ("hobby00", "hobby01"))
        d = make_dialogue(tables, user, robot, [text, text])
        vocab = C.build_vocab([d], tables)
        assert C.detokenize(C.tokenize(text, vocab), vocab) == text


class TestBuildVocab:
    def test_frequency_split(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["a a", "b"])
        vocab = C.build_vocab([d], min_freq=1, rare_threshold=2)
        assert "a" in vocab.frequent
        assert "b" in vocab.rare

    def test_empty_corpus_specials_only(self):
        vocab = C.build_vocab([])
        assert vocab.id_to_token == list(C.SPECIAL_TOKENS)
        assert vocab.rare == set()

    def test_stable_ids(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["x y z", "z y x"])
        v1 = C.build_vocab([d], tables)
        v2 = C.build_vocab([d], tables)
        assert v1.token_to_id == v2.token_to_id

    def test_bijection(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["p q r s", "q r"])
        vocab = C.build_vocab([d], tables)
        for tok, idx in vocab.token_to_id.items():
            assert vocab.token(idx) == tok


class TestHeuristicLabel:
    def test_robot_area_only(self, tables, profiles):
        user, robot = profiles
        utt = C.Utterance(C.ROBOT, "i live in city01 now")
        assert C.heuristic_persona_label(utt, user, robot, tables) == C.LABEL_ROBOT

    def test_no_attributes(self, tables, profiles):
        user, robot = profiles
        utt = C.Utterance(C.ROBOT, "nothing to see here")
        assert C.heuristic_persona_label(utt, user, robot, tables) == C.LABEL_NONE

    def test_tie_goes_to_robot(self, tables, profiles):
        user, robot = profiles
        utt = C.Utterance(C.ROBOT, "hobby00 versus hobby02 tonight")
        assert C.heuristic_persona_label(utt, user, robot, tables) == C.LABEL_ROBOT

    def test_majority_side_wins(self, tables, profiles):
        user, robot = profiles
        utt = C.Utterance(C.ROBOT, "hobby00 hobby01 beat hobby02")
        assert C.heuristic_persona_label(utt, user, robot, tables) == C.LABEL_USER

    def test_pure_function(self, tables, profiles):
        user, robot = profiles
        utt = C.Utterance(C.USER, "city00 forever")
        first = C.heuristic_persona_label(utt, user, robot, tables)
        assert all(C.heuristic_persona_label(utt, user, robot, tables) == first for _ in range(5))

    def test_label_dialogue_idempotent(self, tables, profiles):
        user, robot = profiles
        d = make_dialogue(tables, user, robot, ["city00 is home", "you live in city00 right"])
        once = C.label_dialogue(d, tables)
        assert C.label_dialogue(once, tables) == once


class TestGenerator:
    def test_same_seed_identical(self, tmp_path):
        cfg = C.GeneratorConfig(n_dialogues=40)
        d1, t1 = C.generate_synthetic_corpus(cfg, seed=7)
        d2, t2 = C.generate_synthetic_corpus(cfg, seed=7)
        assert t1 == t2
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        C.save_corpus(p1, d1, t1)
        C.save_corpus(p2, d2, t2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_all_none_rates(self):
        cfg = C.GeneratorConfig(n_dialogues=30, rates=(0.0, 0.0, 1.0))
        dialogues, _ = C.generate_synthetic_corpus(cfg, seed=1)
        assert all(d.reference.persona_label == C.LABEL_NONE for d in dialogues)

    def test_empirical_mix_matches_rates(self):
        cfg = C.GeneratorConfig(n_dialogues=1000, rates=(0.4, 0.4, 0.2))
        dialogues, _ = C.generate_synthetic_corpus(cfg, seed=3)
        labels = np.array([d.reference.persona_label for d in dialogues])
        for lbl, rate in [(C.LABEL_USER, 0.4), (C.LABEL_ROBOT, 0.4), (C.LABEL_NONE, 0.2)]:
            assert abs((labels == lbl).mean() - rate) < 0.03

    def test_bad_rates_rejected(self):
        with pytest.raises(ConfigError):
            C.GeneratorConfig(rates=(0.7, 0.7, 0.2))

    def test_labels_agree_with_heuristic(self):
        cfg = C.GeneratorConfig(n_dialogues=60)
        dialogues, tables = C.generate_synthetic_corpus(cfg, seed=11)
        for d in dialogues:
            for turn in d.turns:
                recomputed = C.heuristic_persona_label(turn, d.user_profile, d.robot_profile, tables)
                assert turn.persona_label == recomputed

    def test_round_trip_through_file(self, tmp_path):
        cfg = C.GeneratorConfig(n_dialogues=25)
        dialogues, tables = C.generate_synthetic_corpus(cfg, seed=5)
        path = tmp_path / "c.jsonl"
        C.save_corpus(path, dialogues, tables)
        assert C.load_corpus(path, tables) == dialogues

    def test_tables_sorted_by_frequency(self):
        cfg = C.GeneratorConfig(n_dialogues=300)
        dialogues, tables = C.generate_synthetic_corpus(cfg, seed=9)
        counts = [0] * len(tables.areas)
        for d in dialogues:
            counts[d.user_profile.area] += 1
            counts[d.robot_profile.area] += 1
        assert counts == sorted(counts, reverse=True)
