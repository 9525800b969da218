"""Corpus schema, tokenizer/vocabulary, persona labeling, synthetic generator.

File formats (both start with the version line ``bpdg-corpus-v1``):
  * dialogue corpus: one JSON record per line with fields
    ``id``, ``user_profile``, ``robot_profile``, ``turns``
  * attribute tables: a single JSON object ``{"areas": [...], "interests": [...]}``
Profiles in files carry surface strings; in memory they hold indices into
the attribute tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError

CORPUS_HEADER = "bpdg-corpus-v1"

USER = "user"
ROBOT = "robot"

# fixed surface strings for the binary gender code (0 male / 1 female)
GENDER_STRINGS = ("male", "female")

# special token ids, always the first vocabulary rows
PAD, SEP, BOS, EOS, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<sep>", "<bos>", "<eos>", "<unk>")

LABEL_USER, LABEL_ROBOT, LABEL_NONE = 0, 1, 2


@dataclass(frozen=True)
class Profile:
    """One speaker's explicit persona: gender code, area index, interest indices."""

    gender: int
    area: int
    interests: tuple[int, ...]

    def __post_init__(self):
        if self.gender not in (0, 1):
            raise DataError(f"profile gender must be 0 or 1, got {self.gender}")
        if len(self.interests) < 1:
            raise DataError("profile needs at least one interest")


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    persona_label: int | None = None

    def __post_init__(self):
        if self.speaker not in (USER, ROBOT):
            raise DataError(f"unknown speaker role {self.speaker!r}")
        if not self.text.strip():
            raise DataError("utterance text is empty after normalization")
        if self.persona_label is not None and self.persona_label not in (0, 1, 2):
            raise DataError(f"persona label must be 0, 1 or 2, got {self.persona_label}")

    @property
    def tokens(self):
        return self.text.split()


@dataclass(frozen=True)
class Dialogue:
    id: str
    user_profile: Profile
    robot_profile: Profile
    turns: tuple[Utterance, ...]

    def __post_init__(self):
        if len(self.turns) < 2:
            raise DataError(f"dialogue {self.id}: needs at least 2 turns")
        for i, turn in enumerate(self.turns):
            want = USER if i % 2 == 0 else ROBOT
            if turn.speaker != want:
                raise DataError(f"dialogue {self.id}: turn {i} should be {want}, got {turn.speaker}")
        if self.turns[-1].speaker != ROBOT:
            raise DataError(f"dialogue {self.id}: final turn must be the robot reference response")

    @property
    def reference(self):
        return self.turns[-1]

    def profile_of(self, speaker):
        return self.user_profile if speaker == USER else self.robot_profile


@dataclass(frozen=True)
class AttributeTables:
    """Ordered surface-string tables for areas and interests."""

    areas: tuple[str, ...]
    interests: tuple[str, ...]

    def area_index(self, s):
        try:
            return self.areas.index(s)
        except ValueError:
            raise DataError(f"unknown area string {s!r}") from None

    def interest_index(self, s):
        try:
            return self.interests.index(s)
        except ValueError:
            raise DataError(f"unknown interest string {s!r}") from None

    def profile_strings(self, profile):
        """All attribute surface tokens of a profile (gender, area, interests)."""
        out = {GENDER_STRINGS[profile.gender], self.areas[profile.area]}
        out.update(self.interests[i] for i in profile.interests)
        return out


def profile_tokens(profile, tables):
    """Key-value serialization used for profile embeddings and classifiers."""
    toks = ["gender", GENDER_STRINGS[profile.gender], ","]
    toks += ["area", tables.areas[profile.area], ","]
    toks += ["interests"] + [tables.interests[i] for i in profile.interests[:3]]
    return toks


# ---------------------------------------------------------------------------
# vocabulary and tokenizer


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    counts: dict[str, int]
    rare_threshold: int

    @property
    def size(self):
        return len(self.id_to_token)

    def id(self, token):
        return self.token_to_id.get(token, UNK)

    def token(self, idx):
        return self.id_to_token[idx]

    @property
    def frequent(self):
        return {t for t in self.id_to_token[len(SPECIAL_TOKENS):] if self.counts.get(t, 0) >= self.rare_threshold}

    @property
    def rare(self):
        return {t for t in self.id_to_token[len(SPECIAL_TOKENS):] if self.counts.get(t, 0) < self.rare_threshold}

    def digest_material(self):
        return json.dumps(
            {"tokens": self.id_to_token, "counts": self.counts, "rare_threshold": self.rare_threshold},
            sort_keys=True,
        )


def tokenize(text, vocab):
    """Whitespace word tokens; unknown tokens map to UNK."""
    return [vocab.id(t) for t in text.split()]


def detokenize(ids, vocab):
    return " ".join(vocab.token(i) for i in ids)


def build_vocab(dialogues, tables=None, min_freq=1, rare_threshold=2):
    """Frequency-sorted vocabulary over turn texts plus profile serializations.

    Ids are assigned by descending count with lexicographic tie-break; tokens
    with count < rare_threshold form the rare set R, the rest the frequent
    set F.
    """
    counts = {}

    def bump(tok):
        counts[tok] = counts.get(tok, 0) + 1

    for d in dialogues:
        for turn in d.turns:
            for tok in turn.tokens:
                bump(tok)
        if tables is not None:
            for p in (d.user_profile, d.robot_profile):
                for tok in profile_tokens(p, tables):
                    bump(tok)

    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = list(SPECIAL_TOKENS) + kept
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocabulary(token_to_id, id_to_token, counts, rare_threshold)


# ---------------------------------------------------------------------------
# persona-presence labeling


def heuristic_persona_label(utterance, user, robot, tables, tie_label=LABEL_ROBOT):
    """3-way label from attribute-string overlap.

    0 if only the user's attributes are mentioned, 1 if only the robot's;
    when both sides match, the side with more matched tokens wins and ties
    go to ``tie_label`` (robot by default). 2 when neither side matches.
    """
    user_strings = tables.profile_strings(user)
    robot_strings = tables.profile_strings(robot)
    toks = utterance.tokens
    user_hits = sum(1 for t in toks if t in user_strings)
    robot_hits = sum(1 for t in toks if t in robot_strings)
    if user_hits == 0 and robot_hits == 0:
        return LABEL_NONE
    if user_hits > robot_hits:
        return LABEL_USER
    if robot_hits > user_hits:
        return LABEL_ROBOT
    return tie_label


def label_dialogue(dialogue, tables):
    """Fill persona_label on every turn via the overlap heuristic (idempotent)."""
    turns = tuple(
        replace(t, persona_label=heuristic_persona_label(t, dialogue.user_profile, dialogue.robot_profile, tables))
        for t in dialogue.turns
    )
    return replace(dialogue, turns=turns)


# ---------------------------------------------------------------------------
# corpus files


def _profile_to_record(profile, tables):
    return {
        "gender": profile.gender,
        "area": tables.areas[profile.area],
        "interests": [tables.interests[i] for i in profile.interests],
    }


def _profile_from_record(rec, tables, line_no, side):
    if not isinstance(rec, dict):
        raise DataError(f"line {line_no}: {side} must be an object")
    for key in ("gender", "area", "interests"):
        if key not in rec:
            raise DataError(f"line {line_no}: {side} is missing field '{key}'")
    return Profile(
        gender=int(rec["gender"]),
        area=tables.area_index(rec["area"]),
        interests=tuple(tables.interest_index(s) for s in rec["interests"]),
    )


def save_corpus(path, dialogues, tables):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CORPUS_HEADER + "\n")
        for d in dialogues:
            rec = {
                "id": d.id,
                "user_profile": _profile_to_record(d.user_profile, tables),
                "robot_profile": _profile_to_record(d.robot_profile, tables),
                "turns": [
                    {"speaker": t.speaker, "text": t.text}
                    | ({"label": t.persona_label} if t.persona_label is not None else {})
                    for t in d.turns
                ],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_corpus(path, tables):
    """Parse and validate a corpus file; bad records raise with line numbers."""
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CORPUS_HEADER:
            raise DataError(f"{path}: expected header line {CORPUS_HEADER!r}, got {header!r}")
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: malformed record: {exc}") from None
            for key in ("id", "user_profile", "robot_profile", "turns"):
                if key not in rec:
                    raise DataError(f"line {line_no}: record is missing field '{key}'")
            user = _profile_from_record(rec["user_profile"], tables, line_no, "user_profile")
            robot = _profile_from_record(rec["robot_profile"], tables, line_no, "robot_profile")
            try:
                turns = tuple(
                    Utterance(t["speaker"], t["text"], t.get("label")) for t in rec["turns"]
                )
                dialogues.append(Dialogue(str(rec["id"]), user, robot, turns))
            except (KeyError, TypeError) as exc:
                raise DataError(f"line {line_no}: malformed turn: {exc}") from None
            except DataError as exc:
                raise DataError(f"line {line_no}: {exc}") from None
    return dialogues


def save_tables(path, tables):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CORPUS_HEADER + "\n")
        fh.write(json.dumps({"areas": list(tables.areas), "interests": list(tables.interests)}) + "\n")


def load_tables(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != CORPUS_HEADER:
            raise DataError(f"{path}: expected header line {CORPUS_HEADER!r}, got {header!r}")
        body = json.loads(fh.read())
    return AttributeTables(tuple(body["areas"]), tuple(body["interests"]))


# ---------------------------------------------------------------------------
# synthetic corpus generator


@dataclass
class GeneratorConfig:
    """Knobs for the seeded synthetic bilateral-persona corpus."""

    n_dialogues: int = 2000
    n_areas: int = 16
    n_interests: int = 30
    n_topics: int = 80
    # (user persona, robot persona, no persona) rates for the reference response
    rates: tuple[float, float, float] = (0.30, 0.35, 0.35)
    # persona-mention rate for interior (history) turns
    history_mention_rate: float = 0.35
    # distribution over total turn counts (even, user first, robot last)
    turn_counts: tuple[int, ...] = (2, 4, 6)
    turn_count_probs: tuple[float, ...] = (0.35, 0.45, 0.20)
    id_prefix: str = "dlg"

    def __post_init__(self):
        if len(self.rates) != 3 or any(r < 0 for r in self.rates):
            raise ConfigError(f"rates must be three non-negative numbers, got {self.rates}")
        if sum(self.rates) > 1.0 + 1e-9:
            raise ConfigError(f"rates must sum to at most 1, got {self.rates}")
        if abs(sum(self.turn_count_probs) - 1.0) > 1e-9:
            raise ConfigError("turn_count_probs must sum to 1")
        if any(c < 2 or c % 2 for c in self.turn_counts):
            raise ConfigError("turn counts must be even and at least 2")


def _area_name(i):
    return f"city{i:02d}"


def _interest_name(i):
    return f"hobby{i:02d}"


def _topic_name(i):
    return f"topic{i:02d}"


# Templates: {a} area, {h} one interest, {t} dialogue topic. Persona templates
# mention exactly one side's attributes so constructed labels match the
# overlap heuristic; gender words never appear in the text.
_SELF_TEMPLATES = (
    "i live in {a} these days",
    "i am from {a} you know",
    "i really like {h}",
    "my favorite thing is {h}",
    "i live in {a} and i like {h}",
)
_OTHER_TEMPLATES = (
    "you live in {a} right",
    "you are from {a} i remember",
    "you must like {h} a lot",
    "your favorite thing is {h} right",
    "you live in {a} and you like {h}",
)
_NONE_TEMPLATES = (
    "let us talk about {t}",
    "the {t} was fine today",
    "i think {t} is great",
    "tell me more about {t}",
    "well {t} sounds good to me",
)
# cue templates for the final user input; each cue announces the label of the
# reference response so persona-presence prediction is learnable
_CUE_SELF = ("where do you live now", "what do you like to do")          # -> robot talks about itself
_CUE_OTHER = ("do you remember where i live", "guess what i like most")  # -> robot talks about the user
_CUE_NONE = ("how was the {t} today", "any thoughts on the {t}")
# reference templates, index-aligned with the cue that asks for them
_REPLY_SELF = ("i live in {a} these days", "i really like {h}")
_REPLY_OTHER = ("you live in {a} right", "you must like {h} a lot")
_REPLY_NONE = ("the {t} was fine today", "i think {t} is great")


def _fill(template, rng, profile, tables, topic):
    text = template
    if "{a}" in text:
        text = text.replace("{a}", tables.areas[profile.area])
    if "{h}" in text:
        hobby = tables.interests[profile.interests[int(rng.integers(len(profile.interests)))]]
        text = text.replace("{h}", hobby)
    if "{t}" in text:
        text = text.replace("{t}", topic)
    return text


def _sample_profile(rng, tables, avoid=None):
    """Sample a profile; attribute-disjoint from ``avoid`` so overlap labels stay unambiguous."""
    while True:
        area = int(rng.integers(len(tables.areas)))
        k = int(rng.integers(1, 4))
        interests = tuple(sorted(int(i) for i in rng.choice(len(tables.interests), size=k, replace=False)))
        profile = Profile(gender=int(rng.integers(2)), area=area, interests=interests)
        if avoid is None:
            return profile
        if area != avoid.area and not set(interests) & set(avoid.interests):
            return profile


def _pick_topic(rng, n_topics):
    # Zipf-flavored draw so tail topics stay rare and the rare vocabulary is non-empty
    weights = 1.0 / np.arange(1, n_topics + 1)
    weights /= weights.sum()
    return int(rng.choice(n_topics, p=weights))


def _interior_turn(rng, cfg, speaker, user, robot, tables, topic):
    roll = rng.random()
    if roll < cfg.history_mention_rate:
        own = user if speaker == USER else robot
        other = robot if speaker == USER else user
        if rng.random() < 0.5:
            text = _fill(_SELF_TEMPLATES[int(rng.integers(len(_SELF_TEMPLATES)))], rng, own, tables, topic)
        else:
            text = _fill(_OTHER_TEMPLATES[int(rng.integers(len(_OTHER_TEMPLATES)))], rng, other, tables, topic)
    else:
        text = _fill(_NONE_TEMPLATES[int(rng.integers(len(_NONE_TEMPLATES)))], rng, None, tables, topic)
    return Utterance(speaker, text)


def generate_synthetic_corpus(cfg, seed):
    """Seeded dialogues whose reference responses mention user / robot / no
    attributes at the configured rates; every turn is labeled and the labels
    are verified against the overlap heuristic.

    Returns (dialogues, tables) with attribute tables re-sorted by corpus
    frequency (most frequent attribute gets index 0).
    """
    rng = np.random.default_rng(seed)
    tables = AttributeTables(
        tuple(_area_name(i) for i in range(cfg.n_areas)),
        tuple(_interest_name(i) for i in range(cfg.n_interests)),
    )
    topics = [_topic_name(i) for i in range(cfg.n_topics)]
    p_user, p_robot, p_none = cfg.rates
    residue = 1.0 - (p_user + p_robot + p_none)
    label_probs = np.array([p_user, p_robot, p_none + residue])

    dialogues = []
    for n in range(cfg.n_dialogues):
        user = _sample_profile(rng, tables)
        robot = _sample_profile(rng, tables, avoid=user)
        topic = topics[_pick_topic(rng, cfg.n_topics)]
        n_turns = int(rng.choice(cfg.turn_counts, p=cfg.turn_count_probs))

        turns = []
        for i in range(n_turns - 2):
            speaker = USER if i % 2 == 0 else ROBOT
            turns.append(_interior_turn(rng, cfg, speaker, user, robot, tables, topic))

        label = int(rng.choice(3, p=label_probs))
        variant = int(rng.integers(2))
        if label == LABEL_ROBOT:
            cue, reply = _CUE_SELF[variant], _REPLY_SELF[variant]
            reply_profile = robot
        elif label == LABEL_USER:
            cue, reply = _CUE_OTHER[variant], _REPLY_OTHER[variant]
            reply_profile = user
        else:
            cue, reply = _CUE_NONE[variant], _REPLY_NONE[variant]
            reply_profile = None
        turns.append(Utterance(USER, _fill(cue, rng, None, tables, topic)))
        turns.append(Utterance(ROBOT, _fill(reply, rng, reply_profile, tables, topic)))

        dialogue = label_dialogue(
            Dialogue(f"{cfg.id_prefix}{n:06d}", user, robot, tuple(turns)), tables
        )
        if dialogue.reference.persona_label != label:
            raise DataError(
                f"generator bug: dialogue {dialogue.id} constructed label {label} "
                f"but heuristic says {dialogue.reference.persona_label}"
            )
        dialogues.append(dialogue)

    return _sort_tables_by_frequency(dialogues, tables)


def _sort_tables_by_frequency(dialogues, tables):
    """Re-index attribute tables by descending profile-occurrence frequency."""
    area_counts = {i: 0 for i in range(len(tables.areas))}
    interest_counts = {i: 0 for i in range(len(tables.interests))}
    for d in dialogues:
        for p in (d.user_profile, d.robot_profile):
            area_counts[p.area] += 1
            for i in p.interests:
                interest_counts[i] += 1

    area_order = sorted(area_counts, key=lambda i: (-area_counts[i], tables.areas[i]))
    interest_order = sorted(interest_counts, key=lambda i: (-interest_counts[i], tables.interests[i]))
    new_tables = AttributeTables(
        tuple(tables.areas[i] for i in area_order),
        tuple(tables.interests[i] for i in interest_order),
    )
    area_remap = {old: new for new, old in enumerate(area_order)}
    interest_remap = {old: new for new, old in enumerate(interest_order)}

    def remap_profile(p):
        return Profile(p.gender, area_remap[p.area], tuple(sorted(interest_remap[i] for i in p.interests)))

    remapped = [
        replace(d, user_profile=remap_profile(d.user_profile), robot_profile=remap_profile(d.robot_profile))
        for d in dialogues
    ]
    return remapped, new_tables
