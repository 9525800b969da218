"""End-to-end forward passes shared by training, decoding and evaluation.

A DialogueModel bundles the shared transformer parameters, the fusion head
and the vocabulary/attribute tables it was built against. The decoder role
is the fusion attention stage followed by the final norm and the tied logit
projection; the block stack itself encodes each input exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone, embedding, fusion
from . import tensor as T
from .corpus import BOS, EOS, PAD, USER, Vocabulary, tokenize
from .errors import ContractError

# ablation switches, grouped so call sites stay readable
@dataclass(frozen=True)
class AblationFlags:
    no_lm: bool = False
    no_paf: bool = False
    no_pemb: bool = False


@dataclass
class DialogueModel:
    cfg: backbone.ModelConfig
    params: backbone.ModelParams
    head: fusion.FusionHead
    vocab: Vocabulary
    attrs: object  # AttributeTables

    @staticmethod
    def create(rng, cfg, vocab, attrs):
        return DialogueModel(
            cfg, backbone.ModelParams.create(rng, cfg), fusion.FusionHead.create(rng, cfg.d_model), vocab, attrs
        )

    def named_parameters(self):
        return self.params.named_parameters() + self.head.named_parameters()

    def parameters(self):
        return [p for _, p in self.named_parameters()]


@dataclass
class ContextEncodings:
    """Everything the decoder needs that does not depend on the prefix."""

    e_context: T.Tensor
    context_mask: np.ndarray
    e_user: T.Tensor
    user_mask: np.ndarray
    e_robot: T.Tensor
    robot_mask: np.ndarray

    def masks(self):
        return {"user": self.user_mask, "robot": self.robot_mask, "context": self.context_mask}


def context_turn_ids(dialogue_turns, vocab):
    """(speaker, token_ids) pairs for a dialogue prefix."""
    return [(t.speaker, tokenize(t.text, vocab)) for t in dialogue_turns]


def encode_inputs(model, prefix_turns, user_profile, robot_profile, *, add_persona=True):
    """Encode the dialogue context and both profiles.

    Profile encodings are detached: they never train the encoder. The
    context encoding stays on the tape.
    """
    cfg, params = model.cfg, model.params
    ctx = embedding.build_context(
        context_turn_ids(prefix_turns, model.vocab),
        user_profile,
        robot_profile,
        params.tables,
        cfg.n,
        cfg.l_max,
        cfg.window,
        add_persona=add_persona,
    )
    e_context = backbone.encode(ctx.matrix, ctx.mask, params, cfg)

    def profile_encoding(profile):
        # profile encodings never train the encoder: whole pass is off-tape
        with T.no_grad():
            seq = embedding.embed_profile(profile, params.tables, model.vocab, model.attrs)
            enc = backbone.encode(seq.matrix, seq.mask, params, cfg)
        return enc.detach(), seq.mask

    e_user, user_mask = profile_encoding(user_profile)
    e_robot, robot_mask = profile_encoding(robot_profile)
    return ContextEncodings(e_context, ctx.mask, e_user, user_mask, e_robot, robot_mask), ctx


def decode_prefix(model, enc, prefix_ids, mode=fusion.WeightMode.AUTO, paf_enabled=True):
    """Logits over every prefix position plus the presence prediction.

    ``prefix_ids`` starts with BOS. With the fusion task disabled
    (``paf_enabled=False``) the weights are fixed to (0, 0, 1) and no
    prediction is made.
    """
    cfg, params = model.cfg, model.params
    seq = embedding.embed_prefix(prefix_ids, params.tables)
    e_prev = backbone.encode(seq.matrix, seq.mask, params, cfg)
    o_prev, o_user, o_robot, o_context = fusion.compute_encodings(
        e_prev, enc.e_user, enc.e_robot, enc.e_context, enc.masks(), cfg.heads, params.cross
    )

    prediction = None
    if not paf_enabled:
        weights = fusion.FusionWeights(0.0, 0.0, 1.0, fusion.OVERRIDE)
    else:
        fixed = fusion.override_weights(mode)
        if fixed is None:
            prediction = fusion.predict_presence(
                o_context, np.ones(o_context.shape[0], dtype=bool), model.head, cfg.pooling
            )
            weights = prediction.probs
        else:
            weights = fixed
    fused = fusion.fuse(o_user, o_robot, o_context, o_prev, weights)
    logits = backbone.project_logits(backbone.final_norm(fused, params), params)
    return logits, prediction, weights


def teacher_forced_pass(model, dialogue, flags=AblationFlags(), mode=fusion.WeightMode.AUTO):
    """One training-shaped forward over a full dialogue.

    Returns (generation logits, response targets, presence prediction,
    context logits, context LM targets). The response targets are the
    reference tokens plus EOS; context LM targets are next-token ids with
    pads ignored.
    """
    if len(dialogue.turns) < 2:
        raise ContractError("teacher forcing needs a reference response")
    prefix_turns = dialogue.turns[:-1]
    reference = dialogue.reference
    enc, ctx = encode_inputs(
        model, prefix_turns, dialogue.user_profile, dialogue.robot_profile, add_persona=not flags.no_pemb
    )

    ref_ids = tokenize(reference.text, model.vocab)[: model.cfg.max_response_len]
    prev_ids = [BOS] + ref_ids
    targets = np.array(ref_ids + [EOS], dtype=np.intp)
    logits, prediction, _ = decode_prefix(model, enc, prev_ids, mode=mode, paf_enabled=not flags.no_paf)

    lm_logits = None
    lm_targets = None
    if not flags.no_lm:
        lm_logits = backbone.project_logits(backbone.final_norm(enc.e_context, model.params), model.params)
        ids = ctx.token_ids
        lm_targets = np.full(len(ids), PAD, dtype=np.intp)
        lm_targets[:-1] = ids[1:]
        lm_targets[~ctx.mask] = PAD  # positions whose own input is padding
    return logits, targets, prediction, lm_logits, lm_targets


def step_distribution(model, enc, prefix_ids, mode=fusion.WeightMode.AUTO, paf_enabled=True):
    """Log-probabilities of the next token after ``prefix_ids`` (no tape)."""
    with T.no_grad():
        logits, prediction, weights = decode_prefix(model, enc, prefix_ids, mode, paf_enabled)
    logp = T.log_softmax_np(logits.values[-1])
    if isinstance(weights, T.Tensor):
        a, b, g = (float(v) for v in weights.values[0])
        weights = fusion.FusionWeights(a, b, g, fusion.PREDICTED)
    return logp, weights
