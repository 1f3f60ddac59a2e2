"""Domain-knowledge side of the planner: lexicon relevance and scaffolding.

Filtering is two-stage: the component mask drops discussion fillers, then a
PHQ-9 lexicon similarity threshold drops low-relevance utterances. Retained
utterances are encoded as contextual+static concatenations; dropped ones are
replaced by a learned mask row so the scaffold keeps one row per utterance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Dialogue, Utterance, Vocabulary, tokenize
from .numerics.layers import BiLstm, Dense, scaled_dot_attention, uniform_param
from .numerics.rng import Rng
from .numerics.tensor import Tensor, concat, stack_rows, take_rows


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class LexiconItem:
    item: int
    phrases: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class Lexicon:
    entries: tuple[LexiconItem, ...]

    def __post_init__(self):
        if not self.entries:
            raise LexiconError("lexicon has no entries")
        for entry in self.entries:
            if not 1 <= entry.item <= 9:
                raise LexiconError(f"lexicon item id {entry.item} outside 1..9")
            if not entry.phrases:
                raise LexiconError(f"lexicon item {entry.item} has no phrases")
            if any(not p for p in entry.phrases):
                raise LexiconError(f"lexicon item {entry.item} has an empty phrase")


def _parse_lexicon_lines(lines) -> Lexicon:
    entries = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entries.append(LexiconItem(
                item=int(rec["item"]),
                phrases=tuple(tuple(tokenize(p)) for p in rec["phrases"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise LexiconError(f"lexicon line {line_no}: malformed record ({exc})") from exc
    return Lexicon(entries=tuple(entries))


def load_lexicon(path) -> Lexicon:
    return _parse_lexicon_lines(Path(path).read_text(encoding="utf-8").splitlines())


def default_lexicon() -> Lexicon:
    text = resources.files("counselsum.data").joinpath("phq9_lexicon.jsonl").read_text("utf-8")
    return _parse_lexicon_lines(text.splitlines())


# -- relevance scoring ---------------------------------------------------------


def _mean_vector(tokens, table: np.ndarray, vocab: Vocabulary) -> np.ndarray | None:
    """Mean static embedding over in-vocabulary tokens; None if there are none."""
    ids = [vocab.token_to_id[t] for t in tokens if t in vocab.token_to_id]
    if not ids:
        return None
    return table[ids].mean(axis=0)


def score_utterance(utterance: Utterance, lexicon: Lexicon,
                    static_table: np.ndarray, vocab: Vocabulary) -> float:
    """Best cosine between the utterance and any lexicon phrase, clamped to [0, 1]."""
    u = _mean_vector(tokenize(utterance.text), static_table, vocab)
    if u is None:
        return 0.0
    u_norm = np.linalg.norm(u)
    if u_norm < 1e-12:
        return 0.0
    best = 0.0
    for entry in lexicon.entries:
        for phrase in entry.phrases:
            p = _mean_vector(phrase, static_table, vocab)
            if p is None:
                continue
            p_norm = np.linalg.norm(p)
            if p_norm < 1e-12:
                continue
            best = max(best, float(u @ p / (u_norm * p_norm)))
    return min(1.0, max(0.0, best))


def apply_threshold(scores, threshold: float = 0.5) -> list[bool]:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    return [s >= threshold for s in scores]


@dataclass
class FilteredDialogue:
    dialogue: Dialogue
    keep: list[bool]
    scores: list[float]


def filter_dialogue(dialogue: Dialogue, component_mask: list[bool],
                    lexicon: Lexicon, static_table: np.ndarray,
                    vocab: Vocabulary, threshold: float = 0.5) -> FilteredDialogue:
    """keep[i] = component_mask[i] AND score[i] >= threshold."""
    n = len(dialogue.utterances)
    if len(component_mask) != n:
        raise ValueError(f"component mask length {len(component_mask)} != {n}")
    scores = [score_utterance(u, lexicon, static_table, vocab)
              for u in dialogue.utterances]
    phq_mask = apply_threshold(scores, threshold)
    keep = [bool(c and p) for c, p in zip(component_mask, phq_mask)]
    return FilteredDialogue(dialogue=dialogue, keep=keep, scores=scores)


# -- encoders -------------------------------------------------------------------


class ContextEncoder:
    """Per-utterance contextual vector: token embeddings, one self-attention
    layer over the utterance's tokens, mean pool."""

    def __init__(self, rng: Rng, vocab_size: int, d: int):
        self.d = d
        self.emb = uniform_param(rng, (vocab_size, d), d)
        self.wq = Dense(rng, d, d)
        self.wk = Dense(rng, d, d)
        self.wv = Dense(rng, d, d)

    def encode_tokens(self, token_ids: list[int]) -> Tensor:
        x = take_rows(self.emb, token_ids)
        attended, _ = scaled_dot_attention(self.wq(x), self.wk(x), self.wv(x))
        return attended.mean(axis=0)

    def named_params(self, prefix: str):
        return ([(f"{prefix}.emb", self.emb)]
                + self.wq.named_params(f"{prefix}.wq")
                + self.wk.named_params(f"{prefix}.wk")
                + self.wv.named_params(f"{prefix}.wv"))


def embed_contextual(dialogue: Dialogue, i: int, encoder: ContextEncoder,
                     vocab: Vocabulary) -> Tensor:
    if not 0 <= i < len(dialogue.utterances):
        raise IndexError(f"utterance index {i} out of range")
    return encoder.encode_tokens(vocab.encode(tokenize(dialogue.utterances[i].text)))


def embed_static(utterance: Utterance, static_table: Tensor,
                 vocab: Vocabulary) -> Tensor:
    """Mean static embedding; out-of-vocabulary tokens fall back to the UNK row."""
    ids = vocab.encode(tokenize(utterance.text))
    return take_rows(static_table, ids).mean(axis=0)


@dataclass
class ScaffoldRepresentation:
    matrix: Tensor  # one row per utterance, masked rows included


class KnowledgeEncoder:
    """Everything on the domain-knowledge path that carries parameters."""

    def __init__(self, rng: Rng, vocab_size: int, d_embed: int, d_hidden: int):
        self.ctx = ContextEncoder(rng.child("ctx"), vocab_size, d_embed)
        self.static_table = uniform_param(rng.child("static"), (vocab_size, d_embed), d_embed)
        self.mask_vec = uniform_param(rng.child("mask"), (2 * d_embed,), 2 * d_embed)
        self.bilstm = BiLstm(rng.child("bilstm"), 2 * d_embed, d_hidden)
        self.width = 2 * d_hidden

    def input_row(self, filtered: FilteredDialogue, i: int, vocab: Vocabulary,
                  ctx_cache: list[Tensor] | None = None) -> Tensor:
        if not filtered.keep[i]:
            return self.mask_vec
        ctx = (ctx_cache[i] if ctx_cache is not None
               else embed_contextual(filtered.dialogue, i, self.ctx, vocab))
        static = embed_static(filtered.dialogue.utterances[i], self.static_table, vocab)
        return concat([ctx, static], axis=0)

    def scaffold(self, filtered: FilteredDialogue, vocab: Vocabulary,
                 ctx_cache: list[Tensor] | None = None) -> ScaffoldRepresentation:
        """Mixed contextual/static rows -> BiLSTM -> self-attention."""
        n = len(filtered.dialogue.utterances)
        rows = [self.input_row(filtered, i, vocab, ctx_cache) for i in range(n)]
        states = self.bilstm(stack_rows(rows))
        attended, _ = scaled_dot_attention(states, states, states)
        return ScaffoldRepresentation(matrix=attended)

    def named_params(self, prefix: str):
        return (self.ctx.named_params(f"{prefix}.ctx")
                + [(f"{prefix}.static", self.static_table),
                   (f"{prefix}.mask", self.mask_vec)]
                + self.bilstm.named_params(f"{prefix}.bilstm"))
