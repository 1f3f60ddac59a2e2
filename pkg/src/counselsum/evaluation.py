"""Summary scoring: ROUGE-1/2/L, the MHIC capture metric, corpus-level reports.

Scoring is raw-token (tokenize() output), no stemming or stopword removal,
so every number here is reproducible bit-for-bit.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Component, Dialogue, RELEVANT_COMPONENTS, tokenize


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MhicScore:
    value: float


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise ValueError("rouge_n requires n >= 1")
    cand = _ngrams(tokenize(candidate), n)
    ref = _ngrams(tokenize(reference), n)
    clipped = sum(min(count, ref[gram]) for gram, count in cand.items())
    total_cand = sum(cand.values())
    total_ref = sum(ref.values())
    p = clipped / total_cand if total_cand else 0.0
    r = clipped / total_ref if total_ref else 0.0
    return RougeScore(precision=p, recall=r, f1=_f1(p, r))


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok_a in a:
        cur = [0] * (len(b) + 1)
        for j, tok_b in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if tok_a == tok_b else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """Token-level longest common subsequence score."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    lcs = _lcs_length(cand, ref)
    p = lcs / len(cand) if cand else 0.0
    r = lcs / len(ref) if ref else 0.0
    return RougeScore(precision=p, recall=r, f1=_f1(p, r))


def mhic(dialogue: Dialogue, predictions: list[Component], summary: str) -> MhicScore:
    """Unigram recall of the predicted-relevant utterances against the summary.

    The reference is the in-order concatenation of utterances whose predicted
    component is SH, PD or RT; no relevant utterances scores 0.
    """
    if len(predictions) != len(dialogue.utterances):
        raise ValueError(f"{len(predictions)} predictions for "
                         f"{len(dialogue.utterances)} utterances")
    relevant = [u.text for u, comp in zip(dialogue.utterances, predictions)
                if comp in RELEVANT_COMPONENTS]
    if not relevant:
        return MhicScore(0.0)
    return MhicScore(rouge_n(summary, " ".join(relevant), 1).recall)


@dataclass
class DialogueRow:
    dialogue_id: str
    rouge1_f1: float
    rouge2_f1: float
    rougel_f1: float
    mhic: float


@dataclass
class EvalReport:
    rows: list[DialogueRow]
    config_hash: str = ""
    checkpoint_name: str = ""
    ablation: str = "none"

    def _column(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.rows], dtype=np.float64)

    def mean(self, attr: str) -> float:
        return float(self._column(attr).mean())

    def std(self, attr: str) -> float:
        return float(self._column(attr).std())

    def render(self) -> str:
        lines = [
            f"# checkpoint: {self.checkpoint_name}",
            f"# config_hash: {self.config_hash}",
            f"# ablation: {self.ablation}",
            f"# dialogues: {len(self.rows)}",
            "id\trouge1_f1\trouge2_f1\trougel_f1\tmhic",
        ]
        for row in self.rows:
            lines.append(f"{row.dialogue_id}\t{row.rouge1_f1:.6f}\t{row.rouge2_f1:.6f}"
                         f"\t{row.rougel_f1:.6f}\t{row.mhic:.6f}")
        for attr in ("rouge1_f1", "rouge2_f1", "rougel_f1", "mhic"):
            lines.append(f"{attr}_mean\t{self.mean(attr):.6f}\t"
                         f"{attr}_std\t{self.std(attr):.6f}")
        return "\n".join(lines) + "\n"


def score_dialogue(dialogue: Dialogue, predictions: list[Component],
                   summary: str) -> DialogueRow:
    gold = dialogue.gold_summary or ""
    return DialogueRow(
        dialogue_id=dialogue.id,
        rouge1_f1=rouge_n(summary, gold, 1).f1,
        rouge2_f1=rouge_n(summary, gold, 2).f1,
        rougel_f1=rouge_l(summary, gold).f1,
        mhic=mhic(dialogue, predictions, summary).value,
    )
