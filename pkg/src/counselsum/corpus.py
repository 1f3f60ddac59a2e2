"""Dialogue data model, serialization, tokenization, splits and synthetic data.

A corpus file is UTF-8 line-delimited JSON, one dialogue per line:
    {"id": str, "summary": str|null,
     "utterances": [{"speaker": "T"|"C", "text": str,
                     "component": "SH"|"PD"|"RT"|"DF"|null}, ...]}
Unknown fields are ignored on load. Split assignments are derived, never stored.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from hashlib import sha256
from pathlib import Path

from .numerics.rng import Rng


class CorpusError(ValueError):
    """Malformed corpus data (bad record, duplicate id, empty dialogue...)."""


class Speaker(Enum):
    THERAPIST = "T"
    CLIENT = "C"


class Component(Enum):
    SH = "SH"  # symptom and history
    PD = "PD"  # patient discovery
    RT = "RT"  # reflecting
    DF = "DF"  # discussion filler


COMPONENT_ORDER = (Component.SH, Component.PD, Component.RT, Component.DF)
RELEVANT_COMPONENTS = frozenset({Component.SH, Component.PD, Component.RT})


class SplitName(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: Speaker
    text: str
    component: Component | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError(f"utterance {self.index}: empty text")


@dataclass
class Dialogue:
    id: str
    utterances: list[Utterance]
    gold_summary: str | None = None

    def __post_init__(self):
        if not self.utterances:
            raise CorpusError(f"dialogue {self.id!r}: empty utterance list")
        for i, utt in enumerate(self.utterances):
            if utt.index != i:
                raise CorpusError(
                    f"dialogue {self.id!r}: utterance index {utt.index} at position {i}")

    def __len__(self) -> int:
        return len(self.utterances)

    def has_both_speakers(self) -> bool:
        speakers = {u.speaker for u in self.utterances}
        return Speaker.THERAPIST in speakers and Speaker.CLIENT in speakers


@dataclass
class Corpus:
    dialogues: list[Dialogue]
    split: dict[str, SplitName] | None = None

    def __post_init__(self):
        ids = [d.id for d in self.dialogues]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise CorpusError(f"duplicate dialogue ids: {dupes}")
        if self.split is not None:
            known = set(ids)
            for did in self.split:
                if did not in known:
                    raise CorpusError(f"split references unknown dialogue id {did!r}")

    def __len__(self) -> int:
        return len(self.dialogues)

    def by_id(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.id == dialogue_id:
                return d
        raise CorpusError(f"unknown dialogue id {dialogue_id!r}")

    def subset(self, name: SplitName) -> list[Dialogue]:
        if self.split is None:
            raise CorpusError("corpus has no split assignment")
        return [d for d in self.dialogues if self.split.get(d.id) == name]


# -- serialization -------------------------------------------------------------


def _dialogue_to_record(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "summary": d.gold_summary,
        "utterances": [
            {"speaker": u.speaker.value, "text": u.text,
             "component": u.component.value if u.component else None}
            for u in d.utterances
        ],
    }


def _dialogue_from_record(rec: dict, line_no: int) -> Dialogue:
    try:
        utterances = [
            Utterance(index=i, speaker=Speaker(u["speaker"]), text=u["text"],
                      component=Component(u["component"]) if u.get("component") else None)
            for i, u in enumerate(rec["utterances"])
        ]
        return Dialogue(id=rec["id"], utterances=utterances,
                        gold_summary=rec.get("summary"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"line {line_no}: malformed dialogue record ({exc})") from exc


def load_corpus(path) -> Corpus:
    path = Path(path)
    dialogues = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            dialogues.append(_dialogue_from_record(rec, line_no))
    return Corpus(dialogues=dialogues)


def save_corpus(path, corpus: Corpus) -> None:
    lines = [json.dumps(_dialogue_to_record(d), ensure_ascii=False,
                        separators=(",", ":")) for d in corpus.dialogues]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# -- tokenization and vocabulary -----------------------------------------------

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

PAD, UNK, BOS, EOS, MASK = 0, 1, 2, 3, 4
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>", "<mask>")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, punctuation as standalone tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str] = field(init=False)

    def __post_init__(self):
        self.id_to_token = [""] * len(self.token_to_id)
        for tok, i in self.token_to_id.items():
            self.id_to_token[i] = tok

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def content_hash(self) -> str:
        payload = "\n".join(f"{tok}\t{i}" for tok, i in
                            sorted(self.token_to_id.items(), key=lambda kv: kv[1]))
        return sha256(payload.encode("utf-8")).hexdigest()


def build_vocab(corpus: Corpus, min_count: int = 1) -> Vocabulary:
    """Frequency-ordered ids, ties broken lexicographically, reserved ids fixed."""
    if not corpus.dialogues:
        raise CorpusError("cannot build vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for d in corpus.dialogues:
        for u in d.utterances:
            counts.update(tokenize(u.text))
        if d.gold_summary:
            counts.update(tokenize(d.gold_summary))
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    mapping = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for offset, tok in enumerate(kept):
        mapping[tok] = len(RESERVED_TOKENS) + offset
    return Vocabulary(token_to_id=mapping)


# -- splitting -------------------------------------------------------------


def split_corpus(corpus: Corpus, ratios: tuple[float, float, float],
                 seed: int) -> Corpus:
    """Assign train/val/test by seeded shuffle; flooring remainder goes to train."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {ratios}")
    n = len(corpus.dialogues)
    if n < 3:
        raise CorpusError(f"need at least 3 dialogues to split, got {n}")
    n_train = math.floor(n * ratios[0])
    n_val = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    n_train += n - (n_train + n_val + n_test)
    order = Rng(seed).child("corpus-split").permutation(n)
    assignment: dict[str, SplitName] = {}
    for pos, dialogue_idx in enumerate(order):
        if pos < n_train:
            name = SplitName.TRAIN
        elif pos < n_train + n_val:
            name = SplitName.VAL
        else:
            name = SplitName.TEST
        assignment[corpus.dialogues[dialogue_idx].id] = name
    return Corpus(dialogues=corpus.dialogues, split=assignment)


# -- synthetic corpus ----------------------------------------------------------

# Template pools keyed by component. Texts are unique across pools so a
# generated utterance's pool (its provenance) can be recovered from its text.
# Symptom texts come in two flavours: ones that lexically overlap the PHQ-9
# lexicon and plain ones; the generator's phq_overlap rate picks between them.
SH_PHQ_TEMPLATES = [
    "i feel sad and empty most of the day",
    "i have trouble sleeping almost every night",
    "i feel tired and have little energy lately",
    "my appetite is poor and i barely eat",
    "i feel down and hopeless about everything",
    "i lost interest in things i used to enjoy",
    "i cannot concentrate on my work anymore",
    "i feel bad about myself like i am a failure",
    "i have been moving and speaking very slowly",
    "some days i think i would be better off gone",
    "i started skipping meals after the move",
]

SH_PLAIN_TEMPLATES = [
    "the panic comes back whenever i leave the house",
    "my chest gets tight before every meeting",
    "the headaches return most afternoons now",
    "i keep snapping at people over small things",
]

SYNTHETIC_TEMPLATES: dict[Component, list[str]] = {
    Component.SH: SH_PHQ_TEMPLATES + SH_PLAIN_TEMPLATES,
    Component.PD: [
        "i think the breakup is what started all of this",
        "my mother never listens to anything i say",
        "work has been piling up and i cannot keep pace",
        "i moved to a new city and i know nobody here",
        "my brother and i stopped talking last year",
        "i keep replaying the accident in my head",
        "money has been tight since i lost the job",
        "i guess i never learned how to ask for help",
        "the exams are coming and i feel unprepared",
        "my partner says i shut everyone out",
        "i grew up being told to keep quiet about feelings",
        "the new manager keeps changing what she wants",
    ],
    Component.RT: [
        "it sounds like you have been carrying a heavy weight",
        "so you felt alone even when people were around",
        "let me see if i understand what you are telling me",
        "that must have been very hard for you",
        "you mentioned feeling stuck shall we stay with that",
        "imagine telling your younger self what you told me",
        "it seems the nights are when it gets loudest",
        "i hear that asking for help feels risky to you",
    ],
    Component.DF: [
        "good morning !",
        "ummm",
        "right",
        "yeah . yeah",
        "okay sure",
        "thanks for coming in today",
        "no problem at all",
        "mmm hmm",
    ],
}


@dataclass
class SyntheticSpec:
    """Knobs for the synthetic corpus generator."""

    dialogues: int = 50
    min_len: int = 4
    max_len: int = 12
    templates: dict[Component, list[str]] = field(
        default_factory=lambda: {c: list(p) for c, p in SYNTHETIC_TEMPLATES.items()})
    # Probability that a symptom utterance is drawn from the lexicon-overlapping
    # sub-pool rather than the plain one.
    phq_overlap: float = 0.75
    phq_templates: list[str] = field(default_factory=lambda: list(SH_PHQ_TEMPLATES))
    # Target proportions from the dataset the pipeline was designed around:
    # SH 2379, PD 5428, RT 1242, DF 2494 out of 11543 utterances.
    component_weights: tuple[float, float, float, float] = (
        2379 / 11543, 5428 / 11543, 1242 / 11543, 2494 / 11543)

    def validate(self) -> None:
        if self.dialogues <= 0:
            raise CorpusError("synthetic spec: dialogue count must be positive")
        if not (1 <= self.min_len <= self.max_len):
            raise CorpusError("synthetic spec: invalid length range")
        if not 0.0 <= self.phq_overlap <= 1.0:
            raise CorpusError("synthetic spec: phq_overlap must be in [0, 1]")
        for comp in COMPONENT_ORDER:
            if not self.templates.get(comp):
                raise CorpusError(f"synthetic spec: empty template pool for {comp.value}")


def _speaker_for(component: Component, position: int) -> Speaker:
    if component is Component.RT:
        return Speaker.THERAPIST
    if component is Component.DF:
        return Speaker.THERAPIST if position % 2 == 0 else Speaker.CLIENT
    return Speaker.CLIENT


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Corpus:
    """Labeled dialogues whose gold summary concatenates the SH/PD/RT texts."""
    spec.validate()
    rng = Rng(seed).child("synthetic-corpus")
    dialogues = []
    for d in range(spec.dialogues):
        for _attempt in range(100):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            comps = [COMPONENT_ORDER[rng.choice_index(spec.component_weights)]
                     for _ in range(length)]
            utterances = []
            for i, comp in enumerate(comps):
                pool = spec.templates[comp]
                if comp is Component.SH:
                    loaded = [t for t in pool if t in spec.phq_templates]
                    plain = [t for t in pool if t not in spec.phq_templates]
                    if loaded and plain:
                        pool = loaded if rng.uniform(0.0, 1.0) < spec.phq_overlap else plain
                text = pool[int(rng.integers(0, len(pool)))]
                utterances.append(Utterance(index=i, speaker=_speaker_for(comp, i),
                                            text=text, component=comp))
            speakers = {u.speaker for u in utterances}
            if len(speakers) == 2:
                break
        else:
            raise CorpusError("synthetic generator failed to produce both speakers")
        summary = " ".join(u.text for u in utterances
                           if u.component in RELEVANT_COMPONENTS)
        dialogues.append(Dialogue(id=f"syn-{d:04d}", utterances=utterances,
                                  gold_summary=summary))
    return Corpus(dialogues=dialogues)
