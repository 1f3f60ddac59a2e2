"""Counseling-component classifier over utterance context.

Predicts SH/PD/RT/DF for each utterance from the window of utterances ending
at it (mean-pooled token embeddings, GRU over utterances, self-attention over
the recurrent states, two dense layers). Its discussion-filler decisions
produce the relevance mask consumed by knowledge filtering and by MHIC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import (COMPONENT_ORDER, Component, Corpus, Dialogue,
                     RELEVANT_COMPONENTS, SplitName, Vocabulary, tokenize)
from .numerics.layers import Dense, GruCell, cross_entropy, scaled_dot_attention, uniform_param
from .numerics.optim import OptimizerState, sgd_step
from .numerics.rng import Rng
from .numerics.tensor import Tensor, softmax, stack_rows, take_rows, zero_grads


class TrainingDataError(ValueError):
    pass


@dataclass(frozen=True)
class ComponentPrediction:
    distribution: np.ndarray  # ordered (SH, PD, RT, DF)
    label: Component

    @staticmethod
    def from_distribution(dist: np.ndarray) -> "ComponentPrediction":
        return ComponentPrediction(distribution=dist,
                                   label=COMPONENT_ORDER[int(np.argmax(dist))])


class ComponentClassifier:
    def __init__(self, rng: Rng, vocab_size: int, d_embed: int, d_hidden: int):
        self.d_hidden = d_hidden
        self.emb = uniform_param(rng.child("emb"), (vocab_size, d_embed), d_embed)
        self.gru = GruCell(rng.child("gru"), d_embed, d_hidden)
        self.wq = Dense(rng.child("wq"), d_hidden, d_hidden)
        self.wk = Dense(rng.child("wk"), d_hidden, d_hidden)
        self.wv = Dense(rng.child("wv"), d_hidden, d_hidden)
        self.dense1 = Dense(rng.child("dense1"), d_hidden, d_hidden)
        self.dense2 = Dense(rng.child("dense2"), d_hidden, len(COMPONENT_ORDER))

    def probabilities(self, dialogue: Dialogue, i: int, vocab: Vocabulary,
                      window: int) -> Tensor:
        if not 0 <= i < len(dialogue.utterances):
            raise IndexError(f"utterance index {i} out of range")
        start = max(0, i - window + 1)
        pooled = []
        for utt in dialogue.utterances[start:i + 1]:
            ids = vocab.encode(tokenize(utt.text))
            pooled.append(take_rows(self.emb, ids).mean(axis=0))
        h = Tensor(np.zeros(self.d_hidden))
        states = []
        for x in pooled:
            h = self.gru(x, h)
            states.append(h)
        ctx = stack_rows(states)
        attended, _ = scaled_dot_attention(self.wq(ctx), self.wk(ctx), self.wv(ctx))
        summary = attended[attended.shape[0] - 1]
        return softmax(self.dense2(self.dense1(summary).relu()), axis=-1)

    def named_params(self, prefix: str):
        return ([(f"{prefix}.emb", self.emb)]
                + self.gru.named_params(f"{prefix}.gru")
                + self.wq.named_params(f"{prefix}.wq")
                + self.wk.named_params(f"{prefix}.wk")
                + self.wv.named_params(f"{prefix}.wv")
                + self.dense1.named_params(f"{prefix}.dense1")
                + self.dense2.named_params(f"{prefix}.dense2"))

    def params(self):
        return [t for _, t in self.named_params("clf")]


def classify_utterance(model: ComponentClassifier, dialogue: Dialogue, i: int,
                       vocab: Vocabulary, window: int = 32) -> ComponentPrediction:
    probs = model.probabilities(dialogue, i, vocab, window)
    return ComponentPrediction.from_distribution(probs.data.copy())


def mask_fillers(dialogue: Dialogue, predictions: list[ComponentPrediction],
                 use_gold: bool = False) -> list[bool]:
    """True where the utterance is summary-relevant (label not DF)."""
    if len(predictions) != len(dialogue.utterances):
        raise ValueError(f"{len(predictions)} predictions for "
                         f"{len(dialogue.utterances)} utterances")
    mask = []
    for utt, pred in zip(dialogue.utterances, predictions):
        label = utt.component if use_gold and utt.component is not None else pred.label
        mask.append(label in RELEVANT_COMPONENTS)
    return mask


# -- training -------------------------------------------------------------------


@dataclass
class ClassifierTrainConfig:
    window: int = 32
    batch_size: int = 4
    epochs: int = 10
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    classes: tuple[Component, ...] = COMPONENT_ORDER


@dataclass
class ClassifierReport:
    split: str
    accuracy: float
    confusion: np.ndarray  # confusion[true][pred], component order
    losses: list[float] = field(default_factory=list)

    def precision(self, c: Component) -> float:
        j = COMPONENT_ORDER.index(c)
        col = self.confusion[:, j].sum()
        return float(self.confusion[j, j] / col) if col else 0.0

    def recall(self, c: Component) -> float:
        j = COMPONENT_ORDER.index(c)
        row = self.confusion[j, :].sum()
        return float(self.confusion[j, j] / row) if row else 0.0

    def f1(self, c: Component) -> float:
        p, r = self.precision(c), self.recall(c)
        return 2 * p * r / (p + r) if (p + r) else 0.0

    def render(self) -> str:
        lines = [f"# classifier report (split: {self.split})",
                 f"accuracy\t{self.accuracy:.6f}",
                 "class\tprecision\trecall\tf1"]
        for c in COMPONENT_ORDER:
            lines.append(f"{c.value}\t{self.precision(c):.6f}"
                         f"\t{self.recall(c):.6f}\t{self.f1(c):.6f}")
        lines.append("confusion rows=gold cols=pred " +
                     " ".join(c.value for c in COMPONENT_ORDER))
        for j, c in enumerate(COMPONENT_ORDER):
            lines.append(f"{c.value}\t" + "\t".join(str(int(x)) for x in self.confusion[j]))
        return "\n".join(lines) + "\n"


def _labeled_examples(dialogues) -> list[tuple[Dialogue, int, Component]]:
    out = []
    for d in dialogues:
        for u in d.utterances:
            if u.component is not None:
                out.append((d, u.index, u.component))
    return out


def evaluate_classifier(model: ComponentClassifier, examples, vocab: Vocabulary,
                        window: int, split: str) -> ClassifierReport:
    confusion = np.zeros((len(COMPONENT_ORDER), len(COMPONENT_ORDER)))
    hits = 0
    for dialogue, i, gold in examples:
        pred = classify_utterance(model, dialogue, i, vocab, window)
        confusion[COMPONENT_ORDER.index(gold), COMPONENT_ORDER.index(pred.label)] += 1
        hits += pred.label is gold
    accuracy = hits / len(examples) if examples else 0.0
    return ClassifierReport(split=split, accuracy=accuracy, confusion=confusion)


def train_classifier(corpus: Corpus, vocab: Vocabulary,
                     config: ClassifierTrainConfig, rng: Rng,
                     model: ComponentClassifier | None = None,
                     d_embed: int = 32, d_hidden: int = 32,
                     ) -> tuple[ComponentClassifier, ClassifierReport]:
    """Cross-entropy training over labeled utterances of the train split."""
    train_examples = _labeled_examples(corpus.subset(SplitName.TRAIN))
    if not train_examples:
        raise TrainingDataError("no labeled utterances in the train split")
    present = {label for _, _, label in train_examples}
    missing = [c.value for c in config.classes if c not in present]
    if missing:
        raise TrainingDataError(f"train split is missing classes: {missing}")

    if model is None:
        model = ComponentClassifier(rng.child("classifier-init"), len(vocab),
                                    d_embed, d_hidden)
    params = model.params()
    state = OptimizerState(initial_lr=config.learning_rate,
                           decay_factor=config.lr_decay)
    shuffle_rng = rng.child("classifier-shuffle")
    losses = []
    for _epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_examples))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_examples[j] for j in order[start:start + config.batch_size]]
            zero_grads(params)
            total = None
            for dialogue, i, gold in batch:
                probs = model.probabilities(dialogue, i, vocab, config.window)
                loss = cross_entropy(probs.reshape(1, -1),
                                     [COMPONENT_ORDER.index(gold)], pad_id=-1)
                total = loss if total is None else total + loss
            total.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in params]
            sgd_step(params, grads, state)
            epoch_losses.append(total.item() / len(batch))
        state.advance_epoch()
        losses.append(float(np.mean(epoch_losses)))

    val_examples = _labeled_examples(corpus.subset(SplitName.VAL))
    split_name = SplitName.VAL.value if val_examples else SplitName.TRAIN.value
    report = evaluate_classifier(model, val_examples or train_examples, vocab,
                                 config.window, split_name)
    report.losses = losses
    return model, report
