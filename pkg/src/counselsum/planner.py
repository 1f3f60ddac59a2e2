"""Planning engine and decoder: rotating attention, fusion, generation, training.

The two attention cycles share the decoder-derived query. Cycle 1 is keyed by
the knowledge rows (filtered positions masked out) with structural rows as
values; cycle 2 swaps the roles and sees every position. The concatenated
cycle outputs are fused to decoder width and injected into each decoder block
through a cross-attention sublayer whose output projection starts at zero, so
an untrained decoder ignores the planner and trained ablations only remove
information the model actually learned to use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ComponentClassifier, ComponentPrediction, classify_utterance, mask_fillers
from .config import RunConfig
from .corpus import BOS, Corpus, Dialogue, EOS, PAD, SplitName, Vocabulary, tokenize
from .knowledge import (FilteredDialogue, KnowledgeEncoder, Lexicon,
                        ScaffoldRepresentation, default_lexicon, embed_contextual,
                        filter_dialogue)
from .numerics.checkpoint import CheckpointError, load_tensors, save_tensors
from .numerics.layers import Dense, cross_entropy, scaled_dot_attention, uniform_param
from .numerics.optim import OptimizerState, sgd_step
from .numerics.rng import Rng
from .numerics.tensor import Tensor, concat, softmax, take_rows, zero_grads
from .sheaf import DialogueGraph, StructEncoder, StructRepresentation, build_graph


class GenerationError(RuntimeError):
    pass


@dataclass
class GenerationConfig:
    mode: str = "greedy"  # "greedy" | "beam"
    beam_width: int = 1
    max_len: int = 128
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.mode not in ("greedy", "beam"):
            raise ValueError(f"unknown generation mode {self.mode!r}")
        if self.beam_width < 1 or self.max_len < 1:
            raise ValueError("beam_width and max_len must be >= 1")


# -- rotating attention ---------------------------------------------------------


class PlanningEngine:
    def __init__(self, rng: Rng, decoder_width: int, d_rep: int, d_k: int, d_v: int):
        self.q_proj = Dense(rng.child("q"), decoder_width, d_k)
        self.k_key = Dense(rng.child("k_key"), d_rep, d_k)
        self.k_val = Dense(rng.child("k_val"), d_rep, d_v)
        self.s_key = Dense(rng.child("s_key"), d_rep, d_k)
        self.s_val = Dense(rng.child("s_val"), d_rep, d_v)
        self.fuse_proj = Dense(rng.child("fuse"), 2 * d_v, decoder_width)

    def named_params(self, prefix: str):
        out = []
        for name in ("q_proj", "k_key", "k_val", "s_key", "s_val", "fuse_proj"):
            out += getattr(self, name).named_params(f"{prefix}.{name}")
        return out


def rotate_cycles(engine: PlanningEngine, q_states: Tensor,
                  r_k: ScaffoldRepresentation, r_s: StructRepresentation,
                  keep=None):
    """Both attention cycles plus their weights (for diagnostics)."""
    rk, rs = r_k.matrix, r_s.matrix
    if rk.shape[0] != rs.shape[0]:
        raise ValueError(f"knowledge rows {rk.shape[0]} != structural rows {rs.shape[0]}")
    if q_states.shape[0] < 1:
        raise ValueError("rotate_cycles needs at least one query state")
    mask = None
    if keep is not None:
        mask = np.asarray(keep, dtype=bool)
        if mask.shape != (rk.shape[0],):
            raise ValueError(f"keep mask length {mask.shape} != {rk.shape[0]} rows")
        if not mask.any():
            raise ValueError("empty attention support: all positions masked "
                             "in the knowledge cycle")
    q = engine.q_proj(q_states)
    cycle1, weights1 = scaled_dot_attention(q, engine.k_key(rk), engine.s_val(rs),
                                            mask=mask)
    cycle2, weights2 = scaled_dot_attention(q, engine.s_key(rs), engine.k_val(rk))
    return cycle1, cycle2, weights1, weights2


def rotate_attend(engine: PlanningEngine, q_states: Tensor,
                  r_k: ScaffoldRepresentation, r_s: StructRepresentation,
                  keep=None) -> Tensor:
    cycle1, cycle2, _, _ = rotate_cycles(engine, q_states, r_k, r_s, keep)
    return concat([cycle1, cycle2], axis=1)


def fuse(engine: PlanningEngine, r_rep: Tensor) -> Tensor:
    return engine.fuse_proj(r_rep)


# -- decoder ---------------------------------------------------------------------


class AttentionSublayer:
    def __init__(self, rng: Rng, width: int, zero_output: bool = False):
        self.wq = Dense(rng.child("wq"), width, width)
        self.wk = Dense(rng.child("wk"), width, width)
        self.wv = Dense(rng.child("wv"), width, width)
        self.wo = Dense(rng.child("wo"), width, width, zero_init=zero_output)

    def __call__(self, x: Tensor, kv: Tensor, mask) -> Tensor:
        attended, _ = scaled_dot_attention(self.wq(x), self.wk(kv), self.wv(kv), mask)
        return self.wo(attended)

    def named_params(self, prefix: str):
        out = []
        for name in ("wq", "wk", "wv", "wo"):
            out += getattr(self, name).named_params(f"{prefix}.{name}")
        return out


class DecoderBlock:
    def __init__(self, rng: Rng, width: int, cross_zero_init: bool = True):
        self.self_attn = AttentionSublayer(rng.child("self"), width)
        self.cross_attn = AttentionSublayer(rng.child("cross"), width,
                                            zero_output=cross_zero_init)
        self.ff1 = Dense(rng.child("ff1"), width, 2 * width)
        self.ff2 = Dense(rng.child("ff2"), 2 * width, width)

    def __call__(self, x: Tensor, memory: Tensor | None, causal: np.ndarray) -> Tensor:
        x = x + self.self_attn(x, x, causal)
        if memory is not None:
            x = x + self.cross_attn(x, memory, causal)
        return x + self.ff2(self.ff1(x).relu())

    def named_params(self, prefix: str):
        return (self.self_attn.named_params(f"{prefix}.self")
                + self.cross_attn.named_params(f"{prefix}.cross")
                + self.ff1.named_params(f"{prefix}.ff1")
                + self.ff2.named_params(f"{prefix}.ff2"))


class DecoderLM:
    """Causal decoder; planner memory rows align 1:1 with prefix positions."""

    def __init__(self, rng: Rng, vocab_size: int, width: int, blocks: int,
                 max_positions: int, tie_head: bool = False,
                 cross_zero_init: bool = True):
        self.width = width
        self.max_positions = max_positions
        self.tie_head = tie_head
        self.tok_emb = uniform_param(rng.child("tok"), (vocab_size, width), width)
        self.pos_emb = uniform_param(rng.child("pos"), (max_positions, width), width)
        self.blocks = [DecoderBlock(rng.child(f"block{i}"), width, cross_zero_init)
                       for i in range(blocks)]
        if tie_head:
            self.head_bias = uniform_param(rng.child("head"), (vocab_size,), width)
            self.head = None
        else:
            self.head = Dense(rng.child("head"), width, vocab_size)
            self.head_bias = None

    def _states(self, prefix: list[int], memory: Tensor | None) -> Tensor:
        t = len(prefix)
        if t < 1:
            raise GenerationError("decoder prefix must contain at least one token")
        if t > self.max_positions:
            raise GenerationError(f"prefix length {t} exceeds positional capacity "
                                  f"{self.max_positions}")
        if memory is not None and memory.shape[0] != t:
            raise ValueError(f"memory rows {memory.shape[0]} != prefix length {t}")
        x = take_rows(self.tok_emb, prefix) + take_rows(self.pos_emb, range(t))
        causal = np.tril(np.ones((t, t), dtype=bool))
        for block in self.blocks:
            x = block(x, memory, causal)
        return x

    def hidden(self, prefix: list[int]) -> Tensor:
        """Planner-free final-block states; these act as the rotating query."""
        return self._states(prefix, None)

    def forward_probs(self, prefix: list[int], memory: Tensor | None) -> Tensor:
        h = self._states(prefix, memory)
        logits = h @ self.tok_emb.T + self.head_bias if self.tie_head else self.head(h)
        return softmax(logits, axis=-1)

    def named_params(self, prefix: str):
        out = [(f"{prefix}.tok", self.tok_emb), (f"{prefix}.pos", self.pos_emb)]
        for i, block in enumerate(self.blocks):
            out += block.named_params(f"{prefix}.block{i}")
        if self.tie_head:
            out.append((f"{prefix}.head_bias", self.head_bias))
        else:
            out += self.head.named_params(f"{prefix}.head")
        return out


def decode_step(lm: DecoderLM, prefix: list[int], memory: Tensor | None) -> Tensor:
    """Next-token distribution after the last prefix position."""
    probs = lm.forward_probs(list(prefix), memory)
    return probs[probs.shape[0] - 1]


# -- full model -------------------------------------------------------------------


class SummaryModel:
    def __init__(self, config: RunConfig, vocab: Vocabulary, lexicon: Lexicon,
                 classifier: ComponentClassifier, knowledge: KnowledgeEncoder,
                 struct: StructEncoder, engine: PlanningEngine, decoder: DecoderLM):
        self.config = config
        self.vocab = vocab
        self.lexicon = lexicon
        self.classifier = classifier
        self.knowledge = knowledge
        self.struct = struct
        self.engine = engine
        self.decoder = decoder

    def named_params(self):
        return (self.classifier.named_params("clf")
                + self.knowledge.named_params("scaf")
                + self.struct.named_params("sheaf")
                + self.engine.named_params("plan")
                + self.decoder.named_params("dec"))

    def trainable_params(self):
        """End-to-end training updates everything but the (pre-trained) classifier."""
        return [t for name, t in self.named_params() if not name.startswith("clf.")]


def build_model(config: RunConfig, vocab: Vocabulary,
                lexicon: Lexicon | None = None,
                cross_zero_init: bool = True) -> SummaryModel:
    rng = Rng(config.seed).child("model-init")
    v = len(vocab)
    classifier = ComponentClassifier(rng.child("clf"), v,
                                     config.clf_d_embed, config.clf_d_hidden)
    knowledge = KnowledgeEncoder(rng.child("scaf"), v, config.d_embed, config.d_hidden)
    struct = StructEncoder(rng.child("sheaf"), config.d_embed, config.d_s,
                           config.d_hidden, diagonal=not config.dense_maps)
    engine = PlanningEngine(rng.child("plan"), config.decoder_width,
                            knowledge.width, config.d_k, config.d_v)
    decoder = DecoderLM(rng.child("dec"), v, config.decoder_width,
                        config.decoder_blocks, config.max_len + 1,
                        tie_head=config.tie_lm_head, cross_zero_init=cross_zero_init)
    return SummaryModel(config, vocab, lexicon or default_lexicon(),
                        classifier, knowledge, struct, engine, decoder)


@dataclass
class PlanContext:
    """Everything the decode loop needs that does not depend on the prefix."""

    r_k: ScaffoldRepresentation
    r_s: StructRepresentation
    keep: list[bool]
    scores: list[float]
    predictions: list[ComponentPrediction]
    graph: DialogueGraph
    filtered: FilteredDialogue

    @property
    def attention_keep(self):
        # With nothing retained, every knowledge row is the learned mask
        # embedding; the cycle then attends those placeholders unmasked
        # instead of failing on an empty support.
        return self.keep if any(self.keep) else None


def build_plan(model: SummaryModel, dialogue: Dialogue,
               component_mask: list[bool] | None = None) -> PlanContext:
    cfg = model.config
    predictions = [classify_utterance(model.classifier, dialogue, i, model.vocab,
                                      cfg.clf_window)
                   for i in range(len(dialogue.utterances))]
    if component_mask is None:
        component_mask = mask_fillers(dialogue, predictions,
                                      use_gold=cfg.use_gold_components)
    filtered = filter_dialogue(dialogue, component_mask, model.lexicon,
                               model.knowledge.static_table.data, model.vocab,
                               cfg.phq_threshold)
    ctx_cache = [embed_contextual(dialogue, i, model.knowledge.ctx, model.vocab)
                 for i in range(len(dialogue.utterances))]
    r_k = model.knowledge.scaffold(filtered, model.vocab, ctx_cache)
    graph = build_graph(dialogue, model.knowledge.ctx, model.vocab,
                        same_speaker_edges=cfg.same_speaker_edges,
                        feature_cache=ctx_cache)
    r_s = model.struct.encode(graph)
    return PlanContext(r_k=r_k, r_s=r_s, keep=filtered.keep, scores=filtered.scores,
                       predictions=predictions, graph=graph, filtered=filtered)


def plan_memory(model: SummaryModel, plan: PlanContext, prefix: list[int],
                ablate: str | None = None) -> Tensor:
    """Rotating attention queried by the prefix's planner-free hidden states."""
    h0 = model.decoder.hidden(prefix)
    cycle1, cycle2, _, _ = rotate_cycles(model.engine, h0, plan.r_k, plan.r_s,
                                         plan.attention_keep)
    if ablate == "no-domain":
        cycle1 = Tensor(np.zeros(cycle1.shape))
    elif ablate == "no-struct":
        cycle2 = Tensor(np.zeros(cycle2.shape))
    elif ablate is not None:
        raise ValueError(f"unknown ablation {ablate!r}")
    return fuse(model.engine, concat([cycle1, cycle2], axis=1))


def forward_probs(model: SummaryModel, plan: PlanContext, prefix: list[int],
                  ablate: str | None = None) -> Tensor:
    memory = plan_memory(model, plan, prefix, ablate)
    return model.decoder.forward_probs(prefix, memory)


def teacher_forced_loss(model: SummaryModel, plan: PlanContext,
                        summary_ids: list[int]) -> Tensor:
    capacity = model.decoder.max_positions - 1
    ids = summary_ids[:capacity]
    prefix = [BOS] + ids
    targets = ids + [EOS]
    probs = forward_probs(model, plan, prefix)
    return cross_entropy(probs, targets, pad_id=PAD)


# -- generation --------------------------------------------------------------------


def _detokenize(model: SummaryModel, ids: list[int]) -> str:
    return " ".join(model.vocab.id_to_token[i] for i in ids)


def _greedy(model: SummaryModel, plan: PlanContext, gen: GenerationConfig,
            ablate: str | None) -> list[int]:
    prefix = [BOS]
    for _ in range(gen.max_len):
        dist = forward_probs(model, plan, prefix, ablate)
        token = int(np.argmax(dist.data[-1]))
        if token == EOS:
            break
        prefix.append(token)
    return prefix[1:]


def _beam(model: SummaryModel, plan: PlanContext, gen: GenerationConfig,
          ablate: str | None) -> list[int]:
    # hypotheses: (accumulated logprob, token ids incl. BOS, finished)
    hyps: list[tuple[float, list[int], bool]] = [(0.0, [BOS], False)]
    for _ in range(gen.max_len):
        if all(done for _, _, done in hyps):
            break
        candidates: list[tuple[float, list[int], bool]] = []
        for logp, prefix, done in hyps:
            if done:
                candidates.append((logp, prefix, True))
                continue
            dist = forward_probs(model, plan, prefix, ablate).data[-1]
            logs = np.log(np.maximum(dist, 1e-300))
            top = np.argsort(-logs, kind="stable")[:gen.beam_width]
            for token in top:
                token = int(token)
                if token == EOS:
                    candidates.append((logp + float(logs[token]), prefix, True))
                else:
                    candidates.append((logp + float(logs[token]), prefix + [token], False))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        hyps = candidates[:gen.beam_width]

    def final_score(c):
        logp, prefix, _ = c
        length = max(1, len(prefix) - 1)
        return logp / (length ** gen.length_penalty) if gen.length_penalty > 0 else logp

    best = min(hyps, key=lambda c: (-final_score(c), c[1]))
    return best[1][1:]


def generate_summary(model: SummaryModel, dialogue: Dialogue,
                     gen: GenerationConfig | None = None,
                     plan: PlanContext | None = None,
                     ablate: str | None = None) -> str:
    """Full pipeline: classify, filter, scaffold, diffuse, then decode."""
    cfg = model.config
    if gen is None:
        gen = GenerationConfig(
            mode="beam" if cfg.beam_width > 1 else "greedy",
            beam_width=cfg.beam_width, max_len=cfg.max_len,
            length_penalty=cfg.length_penalty)
    if gen.max_len > model.decoder.max_positions - 1:
        raise GenerationError(f"max_len {gen.max_len} exceeds decoder capacity "
                              f"{model.decoder.max_positions - 1}")
    if plan is None:
        plan = build_plan(model, dialogue)
    if gen.mode == "beam" and gen.beam_width > 1:
        ids = _beam(model, plan, gen, ablate)
    else:
        ids = _greedy(model, plan, gen, ablate)
    return _detokenize(model, ids)


# -- end-to-end training --------------------------------------------------------------


class TrainingError(ValueError):
    pass


def train_end_to_end(corpus: Corpus, vocab: Vocabulary, config: RunConfig,
                     classifier: ComponentClassifier | None = None,
                     model: SummaryModel | None = None,
                     lexicon: Lexicon | None = None,
                     ) -> tuple[SummaryModel, list[float]]:
    """Teacher-forced training on gold summaries; returns per-epoch mean loss."""
    if model is None:
        model = build_model(config, vocab, lexicon)
        if classifier is not None:
            model.classifier = classifier
    train = [d for d in corpus.subset(SplitName.TRAIN) if d.gold_summary is not None]
    if not train:
        raise TrainingError("no gold summaries in the train split")

    # The classifier is frozen here, so component masks are loop invariants.
    masks: dict[str, list[bool]] = {}
    for d in train:
        preds = [classify_utterance(model.classifier, d, i, vocab, config.clf_window)
                 for i in range(len(d.utterances))]
        masks[d.id] = mask_fillers(d, preds, use_gold=config.use_gold_components)
    summary_ids = {d.id: vocab.encode(tokenize(d.gold_summary)) for d in train}

    params = model.trainable_params()
    state = OptimizerState(initial_lr=config.learning_rate, decay_factor=config.lr_decay)
    shuffle_rng = Rng(config.seed).child("train-shuffle")
    losses: list[float] = []
    for _epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train[j] for j in order[start:start + config.batch_size]]
            zero_grads(params)
            total = None
            for d in batch:
                plan = build_plan(model, d, component_mask=masks[d.id])
                loss = teacher_forced_loss(model, plan, summary_ids[d.id])
                total = loss if total is None else total + loss
            total.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                     for p in params]
            sgd_step(params, grads, state)
            batch_losses.append(total.item() / len(batch))
        state.advance_epoch()
        losses.append(float(np.mean(batch_losses)))
    return model, losses


# -- checkpoint io -----------------------------------------------------------------


def _hash_to_array(hex_digest: str) -> np.ndarray:
    return np.frombuffer(bytes.fromhex(hex_digest), dtype=np.uint8).astype(np.float64)


def _array_to_hash(arr: np.ndarray) -> str:
    return bytes(arr.astype(np.uint8)).hex()


def save_model(path, model: SummaryModel) -> None:
    tensors = {name: t.data for name, t in model.named_params()}
    tensors["meta.config_hash"] = _hash_to_array(model.config.config_hash())
    tensors["meta.vocab_hash"] = _hash_to_array(model.vocab.content_hash())
    save_tensors(path, tensors)


def load_model(path, config: RunConfig, vocab: Vocabulary,
               lexicon: Lexicon | None = None) -> SummaryModel:
    """Rebuild the model for `config` and load weights, failing fast when the
    stored vocabulary hash does not match the supplied vocabulary."""
    stored = load_tensors(path)
    if "meta.vocab_hash" not in stored:
        raise CheckpointError(f"{path}: missing vocabulary hash")
    stored_hash = _array_to_hash(stored["meta.vocab_hash"])
    if stored_hash != vocab.content_hash():
        raise CheckpointError(
            f"{path}: vocabulary hash mismatch (checkpoint {stored_hash[:12]}..., "
            f"corpus {vocab.content_hash()[:12]}...); the corpus does not match "
            "the one this model was trained on")
    model = build_model(config, vocab, lexicon)
    for name, tensor in model.named_params():
        if name not in stored:
            raise CheckpointError(f"{path}: checkpoint is missing tensor {name!r}")
        arr = stored[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {arr.shape}, "
                                  f"expected {tensor.data.shape} (config mismatch?)")
        tensor.data[...] = arr
    return model


def stored_config_hash(path) -> str:
    stored = load_tensors(path)
    if "meta.config_hash" not in stored:
        raise CheckpointError(f"{path}: missing config hash")
    return _array_to_hash(stored["meta.config_hash"])


# -- diagnostics --------------------------------------------------------------------


@dataclass
class PlanDiagnostics:
    plan: PlanContext
    eig_min: float
    eig_max: float
    knowledge_row_norms: np.ndarray
    struct_row_norms: np.ndarray
    knowledge_cycle_entropy: float
    struct_cycle_entropy: float


def _mean_entropy(weights: np.ndarray) -> float:
    safe = np.where(weights > 0.0, weights, 1.0)
    return float(-(weights * np.log(safe)).sum(axis=-1).mean())


def plan_diagnostics(model: SummaryModel, dialogue: Dialogue) -> PlanDiagnostics:
    from .sheaf import assemble_laplacian, learn_restriction_maps

    plan = build_plan(model, dialogue)
    sheaf = learn_restriction_maps(plan.graph, model.struct.map_learner)
    eigs = assemble_laplacian(plan.graph, sheaf).eigenvalues()
    h0 = model.decoder.hidden([BOS])
    _, _, weights1, weights2 = rotate_cycles(model.engine, h0, plan.r_k, plan.r_s,
                                             plan.attention_keep)
    return PlanDiagnostics(
        plan=plan,
        eig_min=float(eigs.min()),
        eig_max=float(eigs.max()),
        knowledge_row_norms=np.linalg.norm(plan.r_k.matrix.data, axis=1),
        struct_row_norms=np.linalg.norm(plan.r_s.matrix.data, axis=1),
        knowledge_cycle_entropy=_mean_entropy(weights1.data),
        struct_cycle_entropy=_mean_entropy(weights2.data),
    )
