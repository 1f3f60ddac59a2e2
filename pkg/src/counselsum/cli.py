"""Command-line surface: gen-synthetic, train, summarize, evaluate, inspect-plan.

Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error. Output
files are written atomically, so failed runs never leave partial artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .classifier import ClassifierTrainConfig, TrainingDataError, train_classifier
from .config import ConfigError, RunConfig, load_config
from .corpus import (Component, Corpus, CorpusError, SplitName, SyntheticSpec,
                     build_vocab, generate_synthetic, load_corpus, save_corpus,
                     split_corpus)
from .evaluation import EvalReport, score_dialogue
from .knowledge import LexiconError, default_lexicon, load_lexicon
from .numerics.checkpoint import CheckpointError
from .planner import (GenerationConfig, GenerationError, TrainingError,
                      build_model, build_plan, generate_summary, load_model,
                      plan_diagnostics, save_model, train_end_to_end)

DATA_ERRORS = (CorpusError, ConfigError, LexiconError, CheckpointError,
               TrainingError, TrainingDataError, FileNotFoundError)


def _positive_int(raw: str) -> int:
    value = int(raw)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonnegative_int(raw: str) -> int:
    value = int(raw)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def _write_text_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name,
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "epochs", "batch_size", "learning_rate", "lr_decay",
                "phq_threshold", "beam_width", "max_len", "min_count"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "use_gold_components", False):
        overrides["use_gold_components"] = True
    if getattr(args, "same_speaker_edges", False):
        overrides["same_speaker_edges"] = True
    return load_config(getattr(args, "config", None), overrides)


def _load_split_corpus(path, cfg: RunConfig) -> Corpus:
    return split_corpus(load_corpus(path), cfg.split_ratios, cfg.seed)


def _lexicon_from_args(args):
    return load_lexicon(args.lexicon) if getattr(args, "lexicon", None) else default_lexicon()


def _select_dialogues(corpus: Corpus, split: str):
    if split == "all":
        return corpus.dialogues
    return corpus.subset(SplitName(split))


# -- commands -----------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(dialogues=args.dialogues, min_len=args.min_len,
                         max_len=args.max_len)
    corpus = generate_synthetic(spec, args.seed)
    save_corpus(args.out, corpus)
    counts = {c.value: 0 for c in Component}
    for d in corpus.dialogues:
        for u in d.utterances:
            counts[u.component.value] += 1
    total = sum(counts.values())
    print(f"wrote {len(corpus.dialogues)} dialogues, {total} utterances to {args.out}")
    for name, count in counts.items():
        print(f"  {name}: {count} ({count / total:.1%})")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    corpus = _load_split_corpus(args.corpus, cfg)
    vocab = build_vocab(corpus, cfg.min_count)
    lexicon = _lexicon_from_args(args)
    model = build_model(cfg, vocab, lexicon)

    if not cfg.use_gold_components:
        clf_cfg = ClassifierTrainConfig(
            window=cfg.clf_window, batch_size=cfg.batch_size, epochs=cfg.epochs,
            learning_rate=cfg.learning_rate, lr_decay=cfg.lr_decay)
        from .numerics.rng import Rng

        _, report = train_classifier(corpus, vocab, clf_cfg, Rng(cfg.seed),
                                     model=model.classifier)
        print(report.render(), end="")

    model, losses = train_end_to_end(corpus, vocab, cfg, model=model)
    save_model(args.checkpoint, model)
    loss_log = args.loss_log or f"{args.checkpoint}.losses.txt"
    _write_text_atomic(loss_log, "".join(f"{i + 1}\t{loss:.6f}\n"
                                         for i, loss in enumerate(losses)))
    print(f"wrote checkpoint to {args.checkpoint} and loss log to {loss_log}")
    return 0


def cmd_summarize(args) -> int:
    cfg = _config_from_args(args)
    corpus = _load_split_corpus(args.corpus, cfg)
    vocab = build_vocab(corpus, cfg.min_count)
    model = load_model(args.checkpoint, cfg, vocab, _lexicon_from_args(args))
    gen = GenerationConfig(mode="beam" if cfg.beam_width > 1 else "greedy",
                           beam_width=cfg.beam_width, max_len=cfg.max_len,
                           length_penalty=cfg.length_penalty)
    lines = []
    for dialogue in _select_dialogues(corpus, args.split):
        summary = generate_summary(model, dialogue, gen)
        lines.append(json.dumps({"id": dialogue.id, "summary": summary},
                                ensure_ascii=False))
    _write_text_atomic(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(lines)} summaries to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    corpus = _load_split_corpus(args.corpus, cfg)
    vocab = build_vocab(corpus, cfg.min_count)
    model = load_model(args.checkpoint, cfg, vocab, _lexicon_from_args(args))
    dialogues = [d for d in _select_dialogues(corpus, args.split)
                 if d.gold_summary is not None]
    if not dialogues:
        raise CorpusError(f"no dialogues with gold summaries in split {args.split!r}")
    gen = GenerationConfig(mode="beam" if cfg.beam_width > 1 else "greedy",
                           beam_width=cfg.beam_width, max_len=cfg.max_len,
                           length_penalty=cfg.length_penalty)
    rows = []
    for dialogue in dialogues:
        plan = build_plan(model, dialogue)
        summary = generate_summary(model, dialogue, gen, plan=plan,
                                   ablate=args.ablate)
        if cfg.use_gold_components:
            labels = [u.component if u.component is not None else p.label
                      for u, p in zip(dialogue.utterances, plan.predictions)]
        else:
            labels = [p.label for p in plan.predictions]
        rows.append(score_dialogue(dialogue, labels, summary))
    report = EvalReport(rows=rows, config_hash=cfg.config_hash(),
                        checkpoint_name=Path(args.checkpoint).name,
                        ablation=args.ablate or "none")
    _write_text_atomic(args.out, report.render())
    print(report.render(), end="")
    return 0


def cmd_inspect_plan(args) -> int:
    cfg = _config_from_args(args)
    corpus = _load_split_corpus(args.corpus, cfg)
    vocab = build_vocab(corpus, cfg.min_count)
    model = load_model(args.checkpoint, cfg, vocab, _lexicon_from_args(args))
    dialogue = corpus.by_id(args.dialogue)
    diag = plan_diagnostics(model, dialogue)
    print(f"# dialogue {dialogue.id}: {len(dialogue.utterances)} utterances, "
          f"{len(diag.plan.graph.edges)} graph edges")
    print("idx\tkept\tscore\tpredicted\tgold\ttext")
    for i, utt in enumerate(dialogue.utterances):
        kept = "keep" if diag.plan.keep[i] else "mask"
        gold = utt.component.value if utt.component else "-"
        print(f"{i}\t{kept}\t{diag.plan.scores[i]:.4f}\t"
              f"{diag.plan.predictions[i].label.value}\t{gold}\t{utt.text}")
    print(f"laplacian_eig_range\t[{diag.eig_min:.3e}, {diag.eig_max:.6f}]")
    knorm = diag.knowledge_row_norms
    snorm = diag.struct_row_norms
    print(f"knowledge_row_norm\tmin {knorm.min():.4f}\tmax {knorm.max():.4f}")
    print(f"struct_row_norm\tmin {snorm.min():.4f}\tmax {snorm.max():.4f}")
    print(f"knowledge_cycle_entropy\t{diag.knowledge_cycle_entropy:.4f}")
    print(f"struct_cycle_entropy\t{diag.struct_cycle_entropy:.4f}")
    return 0


# -- parser -------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, checkpoint_required: bool = True):
    parser.add_argument("--corpus", required=True, help="corpus file (one dialogue per line)")
    parser.add_argument("--checkpoint", required=checkpoint_required)
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--lexicon", default=None, help="PHQ-9 lexicon file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--phq-threshold", dest="phq_threshold", type=float, default=None)
    parser.add_argument("--min-count", dest="min_count", type=_positive_int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="counselsum",
        description="Counseling-note generation: filter, scaffold, diffuse, plan, decode.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a labeled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--dialogues", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-len", dest="min_len", type=_positive_int, default=4)
    p.add_argument("--max-len", dest="max_len", type=_positive_int, default=12)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("train", help="train classifier and summarizer, write checkpoint")
    _add_common(p)
    p.add_argument("--loss-log", dest="loss_log", default=None)
    p.add_argument("--epochs", type=_nonnegative_int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--lr-decay", dest="lr_decay", type=float, default=None)
    p.add_argument("--use-gold-components", dest="use_gold_components",
                   action="store_true")
    p.add_argument("--same-speaker-edges", dest="same_speaker_edges",
                   action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", help="generate one summary per dialogue")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    p.add_argument("--beam", dest="beam_width", type=_positive_int, default=None)
    p.add_argument("--max-len", dest="max_len", type=_positive_int, default=None)
    p.add_argument("--use-gold-components", dest="use_gold_components",
                   action="store_true")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="score generated summaries against gold")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--beam", dest="beam_width", type=_positive_int, default=None)
    p.add_argument("--max-len", dest="max_len", type=_positive_int, default=None)
    p.add_argument("--ablate", choices=["no-domain", "no-struct"], default=None)
    p.add_argument("--use-gold-components", dest="use_gold_components",
                   action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-plan", help="dump planner internals for one dialogue")
    _add_common(p)
    p.add_argument("--dialogue", required=True, help="dialogue id")
    p.add_argument("--use-gold-components", dest="use_gold_components",
                   action="store_true")
    p.set_defaults(func=cmd_inspect_plan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
