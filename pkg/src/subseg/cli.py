"""Command line interface.

Commands
  build-lexicon   count subwords in a corpus and write the top-V lexicon
  train           train a segmental or baseline LM; writes checkpoint + log
  segment         segment text with a trained model (dashes or JSON lines)
  eval            BPC, segmentation metrics, gate statistics
  baseline        train/apply BPE and unigram segmenters; entropy criteria

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
SUBSEG_VERBOSITY=0 silences per-epoch progress on stderr (files and stdout
payloads are unaffected; they stay byte-deterministic for a fixed seed).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import evaluation, lm, segmenters, sslm
from .checkpoint import dumps_checkpoint, read_checkpoint
from .config import PRESETS, RunConfig, build_config, echo_config
from .corpus import (
    batchify,
    load_corpus,
    make_sequence,
    text_word_spans,
    word_level_batches,
)
from .errors import DataError, NumericError, UsageError
from .lexicon import Lexicon, build_lexicon, save_lexicon
from .lm import LmConfig, LmParams
from .segmenters import BoundaryCriterion, cuts_to_pieces
from .sslm import SslmConfig, SslmParams
from .training import Schedule, train_loop


class _Parser(argparse.ArgumentParser):
    """argparse reports errors by exiting; route them to exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _verbosity() -> int:
    raw = os.environ.get("SUBSEG_VERBOSITY", "1")
    try:
        return int(raw)
    except ValueError:
        return 1


def _read_lines(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _write_lines(path: str, lines: list[str]) -> None:
    text = "\n".join(lines) + ("\n" if lines else "")
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# --- word segmentation shared by segment/eval/baseline ---------------------


def _load_model(path: str):
    """(kind, params) from any checkpoint; kind is 'sslm' or the LM token kind."""
    ck = read_checkpoint(path)
    if ck.kind == "sslm":
        return "sslm", SslmParams.from_checkpoint(ck)
    if ck.kind == "baseline-lm":
        p = LmParams.from_checkpoint(ck)
        return p.config.kind, p
    raise DataError(f"{path}: unknown checkpoint kind {ck.kind!r}")


def _require_segmenter(kind: str) -> None:
    if kind == "char":
        raise DataError(
            "a char-level LM defines no subwords; use `subseg baseline entropy` instead"
        )


def _line_pieces(kind: str, p, line: str) -> list[tuple[tuple[int, int], list[str]]]:
    """Per word span of `line`: (span, subword pieces). Spans tile the line.

    Pieces are sliced from the original text, so characters outside the model
    vocabulary pass through unchanged."""
    if kind == "sslm":
        seq = make_sequence(line, p.vocab)
        if len(seq) == 0:
            return []
        seg = sslm.viterbi_segment(p, seq)
        return [
            ((s, e), cuts_to_pieces(line[s:e], set(cuts)))
            for (s, e), cuts in zip(seg.spans, seg.cuts)
        ]
    return [((s, e), p.word_tokens(line[s:e])) for s, e in text_word_spans(line)]


def _dash_line(pieces_per_span: list[tuple[tuple[int, int], list[str]]]) -> str:
    return "".join("-".join(pieces) for _, pieces in pieces_per_span)


def _segment_word(kind: str, p, word: str) -> list[str]:
    """Pieces of one word segmented in isolation (flat across its spans)."""
    out: list[str] = []
    for _, pieces in _line_pieces(kind, p, word):
        out.extend(pieces)
    return out


# --- build-lexicon ----------------------------------------------------------


def cmd_build_lexicon(args) -> int:
    seqs, vocab = load_corpus(args.corpus, min_count=args.min_count)
    lex = build_lexicon(seqs, vocab, args.size, args.max_len)
    save_lexicon(lex, args.out)
    print(f"lexicon\tentries={len(lex.entries)}\tmax_len={lex.max_len}\t{args.out}")
    return 0


# --- train ------------------------------------------------------------------


def _parse_overrides(pairs: Optional[list[str]]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def _sslm_trainer(cfg: RunConfig, train_seqs, valid_seqs, vocab, rng):
    if cfg.lexicon_size > 0:
        lex = build_lexicon(train_seqs, vocab, cfg.lexicon_size, cfg.max_seg_len)
    else:
        lex = Lexicon.empty(cfg.max_seg_len)
    sconf = SslmConfig(
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
        num_layers=cfg.num_layers,
        dropout=cfg.dropout,
        dp_max_seg=cfg.resolved_dp_max_seg(),
        mode=cfg.mode,
    )
    p = SslmParams(sconf, vocab, lex, rng)
    if cfg.mode == "long-range":
        fixed = batchify(train_seqs, vocab, "long-range", cfg.batch_size, cfg.seq_len)
        epoch_batches = lambda epoch: fixed
    else:
        epoch_batches = lambda epoch: word_level_batches(
            train_seqs, vocab, cfg.batch_size, rng
        )

    def loss_fn(batch, state):
        loss, new_state = sslm.nll_loss(
            p, batch, state if batch.carryover else None, training=True, rng=rng
        )
        return loss, batch.total_chars(), new_state

    valid_fn = lambda: sslm.corpus_bpc(p, valid_seqs, cfg.batch_size, cfg.seq_len)
    save_fn = lambda: dumps_checkpoint(
        "sslm", p.hyper(), [(n, t.data) for n, t in p.named_params()]
    )
    return p, epoch_batches, loss_fn, valid_fn, save_fn


def _lm_trainer(cfg: RunConfig, train_seqs, valid_seqs, vocab, rng):
    kind = cfg.model.replace("-lm", "")
    bpe = ulm = None
    if kind == "bpe":
        bpe = segmenters.bpe_train(train_seqs, vocab, cfg.bpe_merges)
    elif kind == "ulm":
        ulm = segmenters.ulm_train(train_seqs, vocab, cfg.ulm_seed_size, cfg.ulm_pieces)
    lconf = LmConfig(
        kind=kind,
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
        num_layers=cfg.num_layers,
        dropout=cfg.dropout,
    )
    p = LmParams(lconf, vocab, rng, bpe=bpe, ulm=ulm)
    fixed = lm.lm_batches(p, train_seqs, cfg.batch_size, cfg.seq_len)
    epoch_batches = lambda epoch: fixed

    def loss_fn(batch, state):
        loss, new_state = lm.lm_nll_loss(
            p, batch, state if batch.carryover else None, training=True, rng=rng
        )
        return loss, batch.chars, new_state

    valid_fn = lambda: lm.lm_corpus_bpc(p, valid_seqs)
    save_fn = lambda: dumps_checkpoint(
        "baseline-lm", p.hyper(), [(n, t.data) for n, t in p.named_params()]
    )
    return p, epoch_batches, loss_fn, valid_fn, save_fn


def cmd_train(args) -> int:
    cfg = build_config(args.preset, args.config, _parse_overrides(args.set))
    rng = np.random.default_rng(cfg.seed)
    train_seqs, vocab = load_corpus(args.train, min_count=cfg.min_count)
    valid_seqs, _ = load_corpus(args.valid, vocab=vocab)
    if cfg.model == "sslm":
        p, epoch_batches, loss_fn, valid_fn, save_fn = _sslm_trainer(
            cfg, train_seqs, valid_seqs, vocab, rng
        )
    else:
        p, epoch_batches, loss_fn, valid_fn, save_fn = _lm_trainer(
            cfg, train_seqs, valid_seqs, vocab, rng
        )
    params = [t for _, t in p.named_params()]

    progress = None
    if _verbosity() >= 1:
        progress = lambda line: print(line, file=sys.stderr)
    result = train_loop(
        params,
        epoch_batches,
        loss_fn,
        valid_fn,
        save_fn,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        clip=cfg.clip,
        sched=Schedule(cfg.halve_after, cfg.stop_after),
        max_epochs=cfg.max_epochs,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        log=progress,
    )
    status = "early-stopped" if result.stopped_early else "max-epochs"
    lines = echo_config(cfg)
    lines += result.log_lines
    lines.append(
        f"# status={status} best_epoch={result.best_epoch}"
        f" best_valid_bpc={result.best_valid_bpc:.6f}"
    )
    Path(args.out).write_bytes(result.best_blob)
    log_path = args.log if args.log else args.out + ".log"
    _write_lines(log_path, lines)
    print(f"{status}\tbest_epoch={result.best_epoch}\tbest_valid_bpc={result.best_valid_bpc:.6f}")
    return 0


# --- segment ----------------------------------------------------------------


def cmd_segment(args) -> int:
    kind, p = _load_model(args.checkpoint)
    _require_segmenter(kind)
    out = []
    for line in _read_lines(args.input):
        spans = _line_pieces(kind, p, line)
        if args.format == "dashes":
            out.append(_dash_line(spans))
        else:
            for (s, e), pieces in spans:
                record = {
                    "word": line[s:e],
                    "start": s,
                    "cuts": sorted(evaluation.cuts_of(pieces)),
                }
                out.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    _write_lines(args.out, out)
    return 0


# --- eval -------------------------------------------------------------------


def _format_scores(name: str, scores) -> list[tuple[str, float]]:
    return [
        (f"{name}_precision", scores.precision),
        (f"{name}_recall", scores.recall),
        (f"{name}_f1", scores.f1),
    ]


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    seg_metrics = {"mi", "mbi", "len"}
    corpus_metrics = {"bpc", "gate"}
    unknown = [m for m in metrics if m not in seg_metrics | corpus_metrics]
    if unknown:
        raise UsageError(f"unknown metrics: {', '.join(unknown)}")
    if not metrics:
        raise UsageError("no metrics requested")

    results: list[tuple[str, float]] = []
    kind = p = None
    if args.checkpoint:
        kind, p = _load_model(args.checkpoint)

    if any(m in seg_metrics for m in metrics):
        if not args.gold:
            raise UsageError("mi/mbi/len metrics require --gold")
        if args.canonical:
            frac = args.max_sub_fraction if args.max_sub_fraction >= 0 else None
            gold = evaluation.read_canonical_gold(args.gold, frac)
        else:
            gold = evaluation.read_gold(args.gold)
        if args.pred:
            pred = evaluation.read_predictions(args.pred)
        elif p is not None:
            _require_segmenter(kind)
            pred = [_segment_word(kind, p, g.word) for g in gold]
        else:
            raise UsageError("segmentation metrics need --pred or --checkpoint")
        for m in metrics:
            if m == "mi":
                results += _format_scores("mi", evaluation.mi_scores(pred, gold, args.average))
            elif m == "mbi":
                results += _format_scores("mbi", evaluation.mbi_scores(pred, gold, args.average))
            elif m == "len":
                results.append(("avg_seg_len", evaluation.avg_segment_length(pred)))

    if any(m in corpus_metrics for m in metrics):
        if not args.corpus:
            raise UsageError("bpc/gate metrics require --corpus")
        if p is None:
            raise UsageError("bpc/gate metrics require --checkpoint")
        seqs, _ = load_corpus(args.corpus, vocab=p.vocab)
        for m in metrics:
            if m == "bpc":
                if kind == "sslm":
                    val = sslm.corpus_bpc(p, seqs, args.batch_size, args.seq_len)
                else:
                    val = lm.lm_corpus_bpc(p, seqs)
                results.append(("bpc", val))
            elif m == "gate":
                if kind != "sslm":
                    raise DataError("gate statistics only exist for segmental models")
                results.append(("lexicon_coef", sslm.gate_statistics(p, seqs)))

    if args.json:
        print(json.dumps({k: v for k, v in results}, sort_keys=True))
    else:
        for name, value in results:
            print(f"{name}\t{value:.6f}")
    return 0


# --- baseline ---------------------------------------------------------------


def _apply_segmenter(word_fn, input_path: str, out_path: str) -> None:
    out = []
    for line in _read_lines(input_path):
        rendered = []
        for s, e in text_word_spans(line):
            word = line[s:e]
            pieces = [word] if (e - s == 1 and not word.isalpha()) else word_fn(word)
            rendered.append("-".join(pieces))
        out.append("".join(rendered))
    _write_lines(out_path, out)


def cmd_baseline_bpe(args) -> int:
    if args.train:
        seqs, vocab = load_corpus(args.train)
        model = segmenters.bpe_train(seqs, vocab, args.merges)
        segmenters.save_bpe(model, args.out)
        print(f"bpe\tmerges={len(model.merges)}\t{args.out}")
        return 0
    model = segmenters.load_bpe(args.model)
    _apply_segmenter(lambda w: segmenters.bpe_apply(model, w), args.input, args.out)
    return 0


def cmd_baseline_ulm(args) -> int:
    if args.train:
        seqs, vocab = load_corpus(args.train)
        model = segmenters.ulm_train(
            seqs,
            vocab,
            args.seed_size,
            args.pieces,
            prune_fraction=args.prune_fraction,
            em_iters=args.em_iters,
        )
        segmenters.save_ulm(model, args.out)
        print(f"ulm\tpieces={len(model.pieces)}\t{args.out}")
        return 0
    model = segmenters.load_ulm(args.model)
    _apply_segmenter(lambda w: segmenters.ulm_segment(model, w), args.input, args.out)
    return 0


def cmd_baseline_entropy(args) -> int:
    kind, p = _load_model(args.checkpoint)
    if kind != "char":
        raise DataError("entropy segmentation requires a char-lm checkpoint")
    criterion = BoundaryCriterion[args.criterion.upper()]
    out = []
    for line in _read_lines(args.input):
        seq = make_sequence(line, p.vocab)
        if len(seq) == 0:
            out.append("")
            continue
        profile = lm.entropy_profile(p, seq.ids)
        rendered = []
        for s, e in seq.spans:
            cuts = segmenters.entropy_segment(profile, (s, e), criterion)
            rendered.append("-".join(cuts_to_pieces(line[s:e], cuts, offset=s)))
        out.append("".join(rendered))
    _write_lines(args.out, out)
    return 0


# --- parser -----------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="subseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    q = sub.add_parser("build-lexicon", help="write the top-V subword lexicon of a corpus")
    q.add_argument("corpus", help="training text, one sequence per line")
    q.add_argument("--size", type=int, required=True, help="number of lexicon entries")
    q.add_argument("--max-len", type=int, default=8, help="max subword length")
    q.add_argument("--min-count", type=int, default=1, help="char vocab frequency floor")
    q.add_argument("--out", required=True, help="lexicon TSV path")
    q.set_defaults(func=cmd_build_lexicon)

    q = sub.add_parser("train", help="train a model and write the best checkpoint")
    q.add_argument("train", help="training corpus")
    q.add_argument("valid", help="validation corpus")
    q.add_argument("--out", required=True, help="checkpoint path")
    q.add_argument("--log", help="training log path (default: <out>.log)")
    q.add_argument("--preset", choices=sorted(PRESETS), help="named hyperparameter set")
    q.add_argument("--config", help="key=value config file")
    q.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("segment", help="segment text with a trained model")
    q.add_argument("checkpoint", help="sslm / bpe-lm / ulm-lm checkpoint")
    q.add_argument("input", help="text file, or - for stdin")
    q.add_argument("--format", choices=("dashes", "json"), default="dashes")
    q.add_argument("--out", default="-", help="output path, or - for stdout")
    q.set_defaults(func=cmd_segment)

    q = sub.add_parser("eval", help="evaluate a model or a prediction file")
    q.add_argument("--metrics", default="mi,mbi,len", help="comma list: mi,mbi,len,bpc,gate")
    q.add_argument("--gold", help="gold segmentations: word<TAB>m1-m2-...")
    q.add_argument("--canonical", action="store_true", help="gold morphs are canonical forms")
    q.add_argument(
        "--max-sub-fraction",
        type=float,
        default=0.5,
        help="drop canonical words whose alignment substitutes more than this"
        " fraction of characters; negative keeps everything",
    )
    q.add_argument("--pred", help="predicted segmentations, one dashed word per line")
    q.add_argument("--checkpoint", help="model checkpoint to evaluate")
    q.add_argument("--corpus", help="text for bpc/gate metrics")
    q.add_argument("--average", choices=("micro", "macro"), default="micro")
    q.add_argument("--batch-size", type=int, default=32)
    q.add_argument("--seq-len", type=int, default=120)
    q.add_argument("--json", action="store_true", help="print one JSON object")
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("baseline", help="baseline segmenters")
    bsub = q.add_subparsers(dest="baseline", metavar="method", required=True)

    b = bsub.add_parser("bpe", help="byte-pair segmenter")
    b.add_argument("--train", help="training corpus (train mode)")
    b.add_argument("--merges", type=int, default=500)
    b.add_argument("--model", help="model file (apply mode)")
    b.add_argument("--input", default="-", help="text to segment (apply mode)")
    b.add_argument("--out", default="-", help="model path (train) or output (apply)")
    b.set_defaults(func=cmd_baseline_bpe)

    b = bsub.add_parser("ulm", help="unigram-LM segmenter")
    b.add_argument("--train", help="training corpus (train mode)")
    b.add_argument("--pieces", type=int, default=1000, help="target piece count")
    b.add_argument("--seed-size", type=int, default=2000, help="seed vocabulary size")
    b.add_argument("--prune-fraction", type=float, default=0.2)
    b.add_argument("--em-iters", type=int, default=2)
    b.add_argument("--model", help="model file (apply mode)")
    b.add_argument("--input", default="-", help="text to segment (apply mode)")
    b.add_argument("--out", default="-", help="model path (train) or output (apply)")
    b.set_defaults(func=cmd_baseline_ulm)

    b = bsub.add_parser("entropy", help="segment at char-LM entropy boundaries")
    b.add_argument("checkpoint", help="char-lm checkpoint")
    b.add_argument("input", help="text file, or - for stdin")
    b.add_argument(
        "--criterion", choices=("spike", "increase", "stddev"), default="spike"
    )
    b.add_argument("--out", default="-", help="output path, or - for stdout")
    b.set_defaults(func=cmd_baseline_entropy)

    return parser


def _validate_mode_flags(args) -> None:
    if getattr(args, "func", None) is cmd_baseline_bpe:
        if bool(args.train) == bool(args.model):
            raise UsageError("bpe: pass exactly one of --train or --model")
        if args.train and args.out == "-":
            raise UsageError("bpe: training needs --out for the model file")
    if getattr(args, "func", None) is cmd_baseline_ulm:
        if bool(args.train) == bool(args.model):
            raise UsageError("ulm: pass exactly one of --train or --model")
        if args.train and args.out == "-":
            raise UsageError("ulm: training needs --out for the model file")


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        _validate_mode_flags(args)
        return args.func(args)
    except UsageError as e:
        print(f"subseg: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"subseg: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"subseg: {e}", file=sys.stderr)
        return 3
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
