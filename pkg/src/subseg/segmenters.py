"""Baseline subword segmenters: BPE, unigram-LM (EM + pruning), and the
three entropy-criterion boundary rules.

All segmenters operate on single word spans and return pieces whose
concatenation reproduces the word. The entropy criteria consume a per-line
entropy profile produced by a character language model; entropy is defined
over the running text, so lookahead at word edges uses the next character of
the line.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import CharSequence, CharVocab, escape_text, unescape_text
from .errors import DataError, NumericError
from .lexicon import build_lexicon

# ---------------------------------------------------------------------------
# BPE


@dataclass(frozen=True)
class BpeModel:
    """Ordered merge list plus the symbol vocabulary it induces."""

    merges: tuple[tuple[str, str], ...]
    symbols: tuple[str, ...]


def _corpus_words(sequences: Sequence[CharSequence], vocab: CharVocab) -> Counter:
    words: Counter = Counter()
    for seq in sequences:
        for s, e in seq.spans:
            words[vocab.decode(seq.ids[s:e])] += 1
    return words


def _merge_symbols(syms: list[str], left: str, right: str) -> list[str]:
    out = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def bpe_train(
    sequences: Sequence[CharSequence], vocab: CharVocab, num_merges: int
) -> BpeModel:
    """Greedy byte-pair training over within-word symbol pairs.

    Each round merges the most frequent adjacent pair; ties break toward the
    lexicographically smallest pair, making training deterministic."""
    if num_merges < 0:
        raise DataError("num_merges must be >= 0")
    words = _corpus_words(sequences, vocab)
    if not words:
        raise DataError("empty corpus: nothing to train BPE on")
    table = {w: list(w) for w in words}
    symbols = sorted({c for w in words for c in w})
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: Counter = Counter()
        for w, count in words.items():
            syms = table[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += count
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        symbols.append(best[0] + best[1])
        for w in table:
            table[w] = _merge_symbols(table[w], *best)
    return BpeModel(merges=tuple(merges), symbols=tuple(symbols))


def bpe_apply(m: BpeModel, word: str) -> list[str]:
    """Split into chars, then replay the merges in training order."""
    if not word:
        return []
    syms = list(word)
    for left, right in m.merges:
        if len(syms) == 1:
            break
        syms = _merge_symbols(syms, left, right)
    return syms


_BPE_HEADER = "#subseg-bpe"


def save_bpe(m: BpeModel, path) -> None:
    lines = [f"{_BPE_HEADER}\tversion=1\tsymbols={len(m.symbols)}"]
    for left, right in m.merges:
        lines.append(f"{escape_text(left)} {escape_text(right)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_bpe(path) -> BpeModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_BPE_HEADER):
        raise DataError(f"{path}: not a BPE model file")
    merges = []
    for line in lines[1:]:
        left, right = line.split(" ")
        merges.append((unescape_text(left), unescape_text(right)))
    # the base character set is not stored; reconstruct what the merges imply
    symbols = sorted({c for pair in merges for side in pair for c in side})
    symbols += [l + r for l, r in merges]
    return BpeModel(merges=tuple(merges), symbols=tuple(symbols))


# ---------------------------------------------------------------------------
# Unigram LM tokenizer


@dataclass
class UlmModel:
    """Piece vocabulary with log unigram probabilities.

    Every single character seen at training time is kept (never pruned), so
    any training-alphabet word has at least one covering segmentation."""

    pieces: tuple[str, ...]
    logp: np.ndarray
    em_trace: tuple[float, ...] = ()

    def __post_init__(self):
        self._index = {p: i for i, p in enumerate(self.pieces)}
        self._max_len = max((len(p) for p in self.pieces), default=1)
        total = np.exp(self.logp).sum()
        if abs(total - 1.0) > 1e-6:
            raise NumericError(f"unigram probabilities sum to {total}, not 1")

    def piece_logp(self, piece: str) -> float | None:
        i = self._index.get(piece)
        return None if i is None else float(self.logp[i])


def _word_forward(
    word: str, index: dict[str, int], logp: np.ndarray, max_len: int, skip: int = -1
) -> tuple[np.ndarray, list[list[tuple[int, int]]]]:
    """Forward log scores over the word's piece lattice.

    Returns (fwd, edges) where fwd[j] is the log marginal of word[:j] and
    edges[j] lists (start, piece_id) of lattice edges ending at j. `skip`
    masks one piece id (used to score pruning candidates)."""
    n = len(word)
    fwd = np.full(n + 1, -np.inf)
    fwd[0] = 0.0
    edges: list[list[tuple[int, int]]] = [[] for _ in range(n + 1)]
    for j in range(1, n + 1):
        acc = []
        for i in range(max(0, j - max_len), j):
            pid = index.get(word[i:j])
            if pid is None or pid == skip or fwd[i] == -np.inf:
                continue
            edges[j].append((i, pid))
            acc.append(fwd[i] + logp[pid])
        if acc:
            arr = np.array(acc)
            m = arr.max()
            fwd[j] = m + math.log(np.exp(arr - m).sum())
    return fwd, edges


def ulm_train(
    sequences: Sequence[CharSequence],
    vocab: CharVocab,
    seed_size: int,
    target_vocab: int,
    prune_fraction: float = 0.2,
    seed_max_len: int = 8,
    em_iters: int = 2,
) -> UlmModel:
    """EM over the segmentation lattice with iterative pruning.

    Seeds with the `seed_size` most frequent substrings plus every single
    character, then alternates EM passes with pruning of the multi-character
    pieces whose removal costs the least corpus likelihood, until the vocab
    fits `target_vocab`. Corpus likelihood is asserted non-decreasing within
    every EM pass; the trace is kept on the model for inspection."""
    if not 0.0 < prune_fraction < 1.0:
        raise DataError("prune_fraction must be in (0, 1)")
    words = _corpus_words(sequences, vocab)
    if not words:
        raise DataError("empty corpus: nothing to train on")
    chars = sorted({c for w in words for c in w})
    if target_vocab < len(chars):
        raise DataError(
            f"target_vocab {target_vocab} below the character floor {len(chars)}"
        )
    seed = build_lexicon(sequences, vocab, size=max(seed_size, 1), max_len=seed_max_len)
    counts = Counter(dict(zip(seed.entries, seed.counts)))
    for c in chars:
        counts.setdefault(c, 1)
    pieces = sorted(counts)
    probs = np.array([counts[p] for p in pieces], dtype=np.float64)
    logp = np.log(probs / probs.sum())
    word_items = sorted(words.items())
    trace: list[float] = []

    def em_pass(pieces: list[str], logp: np.ndarray) -> tuple[np.ndarray, float]:
        index = {p: i for i, p in enumerate(pieces)}
        max_len = max(len(p) for p in pieces)
        expected = np.zeros(len(pieces))
        ll = 0.0
        for word, count in word_items:
            fwd, edges = _word_forward(word, index, logp, max_len)
            n = len(word)
            if fwd[n] == -np.inf:
                raise NumericError(f"word {word!r} has no covering segmentation")
            bwd = np.full(n + 1, -np.inf)
            bwd[n] = 0.0
            for j in range(n - 1, -1, -1):
                vals = [
                    bwd[j2] + logp[pid]
                    for j2 in range(j + 1, min(j + max_len, n) + 1)
                    for (i2, pid) in edges[j2]
                    if i2 == j
                ]
                if vals:
                    arr = np.array(vals)
                    m = arr.max()
                    bwd[j] = m + math.log(np.exp(arr - m).sum())
            for j in range(1, n + 1):
                for i, pid in edges[j]:
                    post = math.exp(fwd[i] + logp[pid] + bwd[j] - fwd[n])
                    expected[pid] += count * post
            ll += count * fwd[n]
        return expected, ll

    # monotonicity holds within an EM phase; pruning resets the baseline
    last_ll: float | None = None
    while True:
        for _ in range(em_iters):
            expected, ll = em_pass(pieces, logp)
            if last_ll is not None and ll < last_ll - 1e-9:
                raise NumericError(f"EM likelihood decreased: {last_ll} -> {ll}")
            last_ll = ll
            trace.append(ll)
            keep = [
                i
                for i, p in enumerate(pieces)
                if len(p) == 1 or expected[i] > 0.0
            ]
            pieces = [pieces[i] for i in keep]
            expected = np.maximum(expected[keep], 1e-12)
            logp = np.log(expected / expected.sum())
        if len(pieces) <= target_vocab:
            break
        # score removable pieces by likelihood loss, holding others fixed
        index = {p: i for i, p in enumerate(pieces)}
        max_len = max(len(p) for p in pieces)
        piece_words: dict[int, list[str]] = defaultdict(list)
        base_ll: dict[str, float] = {}
        for word, count in word_items:
            fwd, edges = _word_forward(word, index, logp, max_len)
            base_ll[word] = fwd[len(word)]
            seen = {pid for js in edges for _, pid in js}
            for pid in seen:
                piece_words[pid].append(word)
        losses = []
        for i, p in enumerate(pieces):
            if len(p) == 1:
                continue
            loss = 0.0
            for word in piece_words.get(i, []):
                fwd, _ = _word_forward(word, index, logp, max_len, skip=i)
                if fwd[len(word)] == -np.inf:
                    loss = math.inf
                    break
                loss += words[word] * (base_ll[word] - fwd[len(word)])
            losses.append((loss, p, i))
        removable = len(losses)
        n_drop = min(
            max(1, math.ceil(removable * prune_fraction)), len(pieces) - target_vocab
        )
        losses.sort(key=lambda t: (t[0], t[1]))
        drop = {i for _, _, i in losses[:n_drop]}
        keep = [i for i in range(len(pieces)) if i not in drop]
        pieces = [pieces[i] for i in keep]
        kept = np.exp(logp[keep])
        logp = np.log(kept / kept.sum())
        last_ll = None
    return UlmModel(pieces=tuple(pieces), logp=logp, em_trace=tuple(trace))


def ulm_segment(m: UlmModel, word: str) -> list[str]:
    """Viterbi segmentation under the unigram model.

    Ties break toward fewer pieces, then the longer first piece, applied
    recursively from the left. Characters outside the vocabulary fall back
    to single-char pieces at a fixed penalty below the worst real piece."""
    if not word:
        return []
    n = len(word)
    fallback = float(m.logp.min()) - math.log(10.0)
    # best[i] = (logp, -pieces, first piece len) for word[i:], compared lexicographically
    best: list[tuple[float, int, int] | None] = [None] * (n + 1)
    choice = [0] * (n + 1)
    best[n] = (0.0, 0, 0)
    for i in range(n - 1, -1, -1):
        top = None
        for j in range(i + 1, min(i + m._max_len, n) + 1):
            lp = m.piece_logp(word[i:j])
            if lp is None:
                if j - i > 1:
                    continue
                lp = fallback
            nxt = best[j]
            if nxt is None:
                continue
            cand = (lp + nxt[0], nxt[1] - 1, j - i)
            if top is None or cand > top:
                top = cand
                choice[i] = j
        best[i] = top
    if best[0] is None:
        raise DataError(f"word {word!r} cannot be segmented")
    out = []
    i = 0
    while i < n:
        out.append(word[i : choice[i]])
        i = choice[i]
    return out


_ULM_HEADER = "#subseg-ulm"


def save_ulm(m: UlmModel, path) -> None:
    lines = [f"{_ULM_HEADER}\tversion=1\tsize={len(m.pieces)}"]
    for piece, lp in zip(m.pieces, m.logp):
        lines.append(f"{escape_text(piece)}\t{lp:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ulm(path) -> UlmModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_ULM_HEADER):
        raise DataError(f"{path}: not a unigram model file")
    pieces, logps = [], []
    for line in lines[1:]:
        piece, lp = line.split("\t")
        pieces.append(unescape_text(piece))
        logps.append(float(lp))
    return UlmModel(pieces=tuple(pieces), logp=np.array(logps))


# ---------------------------------------------------------------------------
# Entropy criteria


class BoundaryCriterion(Enum):
    SPIKE = "spike"
    INCREASE = "increase"
    STDDEV = "stddev"


def entropy_segment(profile, span: tuple[int, int], criterion: BoundaryCriterion) -> set[int]:
    """Boundary positions inside one word span from a line entropy profile.

    A boundary sits immediately before character i. Spike fires on a local
    entropy maximum (using the next line character for lookahead at the word
    edge), Increase on any rise, Stddev when H_i strictly exceeds the line
    mean plus one standard deviation. `profile` must expose h (per-position
    entropies over the whole line), mean, and std."""
    s, e = span
    h = profile.h
    if not 0 <= s < e <= len(h):
        raise DataError(f"span ({s}, {e}) outside profile of length {len(h)}")
    if e - s < 2:
        return set()
    cuts = set()
    for i in range(s + 1, e):
        if criterion is BoundaryCriterion.SPIKE:
            hit = h[i] > h[i - 1] and i + 1 < len(h) and h[i] > h[i + 1]
        elif criterion is BoundaryCriterion.INCREASE:
            hit = h[i] > h[i - 1]
        elif criterion is BoundaryCriterion.STDDEV:
            hit = h[i] > profile.mean + profile.std
        else:
            raise DataError(f"unknown criterion {criterion!r}")
        if hit:
            cuts.add(i)
    return cuts


def cuts_to_pieces(word: str, cuts: set[int], offset: int = 0) -> list[str]:
    """Split `word` at absolute cut positions (word starts at `offset`)."""
    edges = [0, *sorted(c - offset for c in cuts), len(word)]
    return [word[a:b] for a, b in zip(edges, edges[1:])]
