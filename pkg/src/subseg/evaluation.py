"""Segmentation and language-model evaluation.

BPC is bits per character over a corpus. Morpheme identification (MI)
scores predicted subwords against gold morphs as multisets per word;
morpheme boundary identification (MBI) scores the word-internal cut sets.
Both pool counts over all words (micro); macro averaging is available.
Non-alphabetic single-character "words" carry no morphology and are skipped
by MI/MBI/average-length (they still count in BPC).

Gold files with canonical (normalized) morphs are projected to surface
segmentations through a minimal-edit alignment before scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from collections import Counter
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import DataError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class GoldAnalysis:
    """One annotated word: surface morphs whose concatenation is the word."""

    word: str
    morphs: tuple[str, ...]

    def __post_init__(self):
        if not self.word or not self.morphs:
            raise DataError("empty gold analysis")
        if "".join(self.morphs) != self.word:
            raise DataError(
                f"gold morphs {self.morphs} do not concatenate to {self.word!r}"
            )

    def cuts(self) -> frozenset[int]:
        edges = []
        pos = 0
        for m in self.morphs[:-1]:
            pos += len(m)
            edges.append(pos)
        return frozenset(edges)


@dataclass(frozen=True)
class SegScores:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "SegScores":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(precision=p, recall=r, f1=f, tp=tp, fp=fp, fn=fn)


def bpc(logprob_fn: Callable, corpus: Sequence) -> float:
    """-(1/N) sum of log2 p(x); N = total characters, logprob_fn in nats."""
    n = sum(len(x) for x in corpus)
    if n == 0:
        raise DataError("empty corpus: BPC undefined")
    total = sum(logprob_fn(x) for x in corpus)
    return -total / n / LN2


def cuts_of(pieces: Sequence[str]) -> frozenset[int]:
    """Internal boundary positions of a piece sequence."""
    edges = []
    pos = 0
    for piece in pieces[:-1]:
        pos += len(piece)
        edges.append(pos)
    return frozenset(edges)


def _check_aligned(pred: Sequence[Sequence[str]], gold: Sequence[GoldAnalysis]):
    if len(pred) != len(gold):
        raise DataError(
            f"prediction stream has {len(pred)} words, gold has {len(gold)}"
        )
    kept = []
    for pieces, g in zip(pred, gold):
        word = "".join(pieces)
        if word != g.word:
            raise DataError(f"word mismatch: predicted {word!r} vs gold {g.word!r}")
        if not g.word.isalpha():
            continue
        kept.append((list(pieces), g))
    return kept


def _aggregate(per_word: list[tuple[int, int, int]], average: str) -> SegScores:
    if average == "micro":
        tp = sum(t for t, _, _ in per_word)
        fp = sum(f for _, f, _ in per_word)
        fn = sum(f for _, _, f in per_word)
        return SegScores.from_counts(tp, fp, fn)
    if average == "macro":
        if not per_word:
            return SegScores.from_counts(0, 0, 0)
        scores = [SegScores.from_counts(*c) for c in per_word]
        n = len(scores)
        return SegScores(
            precision=sum(s.precision for s in scores) / n,
            recall=sum(s.recall for s in scores) / n,
            f1=sum(s.f1 for s in scores) / n,
            tp=sum(s.tp for s in scores),
            fp=sum(s.fp for s in scores),
            fn=sum(s.fn for s in scores),
        )
    raise DataError(f"unknown averaging {average!r}")


def mi_scores(
    pred: Sequence[Sequence[str]], gold: Sequence[GoldAnalysis], average: str = "micro"
) -> SegScores:
    """Morpheme identification: multiset overlap of subwords per word."""
    per_word = []
    for pieces, g in _check_aligned(pred, gold):
        tp = sum((Counter(pieces) & Counter(g.morphs)).values())
        per_word.append((tp, len(pieces) - tp, len(g.morphs) - tp))
    return _aggregate(per_word, average)


def mbi_scores(
    pred: Sequence[Sequence[str]], gold: Sequence[GoldAnalysis], average: str = "micro"
) -> SegScores:
    """Morpheme boundary identification over word-internal gaps."""
    per_word = []
    for pieces, g in _check_aligned(pred, gold):
        pc, gc = cuts_of(pieces), g.cuts()
        tp = len(pc & gc)
        per_word.append((tp, len(pc) - tp, len(gc) - tp))
    return _aggregate(per_word, average)


def avg_segment_length(pred: Sequence[Sequence[str]]) -> float:
    """Mean characters per subword over alphabetic words."""
    chars = segs = 0
    for pieces in pred:
        word = "".join(pieces)
        if not word.isalpha():
            continue
        chars += len(word)
        segs += len(pieces)
    if segs == 0:
        raise DataError("no alphabetic words to average over")
    return chars / segs


# ---------------------------------------------------------------------------
# Canonical -> surface projection (minimal-edit alignment)

_MATCH, _SUB, _DEL, _INS = range(4)


def _edit_ops(canon: str, word: str) -> tuple[list[int], int]:
    """Greedy minimal-edit op sequence, preferring match > substitute >
    delete (canonical char unrealized) > insert (surface char unexplained)
    at every step, applied left to right. Returns (ops, substitutions)."""
    m, n = len(canon), len(word)
    # dp[i][j] = cost of aligning canon[i:] with word[j:]
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        dp[i][n] = m - i
    for j in range(n + 1):
        dp[m][j] = n - j
    for i in range(m - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            diag = dp[i + 1][j + 1] + (0 if canon[i] == word[j] else 1)
            dp[i][j] = min(diag, dp[i + 1][j] + 1, dp[i][j + 1] + 1)
    ops = []
    subs = 0
    i = j = 0
    while i < m or j < n:
        if i < m and j < n and canon[i] == word[j] and dp[i + 1][j + 1] == dp[i][j]:
            ops.append(_MATCH)
            i, j = i + 1, j + 1
        elif i < m and j < n and dp[i + 1][j + 1] + 1 == dp[i][j]:
            ops.append(_SUB)
            subs += 1
            i, j = i + 1, j + 1
        elif i < m and dp[i + 1][j] + 1 == dp[i][j]:
            ops.append(_DEL)
            i += 1
        else:
            ops.append(_INS)
            j += 1
    return ops, subs


def _project(word: str, morphs: Sequence[str]) -> tuple[GoldAnalysis, int]:
    canon = "".join(morphs)
    bounds = set()
    pos = 0
    for mph in morphs[:-1]:
        pos += len(mph)
        bounds.add(pos)
    ops, subs = _edit_ops(canon, word)
    surface_cuts = set()
    i = j = 0
    for op in ops:
        if op in (_MATCH, _SUB):
            i, j = i + 1, j + 1
        elif op == _DEL:
            i += 1
        else:
            j += 1
        if i in bounds:
            # record the first time each canonical boundary is crossed
            bounds.discard(i)
            surface_cuts.add(j)
    # zero-length surface segments merge into a neighbour: duplicate cuts
    # collapse, cuts at the word edges vanish
    cuts = sorted(c for c in surface_cuts if 0 < c < len(word))
    edges = [0, *cuts, len(word)]
    pieces = tuple(word[a:b] for a, b in zip(edges, edges[1:]))
    return GoldAnalysis(word=word, morphs=pieces), subs


def canonical_to_surface(word: str, canonical_morphs: Sequence[str]) -> GoldAnalysis:
    """Project canonical morph boundaries onto the written word.

    Boundaries travel through a minimal-edit alignment of the concatenated
    canonical string with the surface word; boundaries that land on top of
    each other or at the word edges collapse into their neighbour segment."""
    if not canonical_morphs:
        raise DataError("canonical analysis has no morphs")
    analysis, _ = _project(word, canonical_morphs)
    return analysis


# ---------------------------------------------------------------------------
# Gold files: word<TAB>morph1-morph2-... one word per line


def _parse_gold_line(line: str, path, lineno: int) -> tuple[str, tuple[str, ...]]:
    parts = line.split("\t")
    if len(parts) != 2 or not parts[0] or not parts[1]:
        raise DataError(f"{path}:{lineno}: expected word<TAB>morph1-morph2-...")
    return parts[0], tuple(parts[1].split("-"))


def read_gold(path) -> list[GoldAnalysis]:
    """Surface-form gold file: morphs must concatenate to the word."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        word, morphs = _parse_gold_line(line, path, lineno)
        try:
            out.append(GoldAnalysis(word=word, morphs=morphs))
        except DataError as e:
            raise DataError(f"{path}:{lineno}: {e}") from e
    return out


def read_canonical_gold(path, max_sub_fraction: Optional[float] = 0.5) -> list[GoldAnalysis]:
    """Canonical gold file, projected to surface form.

    Words whose alignment needs more than max_sub_fraction substitutions
    (relative to word length) are dropped as unreliable; pass None to keep
    everything."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        word, morphs = _parse_gold_line(line, path, lineno)
        analysis, subs = _project(word, morphs)
        if max_sub_fraction is not None and subs > max_sub_fraction * len(word):
            continue
        out.append(analysis)
    return out


def read_predictions(path) -> list[list[str]]:
    """Predicted segmentation file: one word per line, pieces joined by -."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        out.append(line.split("-"))
    return out
