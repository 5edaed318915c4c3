"""Frequency-ranked subword lexicon bounded by a capacity and a max length.

Entries are substrings occurring inside word spans (plus 1-char
non-alphabetic spans, so punctuation and space can be generated as whole
segments). Ranking is deterministic: count desc, then shorter, then
lexicographic.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CharSequence, CharVocab, escape_text, unescape_text
from .errors import DataError


class Lexicon:
    def __init__(self, entries: Sequence[str], counts: Sequence[int], capacity: int, max_len: int):
        if len(entries) > capacity:
            raise DataError("lexicon exceeds its capacity")
        for e in entries:
            if not 1 <= len(e) <= max_len:
                raise DataError(f"lexicon entry {e!r} violates length bound {max_len}")
        self.entries = tuple(entries)
        self.counts = tuple(int(c) for c in counts)
        self.capacity = capacity
        self.max_len = max_len
        self._index = {e: i for i, e in enumerate(self.entries)}
        self._matrix_cache: dict = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, subword: str) -> bool:
        return subword in self._index

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Lexicon)
            and self.entries == other.entries
            and self.capacity == other.capacity
            and self.max_len == other.max_len
        )

    @classmethod
    def empty(cls, max_len: int = 1) -> "Lexicon":
        return cls((), (), 0, max_len)


def count_subwords(sequences: Iterable[CharSequence], vocab: CharVocab, max_len: int) -> Counter:
    """Count every substring of length <= max_len inside word spans, plus
    each 1-char non-alphabetic span. Segments never cross word boundaries,
    so neither does counting."""
    counts: Counter = Counter()
    for seq in sequences:
        for s, e in seq.spans:
            word = vocab.decode(seq.ids[s:e])
            n = len(word)
            if n == 1:
                counts[word] += 1
                continue
            for i in range(n):
                for j in range(i + 1, min(i + max_len, n) + 1):
                    counts[word[i:j]] += 1
    return counts


def build_lexicon(
    sequences: Sequence[CharSequence],
    vocab: CharVocab,
    size: int,
    max_len: int,
) -> Lexicon:
    if size < 1 or max_len < 1:
        raise DataError("lexicon size and max length must be >= 1")
    counts = count_subwords(sequences, vocab, max_len)
    if not counts:
        raise DataError("empty corpus: no subwords to count")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))[:size]
    return Lexicon(
        entries=[e for e, _ in ranked],
        counts=[c for _, c in ranked],
        capacity=size,
        max_len=max_len,
    )


def lookup(lex: Lexicon, subword: str) -> int | None:
    return lex._index.get(subword)


def enumerate_candidates(
    lex: Lexicon,
    ids: np.ndarray,
    span: tuple[int, int],
    end: int,
    vocab: CharVocab,
    max_seg: int | None = None,
) -> list[tuple[int, int | None]]:
    """Candidate segments finishing at `end` (inclusive) inside `span`.

    One candidate per start k from the span start to `end`; the segment is
    ids[k..end]. When `max_seg` is set, segments longer than it are skipped.
    Each candidate carries the lexicon id of its segment, or None.
    """
    start, stop = span
    if not start <= end < stop:
        raise DataError(f"end {end} outside span ({start}, {stop})")
    k_min = start if max_seg is None else max(start, end - max_seg + 1)
    out = []
    for k in range(k_min, end + 1):
        out.append((k, lookup(lex, vocab.decode(ids[k : end + 1]))))
    return out


def candidate_matrix(
    lex: Lexicon,
    ids: np.ndarray,
    spans: Sequence[tuple[int, int]],
    vocab: CharVocab,
    max_seg: int | None,
    max_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Start-indexed lattice tables for one sequence.

    Returns (lex_ids, valid), both (T, max_len). Position [k, m-1] describes
    the segment ids[k:k+m]: valid marks segments that stay inside one word
    span (and within `max_seg`); lex_ids holds the lexicon id or -1.
    """
    key = (ids.tobytes(), tuple(spans), max_seg, max_len)
    hit = lex._matrix_cache.get(key)
    if hit is not None:
        return hit
    T = len(ids)
    lex_ids = np.full((T, max_len), -1, dtype=np.int64)
    valid = np.zeros((T, max_len), dtype=bool)
    for s, e in spans:
        word = vocab.decode(ids[s:e])
        for k in range(s, e):
            top = e - k if max_seg is None else min(e - k, max_seg)
            for m in range(1, min(top, max_len) + 1):
                valid[k, m - 1] = True
                hit_id = lex._index.get(word[k - s : k - s + m])
                if hit_id is not None:
                    lex_ids[k, m - 1] = hit_id
    if len(lex._matrix_cache) < 200_000:
        lex._matrix_cache[key] = (lex_ids, valid)
    return lex_ids, valid


_HEADER = "#subseg-lexicon"


def save_lexicon(lex: Lexicon, path: str | Path) -> None:
    lines = [f"{_HEADER}\tversion=1\tsize={lex.capacity}\tmax_len={lex.max_len}"]
    for rank, (entry, count) in enumerate(zip(lex.entries, lex.counts)):
        lines.append(f"{rank}\t{escape_text(entry)}\t{count}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_lexicon(path: str | Path) -> Lexicon:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_HEADER):
        raise DataError(f"{path}: not a lexicon file")
    fields = dict(kv.split("=", 1) for kv in lines[0].split("\t")[1:])
    entries, counts = [], []
    for line in lines[1:]:
        _, entry, count = line.split("\t")
        entries.append(unescape_text(entry))
        counts.append(int(count))
    return Lexicon(entries, counts, capacity=int(fields["size"]), max_len=int(fields["max_len"]))
