"""Subword segmental language model.

A character LSTM encodes the unsegmented history; every candidate segment is
scored by a mixture of a character-level LSTM decoder (open vocabulary) and a
softmax over a fixed subword lexicon, gated per position. A semi-Markov
dynamic program marginalizes over all segmentations of each word span
(segments never cross word boundaries), giving exact log p(x); replacing the
log-sum-exp with max yields Viterbi segmentation.

All lattice math runs in log space on the autodiff tape, so the training
loss backpropagates through the dynamic program itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .checkpoint import Checkpoint, expect_shapes, read_checkpoint, write_checkpoint
from .corpus import EOS_ID, Batch, CharSequence, CharVocab, char_sequence
from .errors import DataError, NumericError
from .lexicon import Lexicon, candidate_matrix, lookup
from .nn import Tensor

# finite stand-in for log 0: exact under logaddexp in float64, never NaN
LOG_ZERO = -1e30


@dataclass
class SslmConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 1
    dropout: float = 0.0
    dp_max_seg: Optional[int] = None
    mode: str = "long-range"  # batching style: "long-range" | "word-level"

    def validate(self) -> None:
        if min(self.embed_dim, self.hidden_dim, self.num_layers) < 1:
            raise DataError("model dimensions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must lie in [0, 1)")
        if self.dp_max_seg is not None and self.dp_max_seg < 1:
            raise DataError("dp_max_seg must be >= 1 when set")
        if self.mode not in ("long-range", "word-level"):
            raise DataError(f"unknown mode {self.mode!r}")


class SslmParams:
    """Model parameters plus the frozen vocab and lexicon they assume.

    The encoder and decoder are separate LSTMs sharing one character
    embedding table. The decoder is conditioned on the history state h_k
    through a per-layer affine map producing its initial (h, c). The lexicon
    and gate heads only exist when the lexicon is non-empty; without them
    segment scores reduce to the pure character path.
    """

    def __init__(
        self,
        config: SslmConfig,
        vocab: CharVocab,
        lexicon: Lexicon,
        rng: np.random.Generator,
    ):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.lexicon = lexicon
        E, H, L = config.embed_dim, config.hidden_dim, config.num_layers
        V = len(vocab)
        self.embed = nn.uniform_param(rng, (V, E))
        self.encoder = nn.LstmParams(E, H, L, rng)
        self.decoder = nn.LstmParams(E, H, L, rng)
        self.dec_init = [
            (nn.uniform_param(rng, (H, 2 * H)), nn.zeros_param(2 * H)) for _ in range(L)
        ]
        self.dec_proj = (nn.uniform_param(rng, (H, V)), nn.zeros_param(V))
        if len(lexicon) > 0:
            # bias starts at the empirical segment prior, so the lexicon
            # branch is a unigram segment model before any training
            counts = np.maximum(np.asarray(lexicon.counts, dtype=np.float64), 1.0)
            lex_bias = nn.zeros_param(len(lexicon))
            lex_bias.data[:] = np.log(counts / counts.sum())
            self.lex_head = (nn.uniform_param(rng, (H, len(lexicon))), lex_bias)
            self.gate_head = (nn.uniform_param(rng, (H, 1)), nn.zeros_param(1))
        else:
            self.lex_head = None
            self.gate_head = None

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("embed", self.embed)]
        out += self.encoder.named("enc")
        out += self.decoder.named("dec")
        for i, (w, b) in enumerate(self.dec_init):
            out += [(f"dec_init.l{i}.w", w), (f"dec_init.l{i}.b", b)]
        out += [("dec_proj.w", self.dec_proj[0]), ("dec_proj.b", self.dec_proj[1])]
        if self.lex_head is not None:
            out += [("lex.w", self.lex_head[0]), ("lex.b", self.lex_head[1])]
            out += [("gate.w", self.gate_head[0]), ("gate.b", self.gate_head[1])]
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def hyper(self) -> dict:
        c = self.config
        return {
            "embed_dim": c.embed_dim,
            "hidden_dim": c.hidden_dim,
            "num_layers": c.num_layers,
            "dropout": c.dropout,
            "dp_max_seg": c.dp_max_seg,
            "mode": c.mode,
            "vocab_chars": list(self.vocab.chars),
            "lex_entries": list(self.lexicon.entries),
            "lex_counts": list(self.lexicon.counts),
            "lex_capacity": self.lexicon.capacity,
            "lex_max_len": self.lexicon.max_len,
        }

    def save(self, path) -> None:
        write_checkpoint(
            path, "sslm", self.hyper(), [(n, t.data) for n, t in self.named_params()]
        )

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "SslmParams":
        if ck.kind != "sslm":
            raise DataError(f"checkpoint kind {ck.kind!r}, expected 'sslm'")
        h = ck.hyper
        config = SslmConfig(
            embed_dim=h["embed_dim"],
            hidden_dim=h["hidden_dim"],
            num_layers=h["num_layers"],
            dropout=h["dropout"],
            dp_max_seg=h["dp_max_seg"],
            mode=h["mode"],
        )
        vocab = CharVocab(h["vocab_chars"])
        lexicon = Lexicon(
            h["lex_entries"], h["lex_counts"], h["lex_capacity"], h["lex_max_len"]
        )
        p = cls(config, vocab, lexicon, np.random.default_rng(0))
        expect_shapes(ck, {n: t.data.shape for n, t in p.named_params()})
        for name, t in p.named_params():
            t.data = ck.tensors[name].copy()
        return p

    @classmethod
    def load(cls, path) -> "SslmParams":
        return cls.from_checkpoint(read_checkpoint(path))


@dataclass(frozen=True)
class Segmentation:
    """Cuts per word span; cuts are word-relative, strictly increasing, and
    strictly inside the span, so each span of length n yields len(cuts)+1
    contiguous subwords that concatenate back to the word."""

    spans: tuple[tuple[int, int], ...]
    cuts: tuple[tuple[int, ...], ...]

    def n_segments(self) -> int:
        return sum(len(c) + 1 for c in self.cuts)


def word_pieces(seq: CharSequence, seg: Segmentation, vocab: CharVocab) -> list[list[str]]:
    """Subword strings per word span, in corpus order."""
    out = []
    for (s, e), cuts in zip(seg.spans, seg.cuts):
        edges = [0, *cuts, e - s]
        out.append([vocab.decode(seq.ids[s + a : s + b]) for a, b in zip(edges, edges[1:])])
    return out


def render_segmentation(
    seq: CharSequence, seg: Segmentation, vocab: CharVocab, sep: str = "-"
) -> str:
    """The original line with `sep` inserted at word-internal boundaries."""
    return "".join(sep.join(ps) for ps in word_pieces(seq, seg, vocab))


@dataclass
class SegLattice:
    """Forward lattice over one sequence: alpha[t] = log p(x_{<t} ending a
    segment at t), backptr[t] the best segment start for position t, branch[t]
    which mixture member dominated there (0 char, 1 lexicon), and the cached
    per-candidate segment log probs keyed by (start, end)."""

    alpha: np.ndarray
    backptr: np.ndarray
    branch: np.ndarray
    seg_logp: dict[tuple[int, int], float] = field(default_factory=dict)


@dataclass
class _ScoreCache:
    """Batched segment scores: seg_char[m-1, k*B + b] is the char-path log
    prob of ids[b, k:k+m]; gate and lexicon tables are indexed the same way."""

    B: int
    T: int
    max_seg: int
    seg_char: Tensor  # (max_seg, T*B)
    log_g: Optional[Tensor]  # (T*B,)
    log_1mg: Optional[Tensor]
    lex_lsf: Optional[Tensor]  # (T*B, |lexicon|)
    cm_lex: list[np.ndarray]  # per row (T, max_seg) lexicon ids or -1
    final_state: nn.LstmState


LstmState = nn.LstmState


def init_state(p: SslmParams, batch_size: int) -> LstmState:
    return nn.lstm_init_state(p.encoder, batch_size)


def _encode_batch(
    p: SslmParams,
    ids: np.ndarray,
    state: Optional[LstmState],
    training: bool,
    rng: Optional[np.random.Generator],
) -> tuple[list[Tensor], LstmState]:
    """History states for every position: hs[k] (B, H) is the encoder top
    layer after consuming ids[:, :k]; also returns the state after the full
    block for carryover."""
    B, T = ids.shape
    if state is None:
        state = nn.lstm_init_state(p.encoder, B)
    rate = p.config.dropout
    hs = [state[-1][0]]
    for t in range(T):
        x = nn.embedding(p.embed, ids[:, t])
        x = nn.dropout(x, rate, rng, training)
        top, state = nn.lstm_step(p.encoder, x, state, rate, rng, training)
        if t < T - 1:
            hs.append(top)
    return hs, state


def _decoder_init(p: SslmParams, h: Tensor) -> LstmState:
    """Map history states (N, H) to the decoder's initial per-layer (h, c)."""
    state = []
    for w, b in p.dec_init:
        proj = nn.affine(h, w, b)
        hd = p.config.hidden_dim
        state.append((nn.tanh(nn.slice_cols(proj, 0, hd)), nn.slice_cols(proj, hd, 2 * hd)))
    return state


def _batch_max_seg(batch: Batch, dp_max_seg: Optional[int]) -> int:
    longest = 1
    for row_spans in batch.spans:
        for s, e in row_spans:
            longest = max(longest, e - s)
    return longest if dp_max_seg is None else min(dp_max_seg, longest)


def _score_all_segments(
    p: SslmParams,
    batch: Batch,
    state: Optional[LstmState],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> _ScoreCache:
    """Score every candidate segment of every row in one decoder sweep.

    The decoder runs once over T*B lanes (one lane per segment start per
    row) for max_seg+1 steps; per-length scores fall out of a cumulative sum
    of per-step character log probs plus the end-of-segment log prob."""
    B, T = batch.ids.shape
    if T == 0:
        raise DataError("cannot score an empty batch")
    rate = p.config.dropout
    max_seg = _batch_max_seg(batch, p.config.dp_max_seg)
    hs, final_state = _encode_batch(p, batch.ids, state, training, rng)

    flat = nn.reshape(nn.stack(hs, axis=0), (T * B, p.config.hidden_dim))
    dstate = _decoder_init(p, flat)
    ks = np.repeat(np.arange(T), B)
    bs = np.tile(np.arange(B), T)
    rows = np.arange(T * B)
    char_lps: list[Tensor] = []
    eos_lps: list[Tensor] = []
    for j in range(max_seg + 1):
        if j == 0:
            in_ids = np.zeros(T * B, dtype=np.int64)
        else:
            pos = ks + j - 1
            in_ids = np.where(pos < T, batch.ids[bs, np.minimum(pos, T - 1)], EOS_ID)
        x = nn.dropout(nn.embedding(p.embed, in_ids), rate, rng, training)
        top, dstate = nn.lstm_step(p.decoder, x, dstate, rate, rng, training)
        logsf = nn.log_softmax(nn.affine(top, *p.dec_proj), axis=-1)
        if j < max_seg:
            tpos = ks + j
            tid = np.where(tpos < T, batch.ids[bs, np.minimum(tpos, T - 1)], EOS_ID)
            char_lps.append(nn.gather2d(logsf, rows, tid))
        if j >= 1:
            eos_lps.append(nn.gather2d(logsf, rows, np.zeros(T * B, dtype=np.int64)))
    seg_char = nn.add(
        nn.cumsum(nn.stack(char_lps, axis=0), axis=0), nn.stack(eos_lps, axis=0)
    )

    log_g = log_1mg = lex_lsf = None
    if p.lex_head is not None:
        z = nn.reshape(nn.affine(flat, *p.gate_head), (T * B,))
        log_g = nn.scale(nn.softplus(nn.scale(z, -1.0)), -1.0)
        log_1mg = nn.scale(nn.softplus(z), -1.0)
        lex_lsf = nn.log_softmax(nn.affine(flat, *p.lex_head), axis=-1)

    cm_lex = [
        candidate_matrix(
            p.lexicon, batch.ids[b], batch.spans[b], p.vocab, p.config.dp_max_seg, max_seg
        )[0]
        for b in range(B)
    ]
    return _ScoreCache(
        B=B,
        T=T,
        max_seg=max_seg,
        seg_char=seg_char,
        log_g=log_g,
        log_1mg=log_1mg,
        lex_lsf=lex_lsf,
        cm_lex=cm_lex,
        final_state=final_state,
    )


def _candidate_terms(cache: _ScoreCache, b: int, t: int, span_start: int) -> tuple[np.ndarray, Tensor]:
    """Mixture log probs for all segments ending at position t in row b.

    Returns (starts, terms); starts ascend, so index 0 is the longest
    candidate segment."""
    ks = np.arange(max(span_start, t - cache.max_seg), t)
    qs = ks * cache.B + b
    lens = t - ks
    char_term = nn.gather2d(cache.seg_char, lens - 1, qs)
    if cache.log_g is None:
        return ks, char_term
    lex_cols = cache.cm_lex[b][ks, lens - 1]
    in_lex = lex_cols >= 0
    lex_term = nn.add(
        nn.add(nn.take(cache.log_1mg, qs), nn.gather2d(cache.lex_lsf, qs, np.where(in_lex, lex_cols, 0))),
        Tensor(np.where(in_lex, 0.0, LOG_ZERO)),
    )
    return ks, nn.logaddexp(nn.add(char_term, nn.take(cache.log_g, qs)), lex_term)


def _row_logp(cache: _ScoreCache, batch: Batch, b: int) -> Tensor:
    """Forward marginal for one row, on the tape."""
    alphas: list[Tensor] = [Tensor(0.0)]
    for s, e in batch.spans[b]:
        for t in range(s + 1, e + 1):
            ks, terms = _candidate_terms(cache, b, t, s)
            prev = nn.stack([alphas[k] for k in ks], axis=0)
            alphas.append(nn.logsumexp(nn.add(terms, prev), axis=-1))
    if len(alphas) != batch.lengths[b] + 1:
        raise DataError("row spans do not tile the sequence")
    return alphas[batch.lengths[b]]


def forward_batch(
    p: SslmParams,
    batch: Batch,
    state: Optional[LstmState] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[list[Tensor], LstmState]:
    """Log p(x) per row (taped) and the final encoder state."""
    cache = _score_all_segments(p, batch, state, training, rng)
    return [_row_logp(cache, batch, b) for b in range(batch.batch_size)], cache.final_state


def nll_loss(
    p: SslmParams,
    batch: Batch,
    state: Optional[LstmState] = None,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, LstmState]:
    """Negative log likelihood per character over the batch.

    The returned state is detached: gradients never flow across batch
    boundaries even in long-range mode."""
    logps, final_state = forward_batch(p, batch, state, training, rng)
    total = batch.total_chars()
    loss = nn.scale(nn.tsum(nn.stack(logps, axis=0)), -1.0 / total)
    return loss, nn.detach_state(final_state)


def _single_batch(seq: CharSequence) -> Batch:
    if len(seq) == 0:
        raise DataError("empty sequence")
    return Batch(
        ids=seq.ids[None, :],
        spans=(seq.spans,),
        lengths=np.array([len(seq)], dtype=np.int64),
        carryover=False,
    )


def forward_marginal(
    p: SslmParams, seq: CharSequence, state: Optional[LstmState] = None
) -> tuple[float, LstmState, SegLattice]:
    """Exact log p(x) for one sequence, marginalizing all segmentations.

    The returned lattice records alpha, best backpointers (max over the same
    candidate terms) and per-candidate segment log probs."""
    with nn.no_grad():
        batch = _single_batch(seq)
        cache = _score_all_segments(p, batch, state)
        T = len(seq)
        alpha = np.zeros(T + 1)
        backptr = np.full(T + 1, -1, dtype=np.int64)
        branch = np.full(T + 1, -1, dtype=np.int64)
        lattice = SegLattice(alpha=alpha, backptr=backptr, branch=branch)
        for s, e in seq.spans:
            for t in range(s + 1, e + 1):
                ks, terms = _candidate_terms(cache, 0, t, s)
                vals = terms.data
                for k, v in zip(ks, vals):
                    lattice.seg_logp[(int(k), t)] = float(v)
                totals = alpha[ks] + vals
                m = totals.max()
                alpha[t] = m + np.log(np.exp(totals - m).sum())
                best = int(np.argmax(totals))
                backptr[t] = ks[best]
                branch[t] = _dominant_branch(cache, 0, int(ks[best]), t)
        return float(alpha[T]), nn.detach_state(cache.final_state), lattice


def _dominant_branch(cache: _ScoreCache, b: int, k: int, t: int) -> int:
    """0 if the character path carries more of the mixture mass, else 1."""
    if cache.log_g is None:
        return 0
    q = k * cache.B + b
    char_side = cache.log_g.data[q] + cache.seg_char.data[t - k - 1, q]
    col = cache.cm_lex[b][k, t - k - 1]
    if col < 0:
        return 0
    lex_side = cache.log_1mg.data[q] + cache.lex_lsf.data[q, col]
    return 0 if char_side >= lex_side else 1


def viterbi_segment(
    p: SslmParams, seq: CharSequence, state: Optional[LstmState] = None
) -> Segmentation:
    """Most likely segmentation (max instead of sum over the lattice).

    Score ties are broken toward the longer final segment, applied
    recursively via first-argmax backpointers over ascending starts."""
    with nn.no_grad():
        batch = _single_batch(seq)
        cache = _score_all_segments(p, batch, state)
        T = len(seq)
        best = np.zeros(T + 1)
        backptr = np.full(T + 1, -1, dtype=np.int64)
        for s, e in seq.spans:
            for t in range(s + 1, e + 1):
                ks, terms = _candidate_terms(cache, 0, t, s)
                totals = best[ks] + terms.data
                idx = int(np.argmax(totals))
                best[t] = totals[idx]
                backptr[t] = ks[idx]
        bounds = []
        t = T
        while t > 0:
            bounds.append(t)
            t = int(backptr[t])
        bound_set = set(bounds)
        cuts = tuple(
            tuple(c - s for c in sorted(bound_set) if s < c < e) for s, e in seq.spans
        )
        return Segmentation(spans=seq.spans, cuts=cuts)


def segment_logprob(p: SslmParams, h_k: Tensor, segment: np.ndarray) -> Tensor:
    """Mixture log prob of one candidate segment given history state h_k.

    Slow reference path: one decoder chain for the character branch, one
    lexicon lookup for the lexicon branch. Segments must lie inside a single
    word span: all alphabetic, or a single non-alphabetic character."""
    segment = np.asarray(segment, dtype=np.int64)
    if len(segment) == 0:
        raise DataError("empty segment")
    alpha_flags = p.vocab.alpha_mask[segment]
    if len(segment) > 1 and not alpha_flags.all():
        raise DataError("segment crosses a word boundary")
    h = nn.reshape(h_k, (1, p.config.hidden_dim))
    dstate = _decoder_init(p, h)
    zero = np.zeros(1, dtype=np.int64)
    total: Optional[Tensor] = None
    inp = nn.embedding(p.embed, zero)
    for j, cid in enumerate(segment):
        top, dstate = nn.lstm_step(p.decoder, inp, dstate)
        logsf = nn.log_softmax(nn.affine(top, *p.dec_proj), axis=-1)
        step = nn.gather2d(logsf, zero, np.array([cid]))
        total = step if total is None else nn.add(total, step)
        inp = nn.embedding(p.embed, segment[j : j + 1])
    top, dstate = nn.lstm_step(p.decoder, inp, dstate)
    logsf = nn.log_softmax(nn.affine(top, *p.dec_proj), axis=-1)
    p_char = nn.reshape(nn.add(total, nn.gather2d(logsf, zero, zero)), ())
    if p.lex_head is None:
        return p_char
    z = nn.reshape(nn.affine(h, *p.gate_head), ())
    log_g = nn.scale(nn.softplus(nn.scale(z, -1.0)), -1.0)
    log_1mg = nn.scale(nn.softplus(z), -1.0)
    char_side = nn.add(log_g, p_char)
    lex_id = lookup(p.lexicon, p.vocab.decode(segment))
    if lex_id is None:
        return char_side
    lex_lsf = nn.log_softmax(nn.affine(h, *p.lex_head), axis=-1)
    lex_side = nn.add(log_1mg, nn.reshape(nn.gather2d(lex_lsf, zero, np.array([lex_id])), ()))
    return nn.logaddexp(char_side, lex_side)


def encode_history(
    p: SslmParams, ids: np.ndarray, state: Optional[LstmState] = None
) -> tuple[list[Tensor], LstmState]:
    """Per-position history states for one sequence: hs[k] is the encoder
    state after consuming ids[:k] (hs[0] = empty history)."""
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        return [], state if state is not None else nn.lstm_init_state(p.encoder, 1)
    hs, final = _encode_batch(p, ids[None, :], state, training=False, rng=None)
    return [nn.reshape(h, (p.config.hidden_dim,)) for h in hs], final


def marginal_batch(
    p: SslmParams, batch: Batch, state: Optional[LstmState] = None
) -> tuple[np.ndarray, LstmState]:
    """Per-row log p(x) without taping (evaluation path)."""
    with nn.no_grad():
        logps, final = forward_batch(p, batch, state)
        return np.array([lp.item() for lp in logps]), nn.detach_state(final)


def corpus_bpc(
    p: SslmParams,
    sequences: list[CharSequence],
    batch_size: int = 32,
    seq_len: int = 120,
) -> float:
    """Bits per character over a corpus, batched by padding.

    Word-level mode scores each word in isolation; long-range mode scores
    whole lines from a fresh state, splitting lines longer than seq_len into
    carried-state windows (word spans break at window edges, mirroring
    training). Lines are grouped by length to limit padding waste; BPC is a
    corpus sum, so grouping order cannot change the result."""
    from .corpus import eval_windows, word_level_batches
    from .training import LN2

    n_chars = sum(len(s) for s in sequences)
    if n_chars == 0:
        raise DataError("empty corpus: BPC undefined")
    total = 0.0
    if p.config.mode == "word-level":
        for batch in word_level_batches(sequences, p.vocab, batch_size, rng=None):
            logps, _ = marginal_batch(p, batch)
            total += float(logps.sum())
        return -total / n_chars / LN2
    short = [s for s in sequences if 0 < len(s) <= seq_len]
    long_ = [s for s in sequences if len(s) > seq_len]
    short.sort(key=len)
    for i in range(0, len(short), batch_size):
        chunk = short[i : i + batch_size]
        tmax = max(len(s) for s in chunk)
        ids = np.full((len(chunk), tmax), EOS_ID, dtype=np.int64)
        for r, s in enumerate(chunk):
            ids[r, : len(s)] = s.ids
        batch = Batch(
            ids=ids,
            spans=tuple(s.spans for s in chunk),
            lengths=np.array([len(s) for s in chunk], dtype=np.int64),
            carryover=False,
        )
        logps, _ = marginal_batch(p, batch)
        total += float(logps.sum())
    for seq in long_:
        state = None
        for window in eval_windows(seq, p.vocab, seq_len):
            logps, state = marginal_batch(p, _single_batch(window), state)
            total += float(logps.sum())
    return -total / n_chars / LN2


def gate_statistics(p: SslmParams, sequences: list[CharSequence]) -> float:
    """Mean lexicon coefficient 1 - g_k over every history position.

    Zero when the lexicon is empty (the mixture has no lexicon branch)."""
    if p.gate_head is None:
        return 0.0
    total = 0.0
    count = 0
    with nn.no_grad():
        for seq in sequences:
            if len(seq) == 0:
                continue
            hs, _ = _encode_batch(p, seq.ids[None, :], None, False, None)
            flat = nn.reshape(nn.stack(hs, axis=0), (len(seq), p.config.hidden_dim))
            z = nn.affine(flat, *p.gate_head).data[:, 0]
            total += float((0.5 * (1.0 + np.tanh(-0.5 * z))).sum())
            count += len(seq)
    if count == 0:
        raise DataError("no history positions: corpus is empty")
    return total / count
