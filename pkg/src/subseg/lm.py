"""Baseline autoregressive LSTM language models over characters or subwords.

All three token kinds (char, bpe, ulm) share one architecture: embedding,
stacked LSTM, softmax over the token vocabulary. Id 0 doubles as the
sequence-start input; id 1 is the unknown token. Subword kinds carry their
segmenter inside the checkpoint so a model file is self-contained.

BPC is always per character (token count never enters the metric), which is
what makes char and subword models comparable on the same corpus. The char
kind also provides the per-position entropy profile used by the
entropy-criterion segmenters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn, segmenters
from .checkpoint import Checkpoint, expect_shapes, read_checkpoint, write_checkpoint
from .corpus import EOS_ID, EOS_TOKEN, UNK_ID, UNK_TOKEN, CharSequence, CharVocab
from .errors import DataError
from .nn import Tensor
from .training import LN2

KINDS = ("char", "bpe", "ulm")


@dataclass
class LmConfig:
    kind: str = "char"
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 1
    dropout: float = 0.0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown LM kind {self.kind!r}")
        if min(self.embed_dim, self.hidden_dim, self.num_layers) < 1:
            raise DataError("model dimensions must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError("dropout must lie in [0, 1)")


class LmParams:
    """LSTM language model over a fixed token vocabulary.

    For the char kind the token id space IS the CharVocab id space. For
    subword kinds ids 0/1 are the start/unknown markers and the rest are the
    segmenter's pieces in sorted order."""

    def __init__(
        self,
        config: LmConfig,
        vocab: CharVocab,
        rng: np.random.Generator,
        bpe: Optional[segmenters.BpeModel] = None,
        ulm: Optional[segmenters.UlmModel] = None,
    ):
        config.validate()
        if config.kind == "bpe" and bpe is None:
            raise DataError("bpe kind requires a BPE model")
        if config.kind == "ulm" and ulm is None:
            raise DataError("ulm kind requires a unigram model")
        self.config = config
        self.vocab = vocab
        self.bpe = bpe if config.kind == "bpe" else None
        self.ulm = ulm if config.kind == "ulm" else None
        if config.kind == "char":
            self.tokens = (EOS_TOKEN, UNK_TOKEN, *vocab.chars)
        else:
            pieces = (
                {left + right for left, right in self.bpe.merges}
                if config.kind == "bpe"
                else set(self.ulm.pieces)
            )
            pieces.update(vocab.chars)
            self.tokens = (EOS_TOKEN, UNK_TOKEN, *sorted(pieces))
        self._index = {t: i for i, t in enumerate(self.tokens)}
        n = len(self.tokens)
        E, H, L = config.embed_dim, config.hidden_dim, config.num_layers
        self.embed = nn.uniform_param(rng, (n, E))
        self.lstm = nn.LstmParams(E, H, L, rng)
        self.proj = (nn.uniform_param(rng, (H, n)), nn.zeros_param(n))

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("embed", self.embed)]
        out += self.lstm.named("lstm")
        out += [("proj.w", self.proj[0]), ("proj.b", self.proj[1])]
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def hyper(self) -> dict:
        c = self.config
        h = {
            "token_kind": c.kind,
            "embed_dim": c.embed_dim,
            "hidden_dim": c.hidden_dim,
            "num_layers": c.num_layers,
            "dropout": c.dropout,
            "vocab_chars": list(self.vocab.chars),
        }
        if self.bpe is not None:
            h["bpe_merges"] = [list(m) for m in self.bpe.merges]
        if self.ulm is not None:
            h["ulm_pieces"] = list(self.ulm.pieces)
            h["ulm_logp"] = [float(x) for x in self.ulm.logp]
        return h

    def save(self, path) -> None:
        write_checkpoint(
            path, "baseline-lm", self.hyper(), [(n, t.data) for n, t in self.named_params()]
        )

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "LmParams":
        if ck.kind != "baseline-lm":
            raise DataError(f"checkpoint kind {ck.kind!r}, expected 'baseline-lm'")
        h = ck.hyper
        config = LmConfig(
            kind=h["token_kind"],
            embed_dim=h["embed_dim"],
            hidden_dim=h["hidden_dim"],
            num_layers=h["num_layers"],
            dropout=h["dropout"],
        )
        vocab = CharVocab(h["vocab_chars"])
        bpe = ulm = None
        if config.kind == "bpe":
            bpe = segmenters.BpeModel(
                merges=tuple((l, r) for l, r in h["bpe_merges"]),
                symbols=tuple(sorted({l + r for l, r in h["bpe_merges"]} | set(vocab.chars))),
            )
        if config.kind == "ulm":
            ulm = segmenters.UlmModel(
                pieces=tuple(h["ulm_pieces"]), logp=np.array(h["ulm_logp"])
            )
        p = cls(config, vocab, np.random.default_rng(0), bpe=bpe, ulm=ulm)
        expect_shapes(ck, {n: t.data.shape for n, t in p.named_params()})
        for name, t in p.named_params():
            t.data = ck.tensors[name].copy()
        return p

    @classmethod
    def load(cls, path) -> "LmParams":
        return cls.from_checkpoint(read_checkpoint(path))

    # --- tokenization -----------------------------------------------------

    def word_tokens(self, word: str) -> list[str]:
        """Segment one word span into token strings."""
        if self.config.kind == "char" or (len(word) == 1 and not word.isalpha()):
            return list(word)
        if self.config.kind == "bpe":
            return segmenters.bpe_apply(self.bpe, word)
        return segmenters.ulm_segment(self.ulm, word)

    def tokenize(self, seq: CharSequence) -> np.ndarray:
        """Token ids for one line; unknown pieces map to id 1."""
        if self.config.kind == "char":
            return seq.ids.copy()
        ids = []
        for s, e in seq.spans:
            word = self.vocab.decode(seq.ids[s:e])
            for tok in self.word_tokens(word):
                ids.append(self._index.get(tok, UNK_ID))
        return np.array(ids, dtype=np.int64)

    def token_char_lengths(self) -> np.ndarray:
        """Character length credited to each token id (specials count 1)."""
        return np.array([max(1, len(t)) if i >= 2 else 1 for i, t in enumerate(self.tokens)])


def _lm_logits(
    p: LmParams,
    inputs: np.ndarray,
    state: Optional[nn.LstmState],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[list[Tensor], nn.LstmState]:
    """Per-step next-token log distributions for an input id block (B, T)."""
    B, T = inputs.shape
    if state is None:
        state = nn.lstm_init_state(p.lstm, B)
    rate = p.config.dropout
    out = []
    for t in range(T):
        x = nn.dropout(nn.embedding(p.embed, inputs[:, t]), rate, rng, training)
        top, state = nn.lstm_step(p.lstm, x, state, rate, rng, training)
        out.append(nn.log_softmax(nn.affine(top, *p.proj), axis=-1))
    return out, state


def lm_logprobs(
    p: LmParams, ids: np.ndarray, state: Optional[nn.LstmState] = None
) -> tuple[np.ndarray, nn.LstmState]:
    """Next-token log distributions, one row per position of `ids`.

    Row i conditions on ids[:i]; the first input is the start marker when no
    carried state is given, so row 0 is the unconditional start distribution."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DataError("lm_logprobs expects a 1-D id sequence")
    if len(ids) == 0:
        return np.zeros((0, p.n_tokens)), state or nn.lstm_init_state(p.lstm, 1)
    if (ids < 0).any() or (ids >= p.n_tokens).any():
        raise DataError("token id outside the model vocabulary")
    inputs = np.concatenate([[EOS_ID], ids[:-1]])[None, :]
    with nn.no_grad():
        logits, new_state = _lm_logits(p, inputs, state)
        rows = np.stack([l.data[0] for l in logits])
    return rows, new_state


@dataclass
class EntropyProfile:
    """Per-position conditional next-char entropy (nats) over one line."""

    h: np.ndarray
    mean: float
    std: float

    @classmethod
    def from_entropies(cls, h: np.ndarray) -> "EntropyProfile":
        h = np.asarray(h, dtype=np.float64)
        if len(h) == 0:
            return cls(h=h, mean=0.0, std=0.0)
        return cls(h=h, mean=float(h.mean()), std=float(h.std()))


def entropy_profile(p: LmParams, ids: np.ndarray) -> EntropyProfile:
    """H(x_i | x_{<i}) per position from a char-kind model."""
    if p.config.kind != "char":
        raise DataError("entropy profiles require a char-kind model")
    rows, _ = lm_logprobs(p, ids)
    h = -(np.exp(rows) * rows).sum(axis=1)
    return EntropyProfile.from_entropies(h)


def lm_line_logprob(p: LmParams, seq: CharSequence) -> float:
    """Natural-log probability of one line under its tokenization."""
    ids = p.tokenize(seq)
    if len(ids) == 0:
        return 0.0
    rows, _ = lm_logprobs(p, ids)
    return float(rows[np.arange(len(ids)), ids].sum())


def lm_corpus_bpc(p: LmParams, sequences: Sequence[CharSequence]) -> float:
    """Bits per character; N counts characters, not tokens."""
    n_chars = sum(len(s) for s in sequences)
    if n_chars == 0:
        raise DataError("empty corpus")
    total = sum(lm_line_logprob(p, s) for s in sequences)
    return -total / n_chars / LN2


@dataclass
class LmBatch:
    inputs: np.ndarray  # (B, T)
    targets: np.ndarray  # (B, T)
    chars: int
    carryover: bool


def lm_batches(
    p: LmParams, sequences: Sequence[CharSequence], batch_size: int, seq_len: int
) -> list[LmBatch]:
    """Streamed LM batches: lines tokenized, joined by the space token, cut
    into lanes and fixed windows with state carryover (inputs are the stream
    shifted right by one, starting from the start marker)."""
    if batch_size < 1 or seq_len < 1:
        raise DataError("batch_size and seq_len must be >= 1")
    space = p._index.get(" ", UNK_ID)
    parts = []
    for i, seq in enumerate(sequences):
        if i > 0:
            parts.append(np.array([space], dtype=np.int64))
        parts.append(p.tokenize(seq))
    stream = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    arr = np.concatenate([[EOS_ID], stream])
    usable = len(arr) - 1
    lane = usable // batch_size
    n_windows = lane // seq_len
    if n_windows == 0:
        raise DataError(
            f"corpus has {usable} tokens; need at least batch_size*seq_len = "
            f"{batch_size * seq_len}"
        )
    charlen = p.token_char_lengths()
    inp = np.stack([arr[b * lane : b * lane + n_windows * seq_len] for b in range(batch_size)])
    tgt = np.stack(
        [arr[b * lane + 1 : b * lane + 1 + n_windows * seq_len] for b in range(batch_size)]
    )
    out = []
    for w in range(n_windows):
        sl = slice(w * seq_len, (w + 1) * seq_len)
        t = tgt[:, sl]
        out.append(
            LmBatch(
                inputs=inp[:, sl],
                targets=t,
                chars=int(charlen[t].sum()),
                carryover=w > 0,
            )
        )
    return out


def lm_nll_loss(
    p: LmParams,
    batch: LmBatch,
    state: Optional[nn.LstmState] = None,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Tensor, nn.LstmState]:
    """Per-character NLL of the batch targets; state is detached."""
    logits, new_state = _lm_logits(p, batch.inputs, state, training, rng)
    B = batch.inputs.shape[0]
    rows = np.arange(B)
    steps = [nn.gather2d(l, rows, batch.targets[:, t]) for t, l in enumerate(logits)]
    loss = nn.scale(nn.tsum(nn.stack(steps, axis=0)), -1.0 / batch.chars)
    return loss, nn.detach_state(new_state)
