"""Acceptance gate: end-to-end behavioral bars for the toolkit.

Every test prints one `ACCEPTANCE n: PASS/FAIL (...)` line (visible under
pytest -s) and asserts the same condition, so the gate both reports and
enforces. Cheap exactness checks come first; the trained reproductions
(planted-morpheme recovery, lexicon ablation, overfit capacity) run last
and dominate the wall time.
"""

import itertools
import math
import time

import numpy as np
import pytest

import oracles
from subseg import cli, evaluation, lm, nn, sslm
from subseg.corpus import (
    Batch,
    CharVocab,
    EOS_ID,
    make_sequence,
    word_level_batches,
)
from subseg.evaluation import GoldAnalysis, mbi_scores, mi_scores
from subseg.lexicon import Lexicon, build_lexicon
from subseg.lm import EntropyProfile, lm_corpus_bpc
from subseg.segmenters import (
    BoundaryCriterion,
    UlmModel,
    bpe_train,
    cuts_to_pieces,
    entropy_segment,
    ulm_segment,
    ulm_train,
)
from subseg.sslm import SslmConfig, SslmParams, forward_marginal, viterbi_segment
from subseg.training import Schedule, train_loop


def report(n: int, ok: bool, detail: str) -> bool:
    print(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} ({detail})", flush=True)
    return ok


@pytest.fixture(scope="class")
def dp_instances():
    """200 random small models, each with one word of length <= 8."""
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(200):
        n_chars = int(rng.integers(2, 6))
        chars = tuple("abcde"[:n_chars])
        vocab = CharVocab(chars)
        length = int(rng.integers(1, 9))
        word = "".join(chars[i] for i in rng.integers(0, n_chars, size=length))
        seq = make_sequence(word, vocab)
        cfg = SslmConfig(
            embed_dim=int(rng.integers(2, 7)),
            hidden_dim=int(rng.integers(2, 17)),
            num_layers=int(rng.integers(1, 3)),
            dropout=0.0,
            dp_max_seg=None,
            mode="word-level",
        )
        if rng.random() < 0.5:
            lex = build_lexicon([seq], vocab, int(rng.integers(2, 9)), 8)
        else:
            lex = Lexicon.empty(8)
        out.append((SslmParams(cfg, vocab, lex, rng), seq))
    return out


class TestLatticeAgainstEnumeration:
    """The forward marginal and Viterbi argmax must equal brute force."""

    def test_forward_marginal_matches_brute_force(self, dp_instances):
        t0 = time.monotonic()
        worst = 0.0
        for p, seq in dp_instances:
            lp, _, _ = forward_marginal(p, seq)
            worst = max(worst, abs(lp - oracles.brute_marginal(p, seq)))
        elapsed = time.monotonic() - t0
        ok = worst < 1e-9 and elapsed < 120.0
        assert report(
            1, ok, f"max |lattice - enumeration| = {worst:.3g} over 200 instances, {elapsed:.1f}s"
        )

    def test_viterbi_matches_exhaustive_argmax(self, dp_instances):
        t0 = time.monotonic()
        matches = 0
        for p, seq in dp_instances:
            got = viterbi_segment(p, seq).cuts
            if got == oracles.brute_viterbi_cuts(p, seq):
                matches += 1
        elapsed = time.monotonic() - t0
        ok = matches == 200
        assert report(2, ok, f"exact cut-set match {matches}/200, {elapsed:.1f}s")


class TestGradientAgainstFiniteDifferences:
    """Backpropagated gradients on the full loss, one scalar at a time."""

    def test_every_parameter_matches(self):
        rng = np.random.default_rng(5)
        vocab = CharVocab(("a", "b", "c", "d", "e", "f"))
        seqs = [make_sequence("abc", vocab), make_sequence("def", vocab)]
        lex = build_lexicon(seqs, vocab, 8, 3)
        cfg = SslmConfig(embed_dim=3, hidden_dim=4, num_layers=1, dropout=0.0, mode="word-level")
        p = SslmParams(cfg, vocab, lex, rng)
        (batch,) = word_level_batches(seqs, vocab, 2, rng=None)

        def loss_value() -> float:
            loss, _ = sslm.nll_loss(p, batch, None, training=False)
            return float(loss.data)

        named = p.named_params()
        nn.zero_grads([t for _, t in named])
        loss, _ = sslm.nll_loss(p, batch, None, training=False)
        nn.backward(loss)

        t0 = time.monotonic()
        eps = 1e-5
        worst = 0.0
        checked = 0
        for _, t in named:
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = loss_value()
                flat[i] = orig - eps
                down = loss_value()
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
                worst = max(worst, rel)
                checked += 1
        elapsed = time.monotonic() - t0
        ok = worst < 1e-4 and elapsed < 60.0
        assert report(3, ok, f"max rel grad err {worst:.3g} over {checked} scalars, {elapsed:.1f}s")


class TestStringProbabilityNormalization:
    """Marginalizing segmentations must never create probability mass."""

    def test_enumerated_mass_is_bounded(self):
        vocab = CharVocab(("a", "b", " "))
        strings = [
            "".join(tup)
            for length in range(1, 5)
            for tup in itertools.product("ab", repeat=length)
        ]
        train = [make_sequence("ab ba ab", vocab)]
        worst = -1.0
        for seed in (0, 1, 2):
            for lex_size in (0, 6):
                rng = np.random.default_rng(seed)
                lex = build_lexicon(train, vocab, lex_size, 4) if lex_size else Lexicon.empty(4)
                cfg = SslmConfig(embed_dim=3, hidden_dim=5, num_layers=1, mode="word-level")
                p = SslmParams(cfg, vocab, lex, rng)
                total = 0.0
                for w in strings:
                    lp, _, _ = forward_marginal(p, make_sequence(w + " ", vocab))
                    total += math.exp(lp)
                worst = max(worst, total)
        ok = worst <= 1.0 + 1e-9
        assert report(
            4, ok, f"max Σ p(string + boundary) = {worst:.6f} over 6 models x 30 strings"
        )


class TestMetricFixtures:
    """Hand-checkable identification, boundary, and BPC values."""

    def test_fixture_values_reproduce(self):
        gold = GoldAnalysis("sesihambe", ("se", "si", "hamb", "e"))
        mi = mi_scores([["se", "si", "hambe"]], [gold])
        mi_ok = mi.precision == 2 / 3 and mi.recall == 0.5

        gold_b = GoldAnalysis("abcdefghij", ("ab", "cd", "efgh", "ij"))  # cuts {2, 4, 8}
        mbi = mbi_scores([["ab", "cd", "efghij"]], [gold_b])  # cuts {2, 4}
        mbi_ok = (
            mbi.precision == 1.0 and mbi.recall == 2 / 3 and abs(mbi.f1 - 0.8) < 1e-12
        )

        vocab = CharVocab(("a", "b", "c", "d"))
        cfg = lm.LmConfig(kind="char", embed_dim=4, hidden_dim=6, num_layers=1)
        u = lm.LmParams(cfg, vocab, np.random.default_rng(0))
        u.proj[0].data[:] = 0.0
        u.proj[1].data[:] = 0.0
        # specials underflow to exactly zero probability, leaving a uniform
        # quarter on each of the four characters
        u.proj[1].data[0:2] = -1000.0
        corpus = [make_sequence(t, vocab) for t in ("abcd", "dcba", "aabb")]
        net = lm_corpus_bpc(u, corpus)
        fn = evaluation.bpc(lambda line: len(line) * -np.log(4.0), ["abcd", "dcba", "aabb"])
        bpc_ok = net == 2.0 and fn == 2.0

        ok = mi_ok and mbi_ok and bpc_ok
        assert report(
            7,
            ok,
            f"MI P={mi.precision:.4f} R={mi.recall:.4f}; "
            f"MBI P={mbi.precision:.0f} R={mbi.recall:.4f} F1={mbi.f1:.4f}; "
            f"uniform 4-char BPC = {net}",
        )


def profile(*h):
    return EntropyProfile.from_entropies(np.array(h, dtype=np.float64))


class TestBaselineOracles:
    """Reference behaviors of the three baseline segmenters."""

    def test_baseline_reference_behaviors(self):
        chars = tuple(sorted(set("abab abab")))
        vocab = CharVocab(chars)
        first = bpe_train([make_sequence("abab abab", vocab)], vocab, num_merges=1).merges[0]
        bpe_ok = first == ("a", "b")

        em_ok = True
        for lines in (
            ("ab ab", "abc", "cab"),
            ("aaa", "aa", "a", "aaaa"),
            ("xy yx", "xxyy", "yy xy"),
        ):
            cs = tuple(sorted({c for line in lines for c in line}))
            v = CharVocab(cs)
            seqs = [make_sequence(line, v) for line in lines]
            m = ulm_train(seqs, v, seed_size=30, target_vocab=len(cs) + 1, em_iters=2)
            tr = m.em_trace
            em_ok = em_ok and len(tr) % 2 == 0 and all(
                tr[i + 1] >= tr[i] - 1e-9 for i in range(0, len(tr), 2)
            )

        rng = np.random.default_rng(13)
        alphabet = list("abc")
        matches = 0
        for trial in range(100):
            pieces = set(alphabet)
            for _ in range(int(rng.integers(2, 7))):
                pieces.add("".join(rng.choice(alphabet, size=int(rng.integers(2, 4)))))
            pieces = tuple(sorted(pieces))
            w = rng.random(len(pieces)) + 0.05
            logp = np.log(w / w.sum())
            m = UlmModel(pieces=pieces, logp=logp)
            letters = alphabet + (["z"] if trial % 5 == 0 else [])
            word = "".join(rng.choice(letters, size=int(rng.integers(1, 9))))
            if ulm_segment(m, word) == oracles.brute_ulm_segment(pieces, logp, word):
                matches += 1
        seg_ok = matches == 100

        ent_ok = (
            entropy_segment(profile(1.0, 2.0, 1.5), (0, 3), BoundaryCriterion.SPIKE) == {1}
            and entropy_segment(profile(1.0, 2.0, 3.0), (0, 3), BoundaryCriterion.INCREASE)
            == {1, 2}
            and entropy_segment(profile(1.0, 1.0, 1.0, 5.0), (0, 4), BoundaryCriterion.STDDEV)
            == {3}
        )

        ok = bpe_ok and em_ok and seg_ok and ent_ok
        assert report(
            8,
            ok,
            f"first merge {first}; EM monotone within phases 3/3 corpora; "
            f"unigram argmax {matches}/100; entropy fixtures {'ok' if ent_ok else 'mismatch'}",
        )


class TestDeterminism:
    """Same config and seed must reproduce artifacts down to the byte."""

    def test_identical_runs_produce_identical_bytes(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SUBSEG_VERBOSITY", "0")
        train = tmp_path / "train.txt"
        valid = tmp_path / "valid.txt"
        train.write_text(
            "".join(f"{w}\n" for w in ("abab cd", "cdcd ab", "abcd", "dcba ab", "cdab") * 2)
        )
        valid.write_text("abab\ncdcd\n")
        artifacts = []
        for name in ("one.ck", "two.ck"):
            out = tmp_path / name
            code = cli.main(
                ["train", str(train), str(valid), "--out", str(out),
                 "--set", "model=sslm", "--set", "mode=word-level",
                 "--set", "embed_dim=4", "--set", "hidden_dim=6",
                 "--set", "lexicon_size=12", "--set", "max_seg_len=3",
                 "--set", "batch_size=2", "--set", "max_epochs=2",
                 "--set", "lr=0.01", "--set", "seed=5"]
            )
            assert code == 0
            artifacts.append(
                (out.read_bytes(), (tmp_path / f"{name}.log").read_bytes())
            )
        ck_same = artifacts[0][0] == artifacts[1][0]
        log_same = artifacts[0][1] == artifacts[1][1]
        ok = ck_same and log_same
        assert report(
            10,
            ok,
            f"checkpoint {'identical' if ck_same else 'differs'} "
            f"({len(artifacts[0][0])} bytes), log {'identical' if log_same else 'differs'}",
        )


OVERFIT_SENTENCES = (
    "the clock struck twelve.", "a boat drifted past the reeds.",
    "she folded the letter twice.", "nobody painted the old bridge.",
    "six warm loaves cooled on the sill.", "his lantern went out.",
    "wild geese crossed the grey sky.", "the children counted the steps.",
    "frost covered the meadow.", "the librarian locked the oak door.",
    "he traded rope for dried figs.", "the train slowed near the tunnel.",
    "the river carried pale blossoms.", "she wound the music box.",
    "the new tax would ruin the town.", "four cats slept on the wall.",
    "the captain marked the reef.", "smoke rose from the far hills.",
    "a loose shutter banged all night.", "the tailor kept a silver thimble.",
    "no one answered the watchman.", "their wagon lost a wheel.",
    "he drew a spiral on the board.", "snow hid the narrow path.",
    "she repaired the torn net.", "the attic map showed a well.",
    "the bell ringer climbed the tower.", "ripe pears dropped into the straw.",
    "the clerk copied each name.", "a fox crossed the frozen pond.",
    "clean mugs stood by the kettle.", "the storm lasted nine days.",
    "two fishermen argued quietly.", "the apprentice swept the filings.",
    "lamplight spilled on the cobbles.", "she pressed seeds into the soil.",
    "he measured the field twice.", "a gust scattered his papers.",
    "the dog circled the flock.", "their canoe slid under the branches.",
    "the watchmaker raised his lens.", "warm bread waited on the table.",
    "the ferry ran late again.", "he painted the step dull green.",
    "moths circled the dim lamp.", "steam rose with a sharp hiss.",
    "flat stones led through the marsh.", "the twins hid the brass key.",
    "carts of cabbages filled the square.", "the harvest wagons stood empty.",
)


def padded_line_batches(sequences, batch_size, rng):
    """Full lines from a fresh state, padded within length-sorted chunks."""
    order = sorted(range(len(sequences)), key=lambda i: len(sequences[i]))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(chunks)
    out = []
    for chunk in chunks:
        rows = [sequences[i] for i in chunk]
        tmax = max(len(s) for s in rows)
        ids = np.full((len(rows), tmax), EOS_ID, dtype=np.int64)
        for r, s in enumerate(rows):
            ids[r, : len(s)] = s.ids
        out.append(
            Batch(
                ids=ids,
                spans=tuple(s.spans for s in rows),
                lengths=np.array([len(s) for s in rows], dtype=np.int64),
                carryover=False,
            )
        )
    return out


class TestOverfitCapacity:
    """A medium model must be able to memorize a tiny real-text corpus."""

    def test_fifty_sentences_memorized(self):
        assert len(OVERFIT_SENTENCES) == 50
        vocab = CharVocab(tuple(sorted({c for s in OVERFIT_SENTENCES for c in s})))
        seqs = [make_sequence(s, vocab) for s in OVERFIT_SENTENCES]
        rng = np.random.default_rng(3)
        cfg = SslmConfig(
            embed_dim=64, hidden_dim=192, num_layers=1, dropout=0.0,
            dp_max_seg=3, mode="long-range",
        )
        p = SslmParams(cfg, vocab, Lexicon.empty(3), rng)
        params = [t for _, t in p.named_params()]
        opt = nn.adam_init(params, lr=0.005, weight_decay=0.0)

        t0 = time.monotonic()
        reached = None
        for epoch in range(1, 201):
            for batch in padded_line_batches(seqs, 8, rng):
                nn.zero_grads(params)
                loss, _ = sslm.nll_loss(p, batch, None, training=True, rng=rng)
                nn.backward(loss)
                nn.adam_step(params, nn.collect_grads(params), opt, 1.0)
            if epoch % 5 == 0:
                train_bpc = sslm.corpus_bpc(p, seqs, 8, 60)
                if train_bpc < 0.5:
                    reached = (epoch, train_bpc)
                    break
        elapsed = time.monotonic() - t0
        ok = reached is not None
        detail = (
            f"train BPC {reached[1]:.4f} at epoch {reached[0]}, {elapsed:.0f}s"
            if reached
            else f"never dropped below 0.5 within 200 epochs ({elapsed:.0f}s)"
        )
        assert report(6, ok, detail)


# Shared corpus and training runs for the planted-morpheme checks. The two
# arms differ only in lexicon size; everything else, including the parameter
# seed, is identical.
PLANTED_SEED = 11
PLANTED_CFG = dict(embed_dim=32, hidden_dim=128, num_layers=1, dropout=0.2, mode="word-level")
PLANTED_MAX_SEG = 8
PLANTED_EPOCHS = 14
PLANTED_BATCH = 16
PLANTED_LR = 0.005


@pytest.fixture(scope="class")
def planted_runs():
    rng0 = np.random.default_rng(PLANTED_SEED)
    morphs, words, golds = oracles.planted_language(rng0)
    n = len(words)
    tr, va = int(n * 0.8), int(n * 0.9)
    vocab = CharVocab(tuple(sorted({c for w in words for c in w})))
    train_seqs = [make_sequence(w, vocab) for w in words[:tr]]
    valid_seqs = [make_sequence(w, vocab) for w in words[tr:va]]
    test_seqs = [make_sequence(w, vocab) for w in words[va:]]
    test_golds = [GoldAnalysis(w, parts) for w, parts in zip(words[va:], golds[va:])]

    def train_arm(lex_size):
        rng = np.random.default_rng(7)
        if lex_size:
            lex = build_lexicon(train_seqs, vocab, lex_size, PLANTED_MAX_SEG)
        else:
            lex = Lexicon.empty(PLANTED_MAX_SEG)
        cfg = SslmConfig(dp_max_seg=PLANTED_MAX_SEG, **PLANTED_CFG)
        p = SslmParams(cfg, vocab, lex, rng)
        params = [t for _, t in p.named_params()]

        def loss_fn(batch, state):
            loss, new_state = sslm.nll_loss(p, batch, None, training=True, rng=rng)
            return loss, batch.total_chars(), new_state

        t0 = time.monotonic()
        result = train_loop(
            params,
            lambda epoch: word_level_batches(train_seqs, vocab, PLANTED_BATCH, rng),
            loss_fn,
            lambda: sslm.corpus_bpc(p, valid_seqs),
            lambda: b"",
            lr=PLANTED_LR,
            weight_decay=1e-5,
            clip=1.0,
            sched=Schedule(),
            max_epochs=PLANTED_EPOCHS,
        )
        return p, result, time.monotonic() - t0

    p500, r500, secs500 = train_arm(500)
    p0, r0, secs0 = train_arm(0)
    return {
        "vocab": vocab,
        "test_seqs": test_seqs,
        "test_golds": test_golds,
        "with_lexicon": (p500, r500, secs500),
        "char_only": (p0, r0, secs0),
    }


class TestPlantedMorphemes:
    """Training on morpheme concatenations must recover the planted units,
    and the lexicon branch must earn its keep on held-out likelihood."""

    def test_boundary_recovery_on_test_split(self, planted_runs):
        p, _, secs = planted_runs["with_lexicon"]
        vocab = planted_runs["vocab"]
        t0 = time.monotonic()
        pred = []
        for seq in planted_runs["test_seqs"]:
            seg = viterbi_segment(p, seq)
            pred.extend(sslm.word_pieces(seq, seg, vocab))
        f1 = mbi_scores(pred, planted_runs["test_golds"]).f1
        total = secs + (time.monotonic() - t0)
        ok = f1 >= 0.80 and total < 900.0
        assert report(5, ok, f"test MBI F1 = {f1:.4f}, train+segment time {total:.0f}s")

    def test_lexicon_improves_validation_bpc(self, planted_runs):
        _, r500, _ = planted_runs["with_lexicon"]
        _, r0, _ = planted_runs["char_only"]
        ok = r500.best_valid_bpc < r0.best_valid_bpc
        assert report(
            9,
            ok,
            f"valid BPC with lexicon {r500.best_valid_bpc:.4f} vs "
            f"char-only {r0.best_valid_bpc:.4f}",
        )
