import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shallowfusion.prune import (
    LogNDeduplicator,
    PruneConfig,
    PruneError,
    RareWordFilter,
    TargetSampler,
    VocabularyFilter,
    keep_count,
    load_vocabulary,
    logn_dedup,
    prune_pipeline,
    rare_word_filter,
    run_stage,
    sample_to_target,
    vocab_filter,
)
from shallowfusion.text import CorpusStats, count_unigrams, read_corpus, synth_corpus, synth_words, write_corpus

from oracles import dedup_expected, first_occurrences_kept


def duplicated_corpus(seed: int, n: int = 2000) -> list[str]:
    """Zipf sentences drawn from a small pool, so multiplicities span 1 to hundreds."""
    pool = synth_corpus(synth_words(30, seed=seed), 1.0, 300, seed=seed)
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, len(pool) + 1)
    return [pool[i] for i in rng.choice(len(pool), size=n, p=weights / weights.sum())]


class TestKeepCount:
    @pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (7, 1), (8, 2), (20, 2), (21, 3), (10**6, 13)])
    def test_natural_log(self, n, k):
        assert keep_count(n) == k

    def test_other_bases(self):
        assert keep_count(8, "log2") == 3
        assert keep_count(1000, "log10") == 3

    def test_bad_input(self):
        with pytest.raises(ValueError):
            keep_count(0)
        with pytest.raises(ValueError):
            keep_count(5, "log7")


class TestVocabFilter:
    def test_misspelling_dropped(self):
        kept, dropped = vocab_filter(["facebook login", "facbook login"], {"facebook", "login"})
        assert kept == ["facebook login"] and dropped == 1

    def test_all_in_vocab_unchanged(self):
        lines = ["a b", "b a", "a"]
        assert vocab_filter(lines, {"a", "b"})[0] == lines

    def test_estimator_reads_file(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\n\n")
        vf = VocabularyFilter(vocabulary=str(tmp_path / "v.txt")).fit()
        assert vf.transform(["a b", "a c"]) == ["a b"] and vf.n_dropped_ == 1

    def test_missing_vocab_file(self, tmp_path):
        with pytest.raises(PruneError, match="not found"):
            load_vocabulary(tmp_path / "nope.txt")


class TestLogNDedup:
    def test_single_sentence_unchanged(self):
        assert logn_dedup(["only one"]) == ["only one"]

    def test_eight_copies_keep_two(self):
        assert logn_dedup(["x"] * 8 + ["y"]) == ["x", "x", "y"]

    def test_recount_oracle(self):
        lines = duplicated_corpus(0)
        out = logn_dedup(lines)
        assert Counter(out) == dedup_expected(lines)
        assert first_occurrences_kept(lines, out)

    def test_log2_base(self):
        lines = duplicated_corpus(1)
        assert Counter(logn_dedup(lines, "log2")) == dedup_expected(lines, math.log2)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from(["a", "b c", "d", "e f g"]), max_size=80))
    def test_property(self, lines):
        out = logn_dedup(lines)
        assert Counter(out) == dedup_expected(lines)
        assert first_occurrences_kept(lines, out)
        assert set(out) == set(lines)

    def test_idempotent_below_threshold(self):
        lines = ["a"] * 5 + ["b"] * 3
        assert logn_dedup(logn_dedup(lines)) == logn_dedup(lines)

    def test_estimator(self):
        assert LogNDeduplicator().fit().transform(["q"] * 21) == ["q"] * 3


class TestRareFilter:
    def test_invariant(self):
        am = count_unigrams(["a a a a a b b", "c"])
        lines = ["a", "a b", "a c", "z", "b b"]
        out = rare_word_filter(lines, am, threshold=5)
        assert out == ["a b", "a c", "z", "b b"]
        for s in out:
            assert any(am.counts.get(w, 0) < 5 for w in s.split())
        for s in set(lines) - set(out):
            assert all(am.counts.get(w, 0) >= 5 for w in s.split())

    def test_threshold_one_keeps_only_unseen(self):
        am = count_unigrams(["a b"])
        assert rare_word_filter(["a", "a q"], am, threshold=1) == ["a q"]

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            rare_word_filter(["a"], CorpusStats(), threshold=0)

    def test_estimator(self):
        rf = RareWordFilter(am_stats=count_unigrams(["a"] * 6)).fit()
        assert rf.transform(["a", "b"]) == ["b"]


class TestSampling:
    def test_target_at_least_size_is_identity(self):
        lines = ["c", "a", "b"]
        assert sample_to_target(lines, 3, seed=0) == lines
        assert sample_to_target(lines, 10, seed=0) == lines

    def test_zero(self):
        assert sample_to_target(["a", "b"], 0, seed=0) == []

    def test_deterministic_subset_in_order(self):
        lines = [f"s{i}" for i in range(100)]
        a = sample_to_target(lines, 30, seed=7)
        assert a == sample_to_target(lines, 30, seed=7)
        assert a != sample_to_target(lines, 30, seed=8)
        assert len(set(a)) == 30 and a == sorted(a, key=lines.index)

    def test_roughly_uniform(self):
        lines = [str(i) for i in range(10)]
        hits = Counter(s for seed in range(2000) for s in sample_to_target(lines, 3, seed))
        assert min(hits.values()) > 450 and max(hits.values()) < 750

    def test_estimator_needs_target(self):
        with pytest.raises(ValueError):
            TargetSampler().fit()


class TestWorkerInvariance:
    @pytest.mark.parametrize("workers", [2, 8])
    def test_each_stage(self, workers):
        lines = duplicated_corpus(3, 5000)
        vocab = set(w for s in lines for w in s.split())
        vocab.discard(sorted(vocab)[0])
        am = count_unigrams(lines[:200])
        assert vocab_filter(lines, vocab, workers) == vocab_filter(lines, vocab, 1)
        assert logn_dedup(lines, workers=workers) == logn_dedup(lines, workers=1)
        assert rare_word_filter(lines, am, 5, workers) == rare_word_filter(lines, am, 5, 1)


class TestPipeline:
    @pytest.fixture
    def setup(self, tmp_path):
        lines = duplicated_corpus(4, 3000)
        words = sorted(set(w for s in lines for w in s.split()))
        (tmp_path / "vocab.txt").write_text("\n".join(words[1:]) + "\n")
        count_unigrams(lines[:100]).save(tmp_path / "am.tsv")
        return lines, tmp_path

    def test_stages_and_report(self, setup):
        lines, d = setup
        cfg = PruneConfig(vocab_path=str(d / "vocab.txt"), target=50, seed=1)
        assert cfg.stages() == ["1", "2", "3"]
        out, report = prune_pipeline(lines, cfg)
        counts = report.counts()
        assert counts[0] == len(lines) and counts[-1] == len(out) == 50
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert report.to_dict()["reference_ledger"]["input"] == 230e9

    def test_rare_filter_skips_sampling_by_default(self):
        assert PruneConfig(rare_filter=True, target=10).stages() == ["2", "2*"]
        assert PruneConfig(rare_filter=True, target=10, sample_after_rare_filter=True).stages() == \
            ["2", "2*", "3"]

    def test_stages_through_files_equal_pipeline(self, setup):
        lines, d = setup
        cfg = PruneConfig(vocab_path=str(d / "vocab.txt"), rare_filter=True, am_stats_path=str(d / "am.tsv"),
                          target=40, sample_after_rare_filter=True, seed=3)
        whole, _ = prune_pipeline(lines, cfg)
        path = d / "stage_in.txt"
        write_corpus(lines, path)
        for i, stage in enumerate(cfg.stages()):
            nxt = d / f"stage_{i}.txt"
            write_corpus(run_stage(stage, read_corpus(path), cfg), nxt)
            path = nxt
        assert read_corpus(path) == whole

    def test_missing_am_stats(self):
        with pytest.raises(PruneError, match=r"stage 2\*"):
            prune_pipeline(["a"], PruneConfig(rare_filter=True))

    def test_missing_vocab_path(self, tmp_path):
        with pytest.raises(PruneError, match="stage 1"):
            prune_pipeline(["a"], PruneConfig(vocab_path=str(tmp_path / "missing.txt")))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            PruneConfig(log_base="log3")
        with pytest.raises(ValueError):
            run_stage("4", [], PruneConfig())
