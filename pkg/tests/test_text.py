import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from shallowfusion.text import (
    CharVocab,
    CorpusError,
    CorpusStats,
    VocabError,
    count_unigrams,
    count_unigrams_file,
    count_unigrams_parallel,
    decode,
    encode,
    read_corpus,
    synth_corpus,
    synth_words,
    write_corpus,
    zipf_weights,
)

from oracles import unigram_counts

VOCAB = CharVocab("abcdefghij")


class TestCharVocab:
    def test_reserved_ids(self):
        assert VOCAB.symbols[:3] == ["<s>", "</s>", "<space>"]
        assert (VOCAB.sos_id, VOCAB.eos_id, VOCAB.space_id) == (0, 1, 2)

    def test_ids_dense(self):
        assert sorted(VOCAB.id_of(VOCAB.char_of(i)) for i in range(2, len(VOCAB))) == list(range(2, len(VOCAB)))

    def test_save_load(self, tmp_path):
        VOCAB.save(tmp_path / "v.txt")
        assert CharVocab.load(tmp_path / "v.txt") == VOCAB

    def test_load_rejects_bad_header(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\n")
        with pytest.raises(VocabError):
            CharVocab.load(tmp_path / "v.txt")

    def test_fingerprint_depends_on_symbols(self):
        assert VOCAB.fingerprint != CharVocab("abc").fingerprint
        assert VOCAB.fingerprint == CharVocab("jihgfedcba").fingerprint


class TestEncode:
    def test_empty(self):
        assert encode("", VOCAB) == [VOCAB.sos_id, VOCAB.eos_id]

    def test_two_chars(self):
        v = CharVocab("ab")
        assert encode("ab", v) == [v.sos_id, v.id_of("a"), v.id_of("b"), v.eos_id]

    def test_oov_names_char_and_position(self):
        with pytest.raises(VocabError, match=r"'z'.*position 2"):
            encode("abz", VOCAB)

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        alphabet = list("abcdefghij ")
        for _ in range(1000):
            s = "".join(rng.choice(alphabet, size=int(rng.integers(0, 20))))
            ids = encode(s, VOCAB)
            assert len(ids) == len(s) + 2
            assert decode(ids, VOCAB) == s

    @given(st.text(alphabet="abcdefghij ", max_size=30))
    def test_round_trip_property(self, s):
        assert decode(encode(s, VOCAB), VOCAB) == s


class TestCorpusIO:
    def test_blank_lines_and_trailing_newline(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("A b\n\n  \nc\n")
        assert read_corpus(p) == ["a b", "c"]
        p.write_text("A b\n\n  \nc")
        assert read_corpus(p) == ["a b", "c"]

    def test_invalid_utf8_reports_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_bytes(b"ok\nfine\n\xff\xfe\n")
        with pytest.raises(CorpusError, match="line 3"):
            read_corpus(p)

    def test_write_read(self, tmp_path):
        write_corpus(["x y", "z"], tmp_path / "c.txt")
        assert read_corpus(tmp_path / "c.txt") == ["x y", "z"]


class TestCountUnigrams:
    def test_small(self):
        assert dict(count_unigrams(["a b", "a"]).counts) == {"a": 2, "b": 1}

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.txt").write_text("")
        stats = count_unigrams_file(tmp_path / "e.txt")
        assert len(stats) == 0 and stats.n_words == 0

    def test_totals(self):
        s = count_unigrams(["a b c", "a", "b b"])
        assert s.n_words == 6 and s.n_sentences == 3

    def test_zipf_corpus_matches_sequential_oracle(self):
        words = synth_words(300, seed=1)
        lines = synth_corpus(words, 1.0, 100_000, seed=2)
        assert dict(count_unigrams_parallel(lines, workers=2).counts) == unigram_counts(lines)

    def test_order_independent(self):
        lines = synth_corpus(synth_words(50, seed=3), 1.1, 500, seed=4)
        assert count_unigrams(lines).counts == count_unigrams(lines[::-1]).counts

    def test_stats_tsv_round_trip(self, tmp_path):
        s = count_unigrams(["b a", "a"])
        s.save(tmp_path / "s.tsv")
        assert (tmp_path / "s.tsv").read_text() == "a\t2\nb\t1\n"
        assert CorpusStats.load(tmp_path / "s.tsv").counts == s.counts

    def test_stats_rejects_bad_line(self, tmp_path):
        (tmp_path / "s.tsv").write_text("a 2\n")
        with pytest.raises(CorpusError):
            CorpusStats.load(tmp_path / "s.tsv")

    @settings(max_examples=50)
    @given(st.lists(st.text(alphabet="abc ", max_size=12), max_size=20),
           st.lists(st.text(alphabet="abc ", max_size=12), max_size=20))
    def test_monoid_homomorphism(self, a, b):
        merged = count_unigrams(a).merge(count_unigrams(b))
        whole = count_unigrams(a + b)
        assert merged.counts == whole.counts
        assert merged.n_sentences == whole.n_sentences


class TestSynthCorpus:
    def test_deterministic(self, tmp_path):
        words = synth_words(100, seed=0)
        write_corpus(synth_corpus(words, 1.0, 200, seed=5), tmp_path / "a.txt")
        write_corpus(synth_corpus(words, 1.0, 200, seed=5), tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_one_sentence(self):
        assert len(synth_corpus(["x", "y"], 1.0, 1, seed=0)) == 1

    def test_rejects_zero_sentences(self):
        with pytest.raises(ValueError):
            synth_corpus(["x"], 1.0, 0, seed=0)

    def test_exponent_zero_is_uniform(self):
        words = synth_words(20, seed=0)
        counts = count_unigrams(synth_corpus(words, 0.0, 5000, seed=1))
        observed = np.array([counts[w] for w in words])
        assert sps.chisquare(observed).pvalue > 0.01

    def test_follows_zipf(self):
        words = synth_words(50, seed=0)
        counts = count_unigrams(synth_corpus(words, 1.2, 20000, seed=3))
        observed = np.array([counts[w] for w in words])
        expected = zipf_weights(50, 1.2) * observed.sum()
        assert sps.chisquare(observed, expected).pvalue > 0.01
