"""Character vocabulary, corpus I/O and unigram statistics."""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

SOS = "<s>"
EOS = "</s>"
SPACE = "<space>"


class VocabError(ValueError):
    pass


class CorpusError(ValueError):
    pass


class CharVocab:
    """Dense char -> id map with reserved SOS=0, EOS=1, SPACE=2."""

    sos_id = 0
    eos_id = 1
    space_id = 2

    def __init__(self, chars: Iterable[str]):
        chars = sorted(set(chars) - {" "})
        for ch in chars:
            if len(ch) != 1:
                raise VocabError(f"vocab symbols must be single characters, got {ch!r}")
        self.symbols = [SOS, EOS, SPACE] + chars
        self._index = {ch: i for i, ch in enumerate(self.symbols)}
        self._index[" "] = self.space_id
        del self._index[SPACE]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "CharVocab":
        chars = set()
        for t in texts:
            chars.update(t)
        return cls(chars)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, CharVocab) and self.symbols == other.symbols

    def __hash__(self) -> int:
        return hash(tuple(self.symbols))

    def __repr__(self) -> str:
        return f"CharVocab({''.join(self.symbols[3:])!r})"

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def id_of(self, ch: str) -> int:
        return self._index[ch]

    def char_of(self, i: int) -> str:
        if i == self.space_id:
            return " "
        return self.symbols[i]

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.symbols).encode("utf-8")).hexdigest()[:16]

    def encode(self, text: str) -> list[int]:
        return encode(text, self)

    def decode(self, ids: Sequence[int]) -> str:
        return decode(ids, self)

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.symbols), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CharVocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[:3] != [SOS, EOS, SPACE]:
            raise VocabError(f"{path}: first three symbols must be {SOS}, {EOS}, {SPACE}")
        vocab = cls(lines[3:])
        if vocab.symbols != lines:
            raise VocabError(f"{path}: symbols must be unique and sorted after the reserved ids")
        return vocab


def encode(text: str, vocab: CharVocab) -> list[int]:
    ids = [vocab.sos_id]
    for pos, ch in enumerate(text):
        if ch not in vocab:
            raise VocabError(f"character {ch!r} at position {pos} is not in the vocabulary")
        ids.append(vocab.id_of(ch))
    ids.append(vocab.eos_id)
    return ids


def decode(ids: Sequence[int], vocab: CharVocab) -> str:
    return "".join(vocab.char_of(int(i)) for i in ids if i not in (vocab.sos_id, vocab.eos_id))


def normalize(line: str) -> str:
    """Lowercase and collapse whitespace."""
    return " ".join(line.lower().split())


def words(line: str) -> list[str]:
    return normalize(line).split()


# ---------------------------------------------------------------------------
# corpus I/O


def iter_lines(path) -> Iterator[str]:
    """Normalized non-blank lines of a UTF-8 corpus file."""
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusError(f"{path}: invalid UTF-8 on line {lineno}: {exc.reason}") from None
            line = normalize(text)
            if line:
                yield line


def read_corpus(path) -> list[str]:
    return list(iter_lines(path))


def write_corpus(lines: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# unigram statistics


@dataclass
class CorpusStats:
    counts: Counter = field(default_factory=Counter)
    n_sentences: int = 0

    @property
    def n_words(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, word: str) -> int:
        return self.counts.get(word, 0)

    def __len__(self) -> int:
        return len(self.counts)

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(self.counts + other.counts, self.n_sentences + other.n_sentences)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for w in sorted(self.counts):
                fh.write(f"{w}\t{self.counts[w]}\n")

    @classmethod
    def load(cls, path) -> "CorpusStats":
        counts = Counter()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    w, c = line.split("\t")
                    counts[w] = int(c)
                except ValueError:
                    raise CorpusError(f"{path}:{lineno}: expected 'word<TAB>count'") from None
                if counts[w] < 1:
                    raise CorpusError(f"{path}:{lineno}: count must be >= 1")
        # sentence totals are not part of the TSV format
        return cls(counts, 0)


def count_unigrams(lines: Iterable[str]) -> CorpusStats:
    counts = Counter()
    n = 0
    for line in lines:
        ws = words(line)
        if not ws:
            continue
        counts.update(ws)
        n += 1
    return CorpusStats(counts, n)


def _shards(seq: Sequence, k: int) -> list[Sequence]:
    size = -(-len(seq) // k) if seq else 0
    return [seq[i:i + size] for i in range(0, len(seq), size)] if size else []


def count_unigrams_parallel(lines: Sequence[str], workers: int = 1) -> CorpusStats:
    """Shard by line ranges, count each shard, merge."""
    if workers <= 1 or len(lines) < 2:
        return count_unigrams(lines)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(count_unigrams, _shards(lines, workers)))
    total = CorpusStats()
    for p in parts:
        total = total.merge(p)
    return total


def count_unigrams_file(path, workers: int = 1) -> CorpusStats:
    return count_unigrams_parallel(read_corpus(path), workers)


# ---------------------------------------------------------------------------
# synthetic data


def synth_words(n_words: int, alphabet: str = "abcdefghiklmnoprstu", min_len: int = 3,
                max_len: int = 8, seed: int = 0) -> list[str]:
    """Distinct random lowercase word types."""
    rng = np.random.default_rng(seed)
    letters = list(alphabet)
    out: list[str] = []
    seen = set()
    while len(out) < n_words:
        n = int(rng.integers(min_len, max_len + 1))
        w = "".join(rng.choice(letters, size=n))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** (-exponent)
    return w / w.sum()


def synth_corpus(vocab_words: Sequence[str], zipf_exponent: float, n_sentences: int, seed: int,
                 min_words: int = 1, max_words: int = 4) -> list[str]:
    """Sentences of i.i.d. Zipf-distributed words (rank = list position)."""
    if n_sentences < 1:
        raise ValueError("n_sentences must be >= 1")
    rng = np.random.default_rng(seed)
    p = zipf_weights(len(vocab_words), zipf_exponent)
    lengths = rng.integers(min_words, max_words + 1, size=n_sentences)
    picks = rng.choice(len(vocab_words), size=int(lengths.sum()), p=p)
    out = []
    pos = 0
    for n in lengths:
        out.append(" ".join(vocab_words[i] for i in picks[pos:pos + n]))
        pos += n
    return out
