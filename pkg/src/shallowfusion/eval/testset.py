"""Test-set construction: LM-integration word lists, G2P surprise detection, eval sets."""

from __future__ import annotations

import itertools
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..text import CorpusError, CorpusStats, normalize

logger = logging.getLogger(__name__)

PREDICTION_CAP = 10**6
SELECTORS = ("lm_integration", "surprising_pron", "random")


class EvalSetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# G2P map and lexicon


def _parse_tab_file(path, what: str):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise CorpusError(f"{p}:{lineno}: expected '<key><TAB><phonemes>'")
            key, rhs = line.split("\t", 1)
            if not key:
                raise CorpusError(f"{p}:{lineno}: empty key")
            yield key, tuple(rhs.split())


class G2PMap:
    """Grapheme sequence -> set of alternative phoneme sequences."""

    def __init__(self, entries: dict[str, Sequence[Sequence[str]]] | None = None):
        self.entries: dict[str, frozenset[tuple[str, ...]]] = {}
        for key, alts in (entries or {}).items():
            if not key:
                raise ValueError("G2P grapheme keys must be non-empty")
            self.entries[key] = frozenset(tuple(a) for a in alts)

    @classmethod
    def load(cls, path) -> "G2PMap":
        """``grapheme<TAB>ph ph ...`` per line; repeated keys are merged."""
        merged: dict[str, set] = defaultdict(set)
        for key, phones in _parse_tab_file(path, "G2P map"):
            merged[key].add(phones)
        return cls(merged)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for key in sorted(self.entries):
                for alt in sorted(self.entries[key]):
                    fh.write(f"{key}\t{' '.join(alt)}\n")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n_correspondences(self) -> int:
        """Number of (grapheme sequence, pronunciation) pairs."""
        return sum(len(v) for v in self.entries.values())

    @property
    def max_key_len(self) -> int:
        return max((len(k) for k in self.entries), default=0)

    @property
    def phonemes(self) -> frozenset[str]:
        return frozenset(p for alts in self.entries.values() for a in alts for p in a)

    def with_entry(self, key: str, phones: Sequence[str]) -> "G2PMap":
        entries = {k: set(v) for k, v in self.entries.items()}
        entries.setdefault(key, set()).add(tuple(phones))
        return G2PMap(entries)


class Lexicon(dict):
    """word -> true phoneme sequence."""

    @classmethod
    def load(cls, path) -> "Lexicon":
        lex = cls()
        for word, phones in _parse_tab_file(path, "lexicon"):
            lex[normalize(word)] = phones
        return lex

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for w in sorted(self):
                fh.write(f"{w}\t{' '.join(self[w])}\n")

    def check_alphabet(self, g2p: G2PMap) -> None:
        alphabet = g2p.phonemes
        for w, phones in self.items():
            bad = [p for p in phones if p not in alphabet]
            if bad:
                raise EvalSetError(f"lexicon entry {w!r} uses phonemes outside the G2P map: {bad}")


def predicted_pronunciations(word: str, g2p: G2PMap, cap: int = PREDICTION_CAP) -> set[tuple] | None:
    """Every pronunciation over all segmentations of ``word`` into map keys.

    Returns None (with a warning) when the number of combinations would
    exceed ``cap``.
    """
    n = len(word)
    # segmentations of word[i:] as lists of keys, built right to left
    tails: list[list[tuple[str, ...]]] = [[] for _ in range(n + 1)]
    tails[n] = [()]
    for i in range(n - 1, -1, -1):
        for k in range(1, min(g2p.max_key_len, n - i) + 1):
            key = word[i:i + k]
            if key in g2p.entries:
                tails[i].extend((key,) + rest for rest in tails[i + k])
    total = sum(int(np.prod([len(g2p.entries[k]) for k in seg], dtype=object)) for seg in tails[0])
    if total > cap:
        warnings.warn(f"{word!r}: {total} predicted pronunciations exceed the cap {cap}; skipped",
                      RuntimeWarning, stacklevel=2)
        return None
    out: set[tuple] = set()
    for seg in tails[0]:
        for combo in itertools.product(*(sorted(g2p.entries[k]) for k in seg)):
            out.add(tuple(p for part in combo for p in part))
    return out


def pronunciation_predicted(graphemes: str, phones: Sequence[str], g2p: G2PMap) -> bool:
    """Whether some segmentation of ``graphemes`` can produce exactly ``phones``.

    Dynamic program over (grapheme prefix, phoneme prefix) pairs, equivalent to
    membership in :func:`predicted_pronunciations` without enumerating it.
    """
    phones = tuple(phones)
    n, m = len(graphemes), len(phones)
    reach = np.zeros((n + 1, m + 1), dtype=bool)
    reach[0, 0] = True
    for i in range(n):
        js = np.flatnonzero(reach[i])
        if js.size == 0:
            continue
        for k in range(1, min(g2p.max_key_len, n - i) + 1):
            alts = g2p.entries.get(graphemes[i:i + k])
            if not alts:
                continue
            for alt in alts:
                L = len(alt)
                for j in js:
                    if j + L <= m and phones[j:j + L] == alt:
                        reach[i + k, j + L] = True
    return bool(reach[n, m])


def surprising_pronunciation(word: str, lexicon: Lexicon, g2p: G2PMap) -> bool:
    """True iff the lexicon pronunciation is not among the map's predictions.

    A word with no segmentation into map keys has no predictions, so it is
    surprising.
    """
    if word not in lexicon:
        raise KeyError(f"word {word!r} is not in the lexicon")
    return not pronunciation_predicted(word, lexicon[word], g2p)


# ---------------------------------------------------------------------------
# word lists and eval sets


def build_lm_integration_wordlist(am_stats: CorpusStats, lm_stats: CorpusStats, am_max: int = 5,
                                  lm_min: int = 150) -> list[str]:
    """Words seen at most ``am_max`` times in AM data and at least ``lm_min`` times in LM data.

    Words absent from a side count 0 there.  Sorted alphabetically.
    """
    candidates = set(lm_stats.counts) if lm_min > 0 else set(lm_stats.counts) | set(am_stats.counts)
    return sorted(w for w in candidates if am_stats[w] <= am_max and lm_stats[w] >= lm_min)


@dataclass
class EvalSet:
    ids: list[str]
    transcripts: list[str]
    features: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.ids)

    def save(self, path) -> None:
        arrays = {"ids": np.array(self.ids, dtype=str), "transcripts": np.array(self.transcripts, dtype=str)}
        for i, f in enumerate(self.features):
            arrays[f"feat_{i:06d}"] = f
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "EvalSet":
        with np.load(path, allow_pickle=False) as z:
            ids = [str(s) for s in z["ids"]]
            transcripts = [str(s) for s in z["transcripts"]]
            feats = [z[f"feat_{i:06d}"] for i in range(len(ids))]
        return cls(ids, transcripts, feats)


def eligible_sentences(corpus: Sequence[str], selector: str, *, wordlist=None, lexicon: Lexicon | None = None,
                       g2p: G2PMap | None = None) -> list[int]:
    if selector not in SELECTORS:
        raise ValueError(f"selector must be one of {SELECTORS}, got {selector!r}")
    if selector == "random":
        return list(range(len(corpus)))
    if selector == "lm_integration":
        if wordlist is None:
            raise ValueError("the lm_integration selector needs a word list")
        wanted = set(wordlist)
        return [i for i, s in enumerate(corpus) if any(w in wanted for w in s.split())]
    if lexicon is None or g2p is None:
        raise ValueError("the surprising_pron selector needs a lexicon and a G2P map")
    cache: dict[str, bool] = {}

    def surprising(w):
        if w not in cache:
            cache[w] = w in lexicon and surprising_pronunciation(w, lexicon, g2p)
        return cache[w]

    return [i for i, s in enumerate(corpus) if any(surprising(w) for w in s.split())]


def build_eval_set(corpus: Sequence[str], selector: str, n: int, seed: int, featurizer, *,
                   wordlist=None, lexicon: Lexicon | None = None, g2p: G2PMap | None = None,
                   id_prefix: str = "utt") -> EvalSet:
    """``min(n, eligible)`` sentences chosen uniformly with ``seed``, kept in corpus order.

    ``featurizer`` is a fitted :class:`~shallowfusion.models.Featurizer`.
    """
    corpus = [normalize(s) for s in corpus]
    corpus = [s for s in corpus if s]
    pool = eligible_sentences(corpus, selector, wordlist=wordlist, lexicon=lexicon, g2p=g2p)
    if not pool:
        raise EvalSetError(f"no sentence is eligible under selector {selector!r}")
    rng = np.random.default_rng(seed)
    take = np.sort(rng.choice(len(pool), size=min(n, len(pool)), replace=False))
    chosen = [pool[i] for i in take]
    transcripts = [corpus[i] for i in chosen]
    ids = [f"{id_prefix}{i:06d}" for i in chosen]
    logger.info("eval set: %d of %d eligible sentences (%s)", len(chosen), len(pool), selector)
    return EvalSet(ids, transcripts, featurizer.transform(transcripts))
