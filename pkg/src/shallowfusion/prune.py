"""Large-corpus pruning: vocabulary filter, log(n) dedup, rare-word filter, sampling.

Stages run in the order ``1 -> 2 -> 2* -> 3``:

1. drop every sentence containing a word outside the vocabulary (treated as
   a misspelling);
2. keep at most ``max(1, floor(log n))`` copies of a sentence that occurs
   ``n`` times, the first ones in stream order;
2*. (optional) keep only sentences with at least one word the acoustic-model
   data has seen fewer than ``rare_threshold`` times;
3. sample uniformly without replacement down to a target size.

Every stage that needs global information is two-pass (count, then emit), so
the output never depends on the number of workers.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .text import CorpusStats, _shards, iter_lines, normalize
from .validation import check_sentences

logger = logging.getLogger(__name__)

LOG_BASES: dict[str, Callable[[float], float]] = {"ln": math.log, "log2": math.log2, "log10": math.log10}
STAGES = ("1", "2", "2*", "3")

# Corpus sizes (examples) after each stage of the production pipeline this
# tool is modeled on; kept for the report, never asserted at desk scale.
REFERENCE_LEDGER = {"input": 230e9, "after_vocab_filter": 218e9, "after_dedup": 25e9,
                    "after_sampling": 4.5e9}


class PruneError(RuntimeError):
    """A pruning stage failed; the message starts with the stage name."""


def load_vocabulary(path) -> frozenset[str]:
    """One word per line; blank lines ignored."""
    p = Path(path)
    if not p.is_file():
        raise PruneError(f"vocabulary file not found: {p}")
    return frozenset(w for line in iter_lines(p) for w in line.split())


def load_am_stats(path) -> CorpusStats:
    p = Path(path)
    if not p.is_file():
        raise PruneError(f"AM stats file not found: {p}")
    return CorpusStats.load(p)


def keep_count(n: int, log_base: str = "ln") -> int:
    """Number of copies kept for a sentence seen ``n`` times: max(1, floor(log n))."""
    if n < 1:
        raise ValueError(f"occurrence count must be >= 1, got {n}")
    try:
        log = LOG_BASES[log_base]
    except KeyError:
        raise ValueError(f"log_base must be one of {sorted(LOG_BASES)}, got {log_base!r}") from None
    return max(1, math.floor(log(n)))


# ---------------------------------------------------------------------------
# order-preserving sharded filtering


def _in_vocab(line: str, vocabulary: frozenset) -> bool:
    return all(w in vocabulary for w in line.split())


def _has_rare(line: str, counts: dict, threshold: int) -> bool:
    return any(counts.get(w, 0) < threshold for w in line.split())


def _mask_shard(shard, pred):
    return [pred(line) for line in shard]


def _parallel_mask(lines: Sequence[str], pred, workers: int) -> list[bool]:
    if workers <= 1 or len(lines) < 2:
        return [pred(line) for line in lines]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = ex.map(partial(_mask_shard, pred=pred), _shards(lines, workers))
        return [m for part in parts for m in part]


def _count_shard(shard) -> Counter:
    return Counter(shard)


def _count_lines(lines: Sequence[str], workers: int) -> Counter:
    if workers <= 1 or len(lines) < 2:
        return Counter(lines)
    total = Counter()
    with ProcessPoolExecutor(max_workers=workers) as ex:
        for part in ex.map(_count_shard, _shards(lines, workers)):
            total.update(part)
    return total


# ---------------------------------------------------------------------------
# stage functions


def vocab_filter(lines: Sequence[str], vocabulary, workers: int = 1) -> tuple[list[str], int]:
    """Stage 1; returns (kept sentences, number dropped)."""
    vocabulary = frozenset(vocabulary)
    lines = [normalize(s) for s in lines]
    mask = _parallel_mask(lines, partial(_in_vocab, vocabulary=vocabulary), workers)
    kept = [s for s, m in zip(lines, mask) if m]
    return kept, len(lines) - len(kept)


def logn_dedup(lines: Sequence[str], log_base: str = "ln", workers: int = 1) -> list[str]:
    """Stage 2: count pass over the whole stream, then an order-preserving emit pass."""
    lines = [normalize(s) for s in lines]
    totals = _count_lines(lines, workers)
    budget = {s: keep_count(n, log_base) for s, n in totals.items()}
    out = []
    for s in lines:
        if budget[s] > 0:
            budget[s] -= 1
            out.append(s)
    return out


def rare_word_filter(lines: Sequence[str], am_stats: CorpusStats, threshold: int = 5,
                     workers: int = 1) -> list[str]:
    """Stage 2*: keep sentences with a word whose AM count is below ``threshold``.

    Words missing from ``am_stats`` count as 0, so they are always rare.
    """
    if threshold < 1:
        raise ValueError(f"rare threshold must be >= 1, got {threshold}")
    counts = dict(am_stats.counts)
    lines = [normalize(s) for s in lines]
    mask = _parallel_mask(lines, partial(_has_rare, counts=counts, threshold=threshold), workers)
    return [s for s, m in zip(lines, mask) if m]


def sample_to_target(lines: Sequence[str], target: int, seed: int) -> list[str]:
    """Stage 3: ``min(target, len(lines))`` sentences, uniformly, in their original order."""
    if target < 0:
        raise ValueError(f"target must be >= 0, got {target}")
    lines = list(lines)
    if target >= len(lines):
        return lines
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(lines), size=target, replace=False))
    return [lines[i] for i in keep]


# ---------------------------------------------------------------------------
# estimator wrappers


class VocabularyFilter(TransformerMixin, BaseEstimator):
    def __init__(self, vocabulary=None, workers: int = 1):
        self.vocabulary = vocabulary
        self.workers = workers

    def fit(self, X=None, y=None):
        if self.vocabulary is None:
            raise ValueError("VocabularyFilter needs a vocabulary")
        self.vocabulary_ = (load_vocabulary(self.vocabulary) if isinstance(self.vocabulary, (str, Path))
                            else frozenset(self.vocabulary))
        return self

    def transform(self, X) -> list[str]:
        kept, self.n_dropped_ = vocab_filter(check_sentences(X, allow_empty=True), self.vocabulary_,
                                             self.workers)
        return kept


class LogNDeduplicator(TransformerMixin, BaseEstimator):
    """Counts are taken over the corpus being transformed; ``fit`` only validates."""

    def __init__(self, log_base: str = "ln", workers: int = 1):
        self.log_base = log_base
        self.workers = workers

    def fit(self, X=None, y=None):
        keep_count(1, self.log_base)
        return self

    def transform(self, X) -> list[str]:
        return logn_dedup(check_sentences(X, allow_empty=True), self.log_base, self.workers)


class RareWordFilter(TransformerMixin, BaseEstimator):
    def __init__(self, am_stats=None, threshold: int = 5, workers: int = 1):
        self.am_stats = am_stats
        self.threshold = threshold
        self.workers = workers

    def fit(self, X=None, y=None):
        if self.am_stats is None:
            raise ValueError("RareWordFilter needs AM-side unigram stats")
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        self.am_stats_ = (load_am_stats(self.am_stats) if isinstance(self.am_stats, (str, Path))
                          else self.am_stats)
        return self

    def transform(self, X) -> list[str]:
        return rare_word_filter(check_sentences(X, allow_empty=True), self.am_stats_, self.threshold,
                                self.workers)


class TargetSampler(TransformerMixin, BaseEstimator):
    def __init__(self, target: int | None = None, seed: int = 0):
        self.target = target
        self.seed = seed

    def fit(self, X=None, y=None):
        if self.target is None:
            raise ValueError("TargetSampler needs a target size")
        return self

    def transform(self, X) -> list[str]:
        return sample_to_target(check_sentences(X, allow_empty=True), self.target, self.seed)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PruneConfig:
    vocab_path: str | None = None
    rare_filter: bool = False
    rare_threshold: int = 5
    am_stats_path: str | None = None
    target: int | None = None
    seed: int = 0
    log_base: str = "ln"
    # the rare-word filter is normally how the target size is reached
    sample_after_rare_filter: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.log_base not in LOG_BASES:
            raise ValueError(f"log_base must be one of {sorted(LOG_BASES)}, got {self.log_base!r}")
        if self.rare_filter and self.rare_threshold < 1:
            raise ValueError("rare_threshold must be >= 1 when the rare-word filter is on")
        if self.target is not None and self.target < 0:
            raise ValueError("target must be >= 0")

    def stages(self) -> list[str]:
        out = ["1"] if self.vocab_path else []
        out.append("2")
        if self.rare_filter:
            out.append("2*")
        if self.target is not None and (not self.rare_filter or self.sample_after_rare_filter):
            out.append("3")
        return out


@dataclass
class StageRecord:
    stage: str
    n_in: int
    n_out: int
    seconds: float


@dataclass
class PruneReport:
    seed: int
    stages: list[StageRecord] = field(default_factory=list)
    reference_ledger: dict = field(default_factory=lambda: dict(REFERENCE_LEDGER))

    def counts(self) -> list[int]:
        if not self.stages:
            return []
        return [self.stages[0].n_in] + [s.n_out for s in self.stages]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stages": [asdict(s) for s in self.stages],
                "reference_ledger": self.reference_ledger}


def run_stage(stage: str, lines: list[str], config: PruneConfig, *, vocabulary=None,
              am_stats: CorpusStats | None = None) -> list[str]:
    if stage == "1":
        if vocabulary is None:
            vocabulary = load_vocabulary(config.vocab_path)
        return vocab_filter(lines, vocabulary, config.workers)[0]
    if stage == "2":
        return logn_dedup(lines, config.log_base, config.workers)
    if stage == "2*":
        if am_stats is None:
            if config.am_stats_path is None:
                raise PruneError("AM stats are required by the rare-word filter")
            am_stats = load_am_stats(config.am_stats_path)
        return rare_word_filter(lines, am_stats, config.rare_threshold, config.workers)
    if stage == "3":
        if config.target is None:
            raise PruneError("sampling needs a target size")
        return sample_to_target(lines, config.target, config.seed)
    raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")


def prune_pipeline(lines: Sequence[str], config: PruneConfig, *, stages: Sequence[str] | None = None,
                   vocabulary=None, am_stats: CorpusStats | None = None) -> tuple[list[str], PruneReport]:
    """Run the configured stages in order; returns (pruned corpus, report)."""
    current = [s for s in (normalize(x) for x in lines) if s]
    report = PruneReport(seed=config.seed)
    for stage in (stages if stages is not None else config.stages()):
        t0 = time.perf_counter()
        n_in = len(current)
        try:
            current = run_stage(stage, current, config, vocabulary=vocabulary, am_stats=am_stats)
        except PruneError as exc:
            raise PruneError(f"stage {stage}: {exc}") from exc
        except (OSError, ValueError) as exc:
            raise PruneError(f"stage {stage}: {exc}") from exc
        report.stages.append(StageRecord(stage, n_in, len(current), time.perf_counter() - t0))
        logger.info("stage %s: %d -> %d sentences", stage, n_in, len(current))
    return current, report
