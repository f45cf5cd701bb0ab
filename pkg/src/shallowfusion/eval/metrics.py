"""Word error rate, truncation partitioning and evaluation reports."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class EditCounts(NamedTuple):
    substitutions: int
    insertions: int
    deletions: int
    total: int


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    """Unit-cost Levenshtein distance between two token sequences."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def edit_distance_words(hyp, ref) -> EditCounts:
    """Minimal word edits turning ``hyp`` into ``ref``, split into S/I/D.

    Strings are whitespace-split.  An insertion is a hypothesis word with no
    reference counterpart; a deletion is a missed reference word.
    """
    h = hyp.split() if isinstance(hyp, str) else list(hyp)
    r = ref.split() if isinstance(ref, str) else list(ref)
    n, m = len(h), len(r)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (h[i - 1] != r[j - 1]))
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (h[i - 1] != r[j - 1]):
            s += h[i - 1] != r[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            ins += 1
            i -= 1
        else:
            dels += 1
            j -= 1
    return EditCounts(int(s), ins, dels, int(d[n, m]))


def is_truncated(hyp_words: int, ref_words: int) -> bool:
    """At most half as many words as the reference (inclusive)."""
    return 2 * hyp_words <= ref_words


def truncation_partition(pairs: Iterable[tuple[str, str]]):
    """Split (hyp, ref) pairs into (truncated, rest); empty references are dropped."""
    truncated, rest = [], []
    for hyp, ref in pairs:
        n_ref = len(ref.split())
        if n_ref == 0:
            logger.warning("skipping pair with empty reference (hyp=%r)", hyp)
            continue
        (truncated if is_truncated(len(hyp.split()), n_ref) else rest).append((hyp, ref))
    return truncated, rest


@dataclass
class UtteranceRecord:
    utterance_id: str
    hyp: str
    ref: str
    edits: int
    ref_words: int
    truncated: bool


@dataclass
class EvalReport:
    wer: float
    truncation_wer: float
    truncated_fraction: float
    total_edits: int
    total_ref_words: int
    truncated_edits: int
    truncated_ref_words: int
    records: list[UtteranceRecord] = field(default_factory=list)

    @property
    def truncation_contribution(self) -> float:
        """Share of overall WER coming from truncated utterances."""
        return self.truncated_edits / self.total_ref_words if self.total_ref_words else 0.0

    def to_dict(self, with_records: bool = True) -> dict:
        d = asdict(self)
        if not with_records:
            d.pop("records")
        return d


def evaluate_pairs(hyps: Sequence[str], refs: Sequence[str], ids: Sequence[str] | None = None) -> EvalReport:
    """Corpus-level WER (total edits / total reference words) plus truncation WER."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(refs))]
    records = []
    for uid, hyp, ref in zip(ids, hyps, refs):
        n_ref = len(ref.split())
        if n_ref == 0:
            logger.warning("utterance %s has an empty reference; excluded", uid)
            continue
        e = edit_distance_words(hyp, ref).total
        records.append(UtteranceRecord(uid, hyp, ref, e, n_ref, is_truncated(len(hyp.split()), n_ref)))
    tot_e = sum(r.edits for r in records)
    tot_n = sum(r.ref_words for r in records)
    tr_e = sum(r.edits for r in records if r.truncated)
    tr_n = sum(r.ref_words for r in records if r.truncated)
    n_tr = sum(r.truncated for r in records)
    return EvalReport(
        wer=tot_e / tot_n if tot_n else 0.0,
        truncation_wer=tr_e / tr_n if tr_n else 0.0,
        truncated_fraction=n_tr / len(records) if records else 0.0,
        total_edits=tot_e,
        total_ref_words=tot_n,
        truncated_edits=tr_e,
        truncated_ref_words=tr_n,
        records=records,
    )
