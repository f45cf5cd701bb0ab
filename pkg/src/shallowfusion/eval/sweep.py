"""Decode-and-score helpers and the (beam size, EOS delta) sweep harness."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from ..fusion import FusionConfig, SearchError, decode_batch
from .metrics import EvalReport, evaluate_pairs

SWEEP_HEADER = ("beam", "delta", "wer", "trunc_wer", "trunc_frac")


class SweepError(RuntimeError):
    pass


def evaluate(am, features: Sequence, references: Sequence[str], cfg: FusionConfig, lm=None, *,
             ids: Sequence[str] | None = None, workers: int = 1) -> EvalReport:
    """Decode every utterance with ``cfg`` and score the best hypotheses."""
    results = decode_batch(am, features, cfg, lm, workers=workers)
    hyps = [r.best.text(am.vocab_) for r in results]
    return evaluate_pairs(hyps, list(references), ids)


@dataclass(frozen=True)
class SweepRow:
    beam: int
    delta: float
    wer: float
    trunc_wer: float
    trunc_frac: float

    def as_csv(self) -> list[str]:
        delta = "inf" if math.isinf(self.delta) else repr(float(self.delta))
        return [str(self.beam), delta, f"{self.wer:.6f}", f"{self.trunc_wer:.6f}", f"{self.trunc_frac:.6f}"]


def sweep(am, features: Sequence, references: Sequence[str], grid: Iterable[tuple[int, float]], *,
          lm=None, base: FusionConfig | None = None, workers: int = 1) -> list[SweepRow]:
    """One decode pass per (beam size, EOS delta) cell, in grid order.

    ``base`` carries the fixed alpha, beta and tau of the sweep.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    base = base or FusionConfig()
    rows = []
    for beam, delta in grid:
        try:
            cfg = replace(base, beam_size=int(beam), max_eos_logprob_delta=float(delta))
            rep = evaluate(am, features, references, cfg, lm, workers=workers)
        except (SearchError, ValueError) as exc:
            raise SweepError(f"cell (beam={beam}, delta={delta}): {exc}") from exc
        rows.append(SweepRow(int(beam), float(delta), rep.wer, rep.truncation_wer, rep.truncated_fraction))
    return rows


def wer_range(rows: Sequence[SweepRow]) -> float:
    """Max minus min WER across the grid."""
    wers = [r.wer for r in rows]
    return max(wers) - min(wers)


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow(r.as_csv())


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SWEEP_HEADER:
            raise ValueError(f"unexpected sweep header {header}")
        return [SweepRow(int(b), float(d), float(w), float(tw), float(tf)) for b, d, w, tw, tf in reader]
