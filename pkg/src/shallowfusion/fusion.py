"""Shallow-fusion beam search with a coverage reward and an EOS-delta gate.

A hypothesis is scored in the log domain as

    am_logprob + alpha * lm_logprob + beta * coverage

where ``coverage`` counts source frames whose accumulated attention mass
exceeds ``tau``.  An EOS extension only completes a hypothesis when its
score ranks within the top ``beam_size`` candidates of its step and is
within ``max_eos_logprob_delta`` of the best score seen at that step (all
candidates and completed hypotheses); otherwise it is dropped.  The active
beam is always the top ``beam_size`` non-EOS candidates.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .eval.metrics import evaluate_pairs, is_truncated
from .validation import check_feature_list, check_features


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.0
    beta: float = 0.0
    tau: float = 0.5
    beam_size: int = 4
    max_eos_logprob_delta: float = math.inf
    max_steps: int | None = None  # None: 2 * frames + 10

    def __post_init__(self):
        if not isinstance(self.beam_size, (int, np.integer)) or self.beam_size < 1:
            raise ValueError(f"beam_size must be an int >= 1, got {self.beam_size!r}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not self.max_eos_logprob_delta >= 0:
            raise ValueError(f"max_eos_logprob_delta must be >= 0, got {self.max_eos_logprob_delta}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    def steps_for(self, n_frames: int) -> int:
        return self.max_steps if self.max_steps is not None else 2 * n_frames + 10

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "tau": self.tau, "beam_size": self.beam_size,
                "max_eos_logprob_delta": self.max_eos_logprob_delta, "max_steps": self.max_steps}


@dataclass
class Hypothesis:
    tokens: tuple             # emitted ids after SOS; ends with EOS when complete and not forced
    am_logprob: float
    lm_logprob: float
    coverage: int
    attention: np.ndarray = field(repr=False)  # accumulated mass per source frame
    complete: bool = False
    forced: bool = False
    fused: float = 0.0

    def text(self, vocab) -> str:
        return vocab.decode(self.tokens)


def coverage(masses, tau: float) -> int:
    """Number of frames whose accumulated attention mass exceeds ``tau``."""
    return int((np.asarray(masses) > tau).sum())


def fused_score(h: Hypothesis, cfg: FusionConfig) -> float:
    if cfg.alpha == 0 and cfg.beta == 0:
        return h.am_logprob
    return h.am_logprob + cfg.alpha * h.lm_logprob + cfg.beta * h.coverage


def eos_admissible(candidate_score: float, best_current_score: float, delta: float) -> bool:
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return candidate_score >= best_current_score - delta


def renormalize(scores) -> np.ndarray:
    """exp(s_i) / sum_j exp(s_j), max-shifted."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("renormalize: no scores")
    top = s.max()
    if not np.isfinite(top):
        raise ValueError("renormalize: no finite score")
    e = np.exp(s - top)
    return e / e.sum()


@dataclass
class BeamResult:
    hypotheses: list[Hypothesis]
    posteriors: np.ndarray
    steps: int
    eos_rejections: int
    forced: bool
    truncated: bool | None = None

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]


def _rank(tokens: list[tuple]) -> np.ndarray:
    order = sorted(range(len(tokens)), key=lambda k: tokens[k])
    rank = np.empty(len(tokens), dtype=np.int64)
    rank[order] = np.arange(len(tokens))
    return rank


def beam_search(am, features, cfg: FusionConfig, lm=None, *, reference: str | None = None,
                n_best: int | None = None) -> BeamResult:
    """Decode one utterance; ``lm=None`` is a pure AM decode."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise SearchError(f"empty or malformed feature sequence, shape {feats.shape}")
    feats = check_features(feats, am.feature_dim_)
    vocab = am.vocab_
    if lm is not None and lm.vocab_ != vocab:
        raise SearchError("AM and LM vocabularies differ")
    eos, sos = vocab.eos_id, vocab.sos_id
    allowed = np.array([i for i in range(len(vocab)) if i != sos])
    eos_col = int(np.flatnonzero(allowed == eos)[0])
    alpha = cfg.alpha if lm is not None else 0.0
    beta = cfg.beta

    with ad.no_grad():
        enc = am.encode(feats)
        T = enc.n_frames
        max_steps = cfg.steps_for(T)
        tokens: list[tuple] = [()]
        am_lp = np.zeros(1)
        lm_lp = np.zeros(1)
        acc = np.zeros((1, T))
        last = np.array([sos])
        am_state = am.initial_state(enc, 1)
        lm_state = lm.initial_state(1) if lm is not None else None
        completed: list[Hypothesis] = []
        rejections = 0
        steps = 0
        for step in range(max_steps):
            steps = step + 1
            K = len(tokens)
            logp_am, attn, am_state = am.decode_step(am_state, last, np.full(K, step), enc)
            am_c = am_lp[:, None] + logp_am.values[:, allowed]
            if lm is not None:
                logp_lm, lm_state = lm.step(lm_state, last)
                lm_c = lm_lp[:, None] + logp_lm.values[:, allowed]
            else:
                lm_c = np.zeros_like(am_c)
            acc_new = acc + attn.values[:, :T]
            cov = (acc_new > cfg.tau).sum(axis=1)
            fused = am_c + alpha * lm_c + beta * cov[:, None] if (alpha or beta) else am_c
            best_current = fused.max()
            if completed:
                best_current = max(best_current, max(h.fused for h in completed))

            # rank every candidate; ties go to the lexicographically smaller sequence
            rank = _rank(tokens)
            kk, aa = np.meshgrid(np.arange(K), np.arange(len(allowed)), indexing="ij")
            order = np.lexsort((allowed[aa.ravel()], rank[kk.ravel()], -fused.ravel()))
            top = order[:cfg.beam_size]
            for idx in top[aa.ravel()[top] == eos_col]:
                k = int(kk.ravel()[idx])
                f = float(fused[k, eos_col])
                if eos_admissible(f, best_current, cfg.max_eos_logprob_delta):
                    completed.append(Hypothesis(tokens[k] + (eos,), float(am_c[k, eos_col]),
                                                float(lm_c[k, eos_col]), int(cov[k]), acc_new[k].copy(),
                                                complete=True, fused=f))
                else:
                    rejections += 1
            if len(completed) >= cfg.beam_size:
                break

            survivors = order[aa.ravel()[order] != eos_col][:cfg.beam_size]
            parents = kk.ravel()[survivors]
            cols = aa.ravel()[survivors]
            new_ids = allowed[cols]
            tokens = [tokens[p] + (int(t),) for p, t in zip(parents, new_ids)]
            am_lp = am_c[parents, cols]
            lm_lp = lm_c[parents, cols]
            acc = acc_new[parents]
            last = new_ids
            am_state = am.select_state(am_state, parents)
            if lm is not None:
                lm_state = lm.select_state(lm_state, parents)

            # no active hypothesis can ever produce an admissible EOS again
            if completed and alpha >= 0:
                bound = am_lp + alpha * lm_lp + max(beta, 0.0) * T
                floor = max(h.fused for h in completed) - cfg.max_eos_logprob_delta
                if bound.max() < floor:
                    break

        forced = False
        if not completed:
            cov_a = (acc > cfg.tau).sum(axis=1)
            scores = am_lp + alpha * lm_lp + beta * cov_a
            k = min(range(len(tokens)), key=lambda i: (-scores[i], tokens[i]))
            completed.append(Hypothesis(tokens[k], float(am_lp[k]), float(lm_lp[k]), int(cov_a[k]),
                                        acc[k].copy(), complete=True, forced=True, fused=float(scores[k])))
            forced = True

    completed.sort(key=lambda h: (-h.fused, h.tokens))
    kept = completed[:n_best or cfg.beam_size]
    truncated = None
    if reference is not None:
        truncated = is_truncated(len(kept[0].text(vocab).split()), len(reference.split()))
    return BeamResult(kept, renormalize([h.fused for h in kept]), steps, rejections, forced, truncated)


def _decode_one(args):
    am, lm, feats, cfg, n_best = args
    return beam_search(am, feats, cfg, lm, n_best=n_best)


def decode_batch(am, features_list, cfg: FusionConfig, lm=None, *, n_best: int | None = None,
                 workers: int = 1) -> list[BeamResult]:
    """Decode many utterances; output order and content do not depend on ``workers``."""
    jobs = [(am, lm, f, cfg, n_best) for f in features_list]
    if workers <= 1 or len(jobs) < 2:
        return [_decode_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_decode_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


class ShallowFusionDecoder(BaseEstimator):
    """Estimator wrapper: ``predict`` runs fused beam search per utterance."""

    def __init__(self, am=None, lm=None, alpha: float = 0.0, beta: float = 0.0, tau: float = 0.5,
                 beam_size: int = 4, max_eos_logprob_delta: float = math.inf,
                 max_steps: int | None = None, n_best: int | None = None, workers: int = 1):
        self.am = am
        self.lm = lm
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.beam_size = beam_size
        self.max_eos_logprob_delta = max_eos_logprob_delta
        self.max_steps = max_steps
        self.n_best = n_best
        self.workers = workers

    @property
    def config(self) -> FusionConfig:
        return FusionConfig(self.alpha, self.beta, self.tau, self.beam_size,
                            self.max_eos_logprob_delta, self.max_steps)

    def fit(self, X=None, y=None):
        """Validate the configuration; the models are trained separately."""
        if self.am is None:
            raise ValueError("ShallowFusionDecoder needs an acoustic model")
        self.am._check_fitted()
        self.config_ = self.config
        return self

    def decode(self, X) -> list[BeamResult]:
        if not hasattr(self, "config_"):
            self.fit()
        feats = check_feature_list(X, self.am.feature_dim_)
        return decode_batch(self.am, feats, self.config_, self.lm, n_best=self.n_best,
                            workers=self.workers)

    def predict(self, X) -> list[str]:
        return [r.best.text(self.am.vocab_) for r in self.decode(X)]

    def score(self, X, y) -> float:
        """Negative corpus WER."""
        return -evaluate_pairs(self.predict(X), list(y)).wer
