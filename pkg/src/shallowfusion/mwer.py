"""Cross-entropy pretraining and MWER fine-tuning, optionally with fusion in the loop.

The MWER loss over a beam of hypotheses with scores ``s_i`` is

    L = sum_i P_i * W_i,    P = softmax(s)

where ``W_i`` is the word-edit count of hypothesis ``i`` against the
reference, minus the beam mean in relative mode.  Its gradient with respect
to the scores is ``P_i * (W_i - sum_j P_j W_j)``.  In fused mode the scores
are fused scores from a shallow-fusion beam, and only the acoustic-model
term carries gradient.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, clone

from . import autodiff as ad
from .eval.metrics import edit_distance_words
from .fusion import FusionConfig, Hypothesis, beam_search, renormalize
from .models.base import TrainingDivergedError
from .models.optim import SGD, clip_by_global_norm
from .validation import check_feature_list, check_sentences

logger = logging.getLogger(__name__)

__all__ = ["BeamLoss", "MwerConfig", "MWERFineTuner", "ce_pretrain", "mwer_finetune", "mwer_loss",
           "renormalize"]


@dataclass(frozen=True)
class MwerConfig:
    mode: str = "fused"
    fusion: FusionConfig = field(default_factory=lambda: FusionConfig(beam_size=4))
    relative: bool = True
    learning_rate: float = 0.01
    steps: int = 100
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("am_only", "fused"):
            raise ValueError(f"mode must be 'am_only' or 'fused', got {self.mode!r}")
        if self.fusion.beam_size < 2:
            raise ValueError("MWER needs beam_size >= 2; a one-hypothesis expectation is degenerate")

    @property
    def search_config(self) -> FusionConfig:
        """The beam-search settings actually used during training."""
        if self.mode == "am_only":
            return replace(self.fusion, alpha=0.0, beta=0.0)
        return self.fusion


@dataclass
class BeamLoss:
    posterior: np.ndarray
    errors: np.ndarray        # normalized error statistic per hypothesis
    edits: np.ndarray         # raw word edits per hypothesis
    loss: float
    score_grad: np.ndarray    # dL/ds_i


def normalized_errors(edits, relative: bool = True) -> np.ndarray:
    e = np.asarray(edits, dtype=np.float64)
    return e - e.mean() if relative else e


def mwer_loss(scores, edits, relative: bool = True) -> BeamLoss:
    """Expected (normalized) word errors over a renormalized beam, with its score gradient."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("mwer_loss: empty beam")
    p = renormalize(scores)
    w = normalized_errors(edits, relative)
    loss = float(p @ w)
    return BeamLoss(p, w, np.asarray(edits, dtype=np.float64), loss, p * (w - loss))


def beam_edits(hyps: list[Hypothesis], reference: str, vocab) -> np.ndarray:
    return np.array([edit_distance_words(h.text(vocab), reference).total for h in hyps], dtype=np.float64)


def mwer_loss_graph(am_scores: ad.Tensor, fixed_scores: np.ndarray, errors: np.ndarray) -> ad.Tensor:
    """Graph version of the loss: gradient flows through ``am_scores`` only.

    ``fixed_scores`` carries the stop-gradiented LM and coverage terms.
    """
    s = ad.add(am_scores, ad.constant(fixed_scores))
    return ad.sum(ad.mul(ad.softmax(s), ad.constant(errors)))


def ce_pretrain(model, X, y=None):
    """Cross-entropy training; returns ``(model, loss_curve)``."""
    model = model.fit(X) if y is None else model.fit(X, y)
    return model, list(model.loss_curve_)


def _copy_am(am):
    new = clone(am)
    new.vocab_ = am.vocab_
    new.feature_dim_ = am.feature_dim_
    new.featurizer_config_ = getattr(am, "featurizer_config_", None)
    new.set_weights(am.get_weights())
    return new


def mwer_finetune(am, X, y, config: MwerConfig, lm=None):
    """Fine-tune a copy of ``am``; returns ``(am, log)``.

    ``log`` has one dict per step with keys ``step, loss, beam_wer``.  The LM is
    read only and never updated.
    """
    feats = check_feature_list(X, am.feature_dim_)
    refs = check_sentences(y, allow_empty=True)
    if len(feats) != len(refs):
        raise ValueError(f"{len(feats)} feature sequences but {len(refs)} references")
    if config.mode == "fused" and lm is None:
        raise ValueError("fused MWER needs a language model")
    search_lm = lm if config.mode == "fused" else None
    cfg = config.search_config
    am = _copy_am(am)
    params = am.param_list
    opt = SGD(params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    vocab = am.vocab_
    order = np.concatenate([rng.permutation(len(feats)) for _ in range(config.steps // len(feats) + 1)])
    log = []
    degenerate = 0
    for step in range(config.steps):
        i = int(order[step])
        beam = beam_search(am, feats[i], cfg, search_lm, n_best=cfg.beam_size)
        hyps = beam.hypotheses
        if len({h.tokens for h in hyps}) < 2:
            degenerate += 1
        edits = beam_edits(hyps, refs[i], vocab)
        errors = normalized_errors(edits, config.relative)
        fixed = np.array([h.fused - h.am_logprob for h in hyps])
        try:
            enc = am.encode(feats[i])
            am_scores = am.sequence_logprobs(enc, [[vocab.sos_id, *h.tokens] for h in hyps])
            loss = mwer_loss_graph(am_scores, fixed, errors)
            grads = ad.backward(loss, wrt=params)
        except ad.NumericError as exc:
            raise TrainingDivergedError(f"MWER step {step}: {exc}") from exc
        opt.step(clip_by_global_norm(grads, config.clip_norm))
        n_ref = max(len(refs[i].split()), 1)
        log.append({"step": step, "loss": loss.item(), "beam_wer": edits[0] / n_ref})
    if config.steps and degenerate > 0.9 * config.steps:
        warnings.warn(f"MWER beam had fewer than 2 distinct hypotheses on {degenerate}/{config.steps} "
                      "steps; the expected-error estimate is degenerate", RuntimeWarning, stacklevel=2)
    return am, log


class MWERFineTuner(BaseEstimator):
    """Estimator wrapper around :func:`mwer_finetune`; ``am_`` holds the result."""

    def __init__(self, am=None, lm=None, mode: str = "fused", alpha: float = 0.0, beta: float = 0.0,
                 tau: float = 0.5, beam_size: int = 4, max_eos_logprob_delta: float = np.inf,
                 max_steps: int | None = None, relative: bool = True, learning_rate: float = 0.01,
                 steps: int = 100, clip_norm: float | None = None, seed: int = 0):
        self.am = am
        self.lm = lm
        self.mode = mode
        self.alpha = alpha
        self.beta = beta
        self.tau = tau
        self.beam_size = beam_size
        self.max_eos_logprob_delta = max_eos_logprob_delta
        self.max_steps = max_steps
        self.relative = relative
        self.learning_rate = learning_rate
        self.steps = steps
        self.clip_norm = clip_norm
        self.seed = seed

    @property
    def config(self) -> MwerConfig:
        fusion = FusionConfig(self.alpha, self.beta, self.tau, self.beam_size,
                              self.max_eos_logprob_delta, self.max_steps)
        return MwerConfig(self.mode, fusion, self.relative, self.learning_rate, self.steps,
                          self.clip_norm, self.seed)

    def fit(self, X, y):
        self.am_, self.log_ = mwer_finetune(self.am, X, y, self.config, lm=self.lm)
        return self

    def predict(self, X) -> list[str]:
        return self.am_.predict(X)
