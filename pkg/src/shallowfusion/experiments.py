"""Toy worlds and runners for the trend experiments.

Two synthetic worlds are provided:

* the *truncation world*: sentences are a carrier word followed by object
  words, and the LM corpus is dominated by bare carriers, so the LM prefers
  to end a sentence right after its first word.  Fusing that LM with a loose
  EOS delta truncates many decodes.
* the *rare-word world*: a Zipfian corpus where most word types are seen
  only a handful of times by the acoustic model.  It compares an LM trained
  on a random pruning of the corpus with one trained on a rare-word-filtered
  pruning of the same size.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .config import sub_seed
from .eval.metrics import EvalReport
from .eval.sweep import SweepRow, evaluate, sweep, wer_range
from .eval.testset import build_eval_set, build_lm_integration_wordlist
from .fusion import FusionConfig
from .models import AttentionAcousticModel, CharLanguageModel, Featurizer
from .mwer import MwerConfig, mwer_finetune
from .prune import PruneConfig, prune_pipeline
from .text import CharVocab, count_unigrams, synth_corpus, synth_words

logger = logging.getLogger(__name__)

DEFAULT_GRID = [(b, d) for b in (2, 4, 8) for d in (0.05, 0.5, 10.0)]


def _from_dict(cls, doc: dict | None):
    doc = dict(doc or {})
    allowed = {f.name for f in fields(cls)}
    bad = set(doc) - allowed
    if bad:
        raise ValueError(f"unknown {cls.__name__} key(s): {sorted(bad)}")
    return cls(**doc)


# ---------------------------------------------------------------------------
# truncation world


@dataclass
class TruncationWorldConfig:
    alphabet: str = "abdegiklmnoprstu"
    n_carriers: int = 3
    n_objects: int = 200
    lm_sentences: int = 3000
    lm_p_carrier_alone: float = 0.7
    am_sentences: int = 200
    am_p_carrier_alone: float = 0.3
    eval_sentences: int = 60
    eval_objects: int = 2
    sigma: float = 1.0
    feature_dim: int = 16
    am_epochs: int = 2
    lm_epochs: int = 2
    alpha: float = 0.3
    grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    # the cell MWER is fine-tuned at (beam, delta)
    mwer_cell: tuple = (4, 10.0)
    mwer_learning_rate: float = 0.05
    mwer_steps: int = 200

    @classmethod
    def from_dict(cls, doc: dict | None) -> "TruncationWorldConfig":
        return _from_dict(cls, doc)


@dataclass
class ToyWorld:
    vocab: CharVocab
    lm_corpus: list[str]
    am_train: list[str]
    eval_refs: list[str]
    train_features: list[np.ndarray]
    eval_features: list[np.ndarray]


def truncation_world(seed: int, cfg: TruncationWorldConfig | None = None) -> ToyWorld:
    cfg = cfg or TruncationWorldConfig()
    rng = np.random.default_rng(sub_seed(seed, "corpus"))
    lexicon = synth_words(cfg.n_carriers + cfg.n_objects, alphabet=cfg.alphabet, min_len=4, max_len=7,
                          seed=sub_seed(seed, "words"))
    carriers, objects = lexicon[:cfg.n_carriers], lexicon[cfg.n_carriers:]

    def sentence(n_obj: int) -> str:
        head = carriers[rng.integers(len(carriers))]
        return " ".join([head] + [objects[i] for i in rng.integers(len(objects), size=n_obj)])

    def mixed(p_alone: float) -> str:
        return sentence(0) if rng.random() < p_alone else sentence(int(rng.integers(1, 3)))

    lm_corpus = [mixed(cfg.lm_p_carrier_alone) for _ in range(cfg.lm_sentences)]
    am_train = [mixed(cfg.am_p_carrier_alone) for _ in range(cfg.am_sentences)]
    eval_refs = [sentence(cfg.eval_objects) for _ in range(cfg.eval_sentences)]
    vocab = CharVocab(cfg.alphabet)
    table_seed = sub_seed(seed, "table")
    train_fz = Featurizer(vocab=vocab, dim=cfg.feature_dim, sigma=cfg.sigma, table_seed=table_seed,
                          noise_seed=sub_seed(seed, "noise"))
    eval_fz = Featurizer(vocab=vocab, dim=cfg.feature_dim, sigma=cfg.sigma, table_seed=table_seed,
                         noise_seed=sub_seed(seed, "eval-noise"))
    return ToyWorld(vocab, lm_corpus, am_train, eval_refs, train_fz.transform(am_train),
                    eval_fz.transform(eval_refs))


def train_world_models(world: ToyWorld, seed: int, am_epochs: int, lm_epochs: int):
    am = AttentionAcousticModel(vocab=world.vocab, epochs=am_epochs, seed=sub_seed(seed, "init-am"))
    am.fit(world.train_features, world.am_train)
    lm = CharLanguageModel(vocab=world.vocab, epochs=lm_epochs, batch_size=16,
                           seed=sub_seed(seed, "init-lm"))
    lm.fit(world.lm_corpus)
    return am, lm


@dataclass
class TruncationResult:
    seed: int
    baseline: EvalReport     # alpha 0, loose delta, beam 2
    loose: EvalReport        # fused, loose delta, beam 2
    tuned: EvalReport        # fused, delta 0.05, beam 8

    def summary(self) -> dict:
        pick = ("wer", "truncation_wer", "truncated_fraction", "truncation_contribution")
        return {name: {k: getattr(rep, k) for k in pick}
                for name, rep in (("baseline", self.baseline), ("loose", self.loose), ("tuned", self.tuned))}


@dataclass
class AdaptationResult:
    seed: int
    before: list[SweepRow]
    after: list[SweepRow]
    log: list[dict]

    @property
    def range_before(self) -> float:
        return wer_range(self.before)

    @property
    def range_after(self) -> float:
        return wer_range(self.after)


class TruncationExperiment:
    """Trains one truncation world per seed and runs the truncation and MWER trends on it."""

    def __init__(self, seed: int, cfg: TruncationWorldConfig | None = None):
        self.seed = seed
        self.cfg = cfg or TruncationWorldConfig()
        self._models = None
        self._before: dict | None = None

    @property
    def world(self) -> ToyWorld:
        if not hasattr(self, "_world"):
            self._world = truncation_world(self.seed, self.cfg)
        return self._world

    @property
    def models(self):
        if self._models is None:
            t0 = time.perf_counter()
            self._models = train_world_models(self.world, self.seed, self.cfg.am_epochs, self.cfg.lm_epochs)
            logger.info("seed %d: trained truncation-world models in %.1fs", self.seed,
                        time.perf_counter() - t0)
        return self._models

    def _eval(self, am, alpha: float, beam: int, delta: float) -> EvalReport:
        _, lm = self.models
        cfg = FusionConfig(alpha=alpha, beam_size=beam, max_eos_logprob_delta=delta)
        return evaluate(am, self.world.eval_features, self.world.eval_refs, cfg, lm)

    def grid(self, am) -> list[SweepRow]:
        _, lm = self.models
        return sweep(am, self.world.eval_features, self.world.eval_refs, self.cfg.grid, lm=lm,
                     base=FusionConfig(alpha=self.cfg.alpha))

    def run_truncation(self, loose_delta: float = 10.0) -> TruncationResult:
        am, _ = self.models
        return TruncationResult(
            self.seed,
            baseline=self._eval(am, 0.0, 2, loose_delta),
            loose=self._eval(am, self.cfg.alpha, 2, loose_delta),
            tuned=self._eval(am, self.cfg.alpha, 8, 0.05),
        )

    def run_adaptation(self) -> AdaptationResult:
        am, lm = self.models
        before = self.grid(am)
        beam, delta = self.cfg.mwer_cell
        mcfg = MwerConfig(mode="fused",
                          fusion=FusionConfig(alpha=self.cfg.alpha, beam_size=int(beam),
                                              max_eos_logprob_delta=float(delta)),
                          learning_rate=self.cfg.mwer_learning_rate, steps=self.cfg.mwer_steps,
                          seed=sub_seed(self.seed, "mwer"))
        tuned, log = mwer_finetune(am, self.world.train_features, self.world.am_train, mcfg, lm=lm)
        return AdaptationResult(self.seed, before, self.grid(tuned), log)


def truncation_criterion(res: TruncationResult) -> tuple[bool, str]:
    """Loose fused decoding at least doubles truncation; tightening brings its contribution back."""
    b, lo, tu = res.baseline, res.loose, res.tuned
    doubled = lo.truncated_fraction > 0 and lo.truncated_fraction >= 2 * b.truncated_fraction
    recovered = tu.truncation_contribution <= 1.2 * b.truncation_contribution
    msg = (f"seed {res.seed}: trunc_frac base={b.truncated_fraction:.3f} loose={lo.truncated_fraction:.3f}; "
           f"contribution base={b.truncation_contribution:.3f} tuned={tu.truncation_contribution:.3f}")
    return doubled and recovered, msg


# ---------------------------------------------------------------------------
# rare-word world


@dataclass
class RareWorldConfig:
    alphabet: str = "abdegiklmnoprstu"
    n_words: int = 600
    zipf_exponent: float = 1.4
    corpus_sentences: int = 30000
    misspell_rate: float = 0.02
    # log(n) dedup before sampling; off by default because at this scale it
    # leaves ~80% of sentences holding a rare word, which erases the contrast
    dedup: bool = False
    am_sentences: int = 400
    lm_budget: int = 1000
    eval_pool: int = 3000
    eval_sentences: int = 80
    rare_threshold: int = 5
    am_max: int = 5
    lm_min: int = 1
    sigma: float = 1.0
    feature_dim: int = 16
    am_epochs: int = 2
    lm_epochs: int = 3
    alpha: float = 0.5
    beam_size: int = 4
    max_eos_logprob_delta: float = 0.05

    @classmethod
    def from_dict(cls, doc: dict | None) -> "RareWorldConfig":
        return _from_dict(cls, doc)


def inject_misspellings(lines: list[str], rate: float, alphabet: str, seed: int) -> list[str]:
    """Replace one letter of a word with probability ``rate`` per word."""
    rng = np.random.default_rng(seed)
    out = []
    for line in lines:
        ws = line.split()
        for k, w in enumerate(ws):
            if rng.random() < rate:
                pos = int(rng.integers(len(w)))
                ws[k] = w[:pos] + alphabet[int(rng.integers(len(alphabet)))] + w[pos + 1:]
        out.append(" ".join(ws))
    return out


@dataclass
class RareWorld:
    vocab: CharVocab
    words: list[str]
    am_train: list[str]
    lm_random: list[str]
    lm_filtered: list[str]
    wordlist: list[str]
    eval_ids: list[str]
    eval_refs: list[str]
    eval_features: list[np.ndarray]
    reports: dict


def rare_world(seed: int, cfg: RareWorldConfig | None = None) -> RareWorld:
    cfg = cfg or RareWorldConfig()
    vocab = CharVocab(cfg.alphabet)
    words = synth_words(cfg.n_words, alphabet=cfg.alphabet, min_len=3, max_len=7, seed=sub_seed(seed, "words"))
    raw = synth_corpus(words, cfg.zipf_exponent, cfg.corpus_sentences, seed=sub_seed(seed, "corpus"),
                       min_words=1, max_words=3)
    raw = inject_misspellings(raw, cfg.misspell_rate, cfg.alphabet, sub_seed(seed, "typos"))
    am_train = synth_corpus(words, cfg.zipf_exponent, cfg.am_sentences, seed=sub_seed(seed, "am-corpus"),
                            min_words=1, max_words=3)
    am_stats = count_unigrams(am_train)

    base = PruneConfig(vocab_path=None, seed=sub_seed(seed, "sampling"))
    cleaned, rep_clean = prune_pipeline(raw, base, stages=["1", "2"] if cfg.dedup else ["1"],
                                        vocabulary=words)
    lm_stats = count_unigrams(cleaned)
    sampled = PruneConfig(target=cfg.lm_budget, seed=sub_seed(seed, "sampling"))
    lm_random, rep_random = prune_pipeline(cleaned, sampled, stages=["3"])
    filtered = PruneConfig(rare_filter=True, rare_threshold=cfg.rare_threshold, target=cfg.lm_budget,
                           sample_after_rare_filter=True, seed=sub_seed(seed, "sampling"))
    lm_filtered, rep_filtered = prune_pipeline(cleaned, filtered, stages=filtered.stages(), am_stats=am_stats)

    wordlist = build_lm_integration_wordlist(am_stats, lm_stats, cfg.am_max, cfg.lm_min)
    pool = synth_corpus(words, cfg.zipf_exponent, cfg.eval_pool, seed=sub_seed(seed, "eval-corpus"),
                        min_words=1, max_words=3)
    fz = Featurizer(vocab=vocab, dim=cfg.feature_dim, sigma=cfg.sigma, table_seed=sub_seed(seed, "table"),
                    noise_seed=sub_seed(seed, "eval-noise"))
    evalset = build_eval_set(pool, "lm_integration", cfg.eval_sentences, sub_seed(seed, "eval-sampling"),
                             fz, wordlist=wordlist)
    reports = {"clean": rep_clean.to_dict(), "random": rep_random.to_dict(),
               "filtered": rep_filtered.to_dict()}
    return RareWorld(vocab, words, am_train, lm_random, lm_filtered, wordlist, evalset.ids,
                     evalset.transcripts, evalset.features, reports)


@dataclass
class RareFilterResult:
    seed: int
    wer_random: float
    wer_filtered: float
    ppl_random: float
    ppl_filtered: float
    n_eval: int

    def to_dict(self) -> dict:
        return asdict(self)


def run_rare_filter(seed: int, cfg: RareWorldConfig | None = None) -> RareFilterResult:
    cfg = cfg or RareWorldConfig()
    world = rare_world(seed, cfg)
    train_fz = Featurizer(vocab=world.vocab, dim=cfg.feature_dim, sigma=cfg.sigma,
                          table_seed=sub_seed(seed, "table"), noise_seed=sub_seed(seed, "noise"))
    am = AttentionAcousticModel(vocab=world.vocab, epochs=cfg.am_epochs, seed=sub_seed(seed, "init-am"))
    am.fit(train_fz.transform(world.am_train), world.am_train)
    fusion = FusionConfig(alpha=cfg.alpha, beam_size=cfg.beam_size,
                          max_eos_logprob_delta=cfg.max_eos_logprob_delta)
    out = {}
    for name, corpus in (("random", world.lm_random), ("filtered", world.lm_filtered)):
        # identical size and seed: only the training sentences differ
        lm = CharLanguageModel(vocab=world.vocab, epochs=cfg.lm_epochs, batch_size=16,
                               seed=sub_seed(seed, "init-lm")).fit(corpus)
        rep = evaluate(am, world.eval_features, world.eval_refs, fusion, lm)
        out[name] = (rep.wer, lm.perplexity(world.eval_refs))
        logger.info("seed %d: %s LM wer=%.3f", seed, name, rep.wer)
    return RareFilterResult(seed, out["random"][0], out["filtered"][0], out["random"][1],
                            out["filtered"][1], len(world.eval_refs))


def mean_or_nan(xs) -> float:
    xs = list(xs)
    return float(np.mean(xs)) if xs else math.nan
