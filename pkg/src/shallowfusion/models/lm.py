"""Character-level LSTM language model with an optional projection layer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .. import autodiff as ad
from ..text import CharVocab, encode
from ..validation import check_sentences
from .base import NeuralModelMixin, glorot, lstm_bias


def pad_batch(seqs: list[list[int]], pad: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids, mask) of shape (batch, max_len)."""
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), n))
    for k, s in enumerate(seqs):
        ids[k, :len(s)] = s
        mask[k, :len(s)] = 1.0
    return ids, mask


class CharLanguageModel(NeuralModelMixin, BaseEstimator):
    """LSTM(P) character LM.

    Each layer is an LSTM with ``hidden_size`` units; when ``proj_size`` is
    non-zero the cell output is projected down and the projection is what
    recurs and feeds the next layer.

    State for a batch of K prefixes is a list with one ``(r, c)`` pair of
    tensors per layer.
    """

    _kind = "lm"
    _config_keys = ("embed_size", "hidden_size", "proj_size", "num_layers", "learning_rate",
                    "epochs", "batch_size", "max_steps", "optimizer", "clip_norm", "seed")

    def __init__(self, vocab: CharVocab | None = None, embed_size: int = 32, hidden_size: int = 64,
                 proj_size: int = 32, num_layers: int = 1, learning_rate: float = 0.01,
                 epochs: int = 5, batch_size: int = 16, max_steps: int | None = None,
                 optimizer: str = "adam", clip_norm: float | None = 5.0, seed: int = 0):
        self.vocab = vocab
        self.embed_size = embed_size
        self.hidden_size = hidden_size
        self.proj_size = proj_size
        self.num_layers = num_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.seed = seed

    # -- parameters

    @property
    def _rec_size(self) -> int:
        return self.proj_size or self.hidden_size

    def _init_params(self, rng: np.random.Generator) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.proj_size and self.proj_size >= self.hidden_size:
            raise ValueError("proj_size must be smaller than hidden_size")
        V, H, R = len(self.vocab_), self.hidden_size, self._rec_size
        p = {"embed": rng.normal(scale=0.1, size=(V, self.embed_size))}
        n_in = self.embed_size
        for layer in range(self.num_layers):
            p[f"l{layer}.w"] = glorot(rng, n_in + R, 4 * H)
            p[f"l{layer}.b"] = lstm_bias(H)
            if self.proj_size:
                p[f"l{layer}.proj"] = glorot(rng, H, R)
            n_in = R
        p["out.w"] = glorot(rng, R, V)
        p["out.b"] = np.zeros(V)
        self.set_weights(p)

    def initialize(self, vocab: CharVocab | None = None) -> "CharLanguageModel":
        """Random parameters without training."""
        self.vocab_ = vocab or self.vocab
        self._init_params(np.random.default_rng(self.seed))
        return self

    # -- forward

    def initial_state(self, batch: int = 1) -> list[tuple[ad.Tensor, ad.Tensor]]:
        return [(ad.constant(np.zeros((batch, self._rec_size))),
                 ad.constant(np.zeros((batch, self.hidden_size))))
                for _ in range(self.num_layers)]

    def step(self, state, tokens):
        """Advance K prefixes by one token each; returns (log-probs (K, V), state)."""
        p = self.params_
        x = ad.embed_lookup(p["embed"], np.asarray(tokens, dtype=np.int64))
        new_state = []
        for layer, (r, c) in enumerate(state):
            h, c = ad.lstm_cell(x, r, c, p[f"l{layer}.w"], p[f"l{layer}.b"])
            r = ad.matmul(h, p[f"l{layer}.proj"]) if self.proj_size else h
            new_state.append((r, c))
            x = r
        logits = ad.add(ad.matmul(x, p["out.w"]), p["out.b"])
        return ad.log_softmax(logits), new_state

    @staticmethod
    def select_state(state, index) -> list:
        return [(ad.constant(r.values[index]), ad.constant(c.values[index])) for r, c in state]

    def _token_logprobs(self, seqs: list[list[int]]) -> tuple[list[ad.Tensor], np.ndarray, np.ndarray]:
        ids, mask = pad_batch(seqs, self.vocab_.eos_id)
        state = self.initial_state(len(seqs))
        outs = []
        for t in range(ids.shape[1] - 1):
            logp, state = self.step(state, ids[:, t])
            outs.append(logp)
        return outs, ids, mask

    def batch_nll(self, seqs: list[list[int]]) -> ad.Tensor:
        """Mean negative log-likelihood per predicted token (graph-recording)."""
        outs, ids, mask = self._token_logprobs(seqs)
        V = len(self.vocab_)
        n_tokens = mask[:, 1:].sum()
        total = None
        for t, logp in enumerate(outs):
            w = np.zeros((len(seqs), V))
            w[np.arange(len(seqs)), ids[:, t + 1]] = mask[:, t + 1] / n_tokens
            term = ad.sum(ad.mul(logp, ad.constant(w)))
            total = term if total is None else ad.add(total, term)
        return ad.mul(total, ad.constant(-1.0))

    def score_sequences(self, seqs: list[list[int]]) -> np.ndarray:
        """Total log-probability of each SOS...EOS id sequence, teacher-forced in one batch."""
        with ad.no_grad():
            outs, ids, mask = self._token_logprobs(seqs)
        total = np.zeros(len(seqs))
        rows = np.arange(len(seqs))
        for t, logp in enumerate(outs):
            total += logp.values[rows, ids[:, t + 1]] * mask[:, t + 1]
        return total

    def sequence_logprob(self, text: str) -> float:
        """log P(text + EOS), one step at a time."""
        self._check_fitted()
        ids = encode(text, self.vocab_)
        total = 0.0
        with ad.no_grad():
            state = self.initial_state(1)
            for prev, nxt in zip(ids[:-1], ids[1:]):
                logp, state = self.step(state, [prev])
                total += float(logp.values[0, nxt])
        return total

    # -- estimator API

    def fit(self, X, y=None):
        sentences = check_sentences(X)
        self.vocab_ = self.vocab if self.vocab is not None else CharVocab.from_texts(sentences)
        rng = np.random.default_rng(self.seed)
        self._init_params(rng)
        seqs = [encode(s, self.vocab_) for s in sentences]
        self.loss_curve_ = self._train(seqs, self.batch_nll, rng, epochs=self.epochs,
                                       batch_size=self.batch_size, max_steps=self.max_steps)
        return self

    def perplexity(self, X) -> float:
        self._check_fitted()
        seqs = [encode(s, self.vocab_) for s in check_sentences(X)]
        lp = self.score_sequences(seqs)
        n = sum(len(s) - 1 for s in seqs)
        return float(np.exp(-lp.sum() / n))

    def score(self, X, y=None) -> float:
        """Mean log-probability per predicted character (higher is better)."""
        return -float(np.log(self.perplexity(X)))
