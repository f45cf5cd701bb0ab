"""Deterministic text -> feature-frame synthesizer (stands in for audio)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..text import CharVocab, VocabError


def embedding_table(vocab: CharVocab, dim: int, table_seed: int) -> np.ndarray:
    """Seeded N(0, 1) row per symbol; the space row is silence (all zeros)."""
    table = np.random.default_rng(table_seed).normal(size=(len(vocab), dim))
    table[vocab.space_id] = 0.0
    return table


def featurize(transcript: str, noise_sigma: float, seed, *, vocab: CharVocab, dim: int = 16,
              table_seed: int = 0) -> np.ndarray:
    """One frame per character: seeded char embedding plus N(0, sigma^2) noise.

    Spaces map to silence, so a word boundary sounds like the end of input.
    """
    table = embedding_table(vocab, dim, table_seed)
    ids = []
    for pos, ch in enumerate(transcript):
        if ch not in vocab:
            raise VocabError(f"character {ch!r} at position {pos} is not in the vocabulary")
        ids.append(vocab.id_of(ch))
    frames = table[np.asarray(ids, dtype=np.int64)].reshape(len(ids), dim)
    if noise_sigma > 0:
        frames = frames + np.random.default_rng(seed).normal(scale=noise_sigma, size=frames.shape)
    return frames


class Featurizer(TransformerMixin, BaseEstimator):
    """Transcripts -> list of (T, dim) frame arrays.

    Utterance ``i`` of a ``transform`` call is noised with seed
    ``(noise_seed, i)``, so the output depends only on the inputs and params.
    """

    def __init__(self, vocab: CharVocab | None = None, dim: int = 16, sigma: float = 0.0,
                 table_seed: int = 0, noise_seed: int = 0):
        self.vocab = vocab
        self.dim = dim
        self.sigma = sigma
        self.table_seed = table_seed
        self.noise_seed = noise_seed

    def fit(self, X, y=None):
        self.vocab_ = self.vocab if self.vocab is not None else CharVocab.from_texts(X)
        self.table_ = embedding_table(self.vocab_, self.dim, self.table_seed)
        return self

    def transform(self, X):
        vocab = getattr(self, "vocab_", None) or self.vocab
        if vocab is None:
            raise ValueError("Featurizer needs a vocab; pass one or call fit first")
        return [featurize(t, self.sigma, (self.noise_seed, i), vocab=vocab, dim=self.dim,
                          table_seed=self.table_seed) for i, t in enumerate(X)]

    def config(self) -> dict:
        return {"dim": self.dim, "sigma": self.sigma, "table_seed": self.table_seed,
                "noise_seed": self.noise_seed}
