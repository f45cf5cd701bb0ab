"""Attention encoder-decoder over feature frames (the fusion's acoustic model).

Encoder: one bidirectional LSTM layer (``enc_size // 2`` units per
direction) over the frames followed by one trailing silence (zero) frame;
the row for that frame is the end-of-input row of the memory.  Decoder: an LSTM fed the previous token and the
previous context, dot-product attention over the memory, and a softmax over
the character vocabulary.

Attention keys and queries both carry a fixed sinusoidal position code next
to their learned part, so decoding step ``i`` starts out attending frame
``i`` and the end-of-input row sits at position ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .. import autodiff as ad
from ..text import CharVocab, encode
from ..validation import check_feature_list, check_features, check_sentences
from .base import NeuralModelMixin, glorot, lstm_bias
from .lm import pad_batch


def position_codes(positions, dim: int, scale: float) -> np.ndarray:
    """Rows of [cos(w_k p), sin(w_k p)] with geometric frequencies w_k = 3 * 1.5**-k."""
    freqs = 3.0 * 1.5 ** -np.arange(dim // 2)
    ang = np.outer(np.asarray(positions, dtype=np.float64), freqs)
    return scale * np.concatenate([np.cos(ang), np.sin(ang)], axis=1)


@dataclass
class Encoded:
    memory: ad.Tensor      # (T + 1, enc_size), last row is the end-of-input row
    keys_t: ad.Tensor      # (attn_size + pos_dim, T + 1)
    n_frames: int


class AttentionAcousticModel(NeuralModelMixin, BaseEstimator):
    _kind = "am"
    _config_keys = ("feature_dim", "enc_size", "dec_size", "embed_size", "attn_size", "pos_dim",
                    "pos_scale", "learning_rate", "epochs", "max_steps", "optimizer", "clip_norm",
                    "seed")

    def __init__(self, vocab: CharVocab | None = None, feature_dim: int | None = None,
                 enc_size: int = 64, dec_size: int = 64, embed_size: int = 32, attn_size: int = 32,
                 pos_dim: int = 24, pos_scale: float = 1.5, learning_rate: float = 0.005,
                 epochs: int = 10, max_steps: int | None = None, optimizer: str = "adam",
                 clip_norm: float | None = 5.0, seed: int = 0):
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.enc_size = enc_size
        self.dec_size = dec_size
        self.embed_size = embed_size
        self.attn_size = attn_size
        self.pos_dim = pos_dim
        self.pos_scale = pos_scale
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.max_steps = max_steps
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.seed = seed

    def _extra_config(self) -> dict:
        return {"feature_dim_": self.feature_dim_, "featurizer": getattr(self, "featurizer_config_", None)}

    def _restore_extra(self, extra: dict) -> None:
        self.feature_dim_ = extra["feature_dim_"]
        self.featurizer_config_ = extra.get("featurizer")

    def _init_params(self, rng: np.random.Generator) -> None:
        self._init_check()
        V, d = len(self.vocab_), self.feature_dim_
        E, D, A = self.enc_size, self.dec_size, self.attn_size
        p = {
            "enc.fw.w": glorot(rng, d + E // 2, 2 * E),
            "enc.fw.b": lstm_bias(E // 2),
            "enc.bw.w": glorot(rng, d + E // 2, 2 * E),
            "enc.bw.b": lstm_bias(E // 2),
            "embed": rng.normal(scale=0.1, size=(V, self.embed_size)),
            "dec.w": glorot(rng, self.embed_size + E + D, 4 * D),
            "dec.b": lstm_bias(D),
            # small learned attention so the position prior dominates at init
            "att.k": glorot(rng, E, A, scale=0.1),
            "att.q": glorot(rng, D, A, scale=0.1),
            "out.w": glorot(rng, D + E, V),
            "out.b": np.zeros(V),
        }
        self.set_weights(p)

    def initialize(self, feature_dim: int, vocab: CharVocab | None = None) -> "AttentionAcousticModel":
        """Random parameters without training."""
        self.vocab_ = vocab or self.vocab
        self.feature_dim_ = feature_dim
        self._init_params(np.random.default_rng(self.seed))
        return self

    # -- forward

    def encode(self, features) -> Encoded:
        feats = check_features(features, self.feature_dim_)
        p = self.params_
        half = self.enc_size // 2
        padded = np.vstack([feats, np.zeros((1, feats.shape[1]))])
        frames = [ad.constant(padded[t:t + 1]) for t in range(padded.shape[0])]
        directions = []
        for name, seq in (("fw", frames), ("bw", frames[::-1])):
            h = ad.constant(np.zeros((1, half)))
            c = ad.constant(np.zeros((1, half)))
            rows = []
            for x in seq:
                h, c = ad.lstm_cell(x, h, c, p[f"enc.{name}.w"], p[f"enc.{name}.b"])
                rows.append(h)
            directions.append(rows if name == "fw" else rows[::-1])
        memory = ad.concat([ad.concat([f, b], axis=1) for f, b in zip(*directions)], axis=0)
        T1 = memory.shape[0]
        keys = ad.concat([ad.matmul(memory, p["att.k"]),
                          ad.constant(position_codes(range(T1), self.pos_dim, self.pos_scale))], axis=1)
        return Encoded(memory, ad.transpose(keys), feats.shape[0])

    def _init_check(self):
        if self.enc_size % 2:
            raise ValueError("enc_size must be even (split across two directions)")

    def initial_state(self, enc: Encoded, batch: int = 1):
        return (ad.constant(np.zeros((batch, self.dec_size))),
                ad.constant(np.zeros((batch, self.dec_size))),
                ad.constant(np.zeros((batch, self.enc_size))))

    def decode_step(self, state, tokens, positions, enc: Encoded):
        """One decoder step for K hypotheses.

        Returns (log-probs (K, V), attention (K, T + 1), next state).
        """
        p = self.params_
        h, c, ctx = state
        x = ad.concat([ad.embed_lookup(p["embed"], np.asarray(tokens, dtype=np.int64)), ctx], axis=-1)
        h, c = ad.lstm_cell(x, h, c, p["dec.w"], p["dec.b"])
        q = ad.concat([ad.matmul(h, p["att.q"]),
                       ad.constant(position_codes(positions, self.pos_dim, self.pos_scale))], axis=1)
        attn = ad.softmax(ad.matmul(q, enc.keys_t))
        ctx = ad.matmul(attn, enc.memory)
        logits = ad.add(ad.matmul(ad.concat([h, ctx], axis=-1), p["out.w"]), p["out.b"])
        return ad.log_softmax(logits), attn, (h, c, ctx)

    @staticmethod
    def select_state(state, index):
        return tuple(ad.constant(s.values[index]) for s in state)

    def _forced(self, enc: Encoded, seqs: list[list[int]]):
        ids, mask = pad_batch(seqs, self.vocab_.eos_id)
        K = len(seqs)
        state = self.initial_state(enc, K)
        outs = []
        for t in range(ids.shape[1] - 1):
            logp, attn, state = self.decode_step(state, ids[:, t], np.full(K, t), enc)
            outs.append((logp, attn))
        return outs, ids, mask

    def sequence_logprobs(self, enc: Encoded, seqs: list[list[int]]) -> ad.Tensor:
        """Teacher-forced log P(seq | x) for K SOS-prefixed id sequences, as a (K,) tensor.

        Each sequence is scored over exactly the tokens after SOS.
        """
        outs, ids, mask = self._forced(enc, seqs)
        K, V = len(seqs), len(self.vocab_)
        total = None
        for t, (logp, _) in enumerate(outs):
            w = np.zeros((K, V))
            w[np.arange(K), ids[:, t + 1]] = mask[:, t + 1]
            term = ad.sum(ad.mul(logp, ad.constant(w)), axis=1)
            total = term if total is None else ad.add(total, term)
        return total

    def score_sequences(self, features, seqs: list[list[int]]) -> tuple[np.ndarray, list[np.ndarray]]:
        """Teacher-forced log-probs and per-step attention (steps, T + 1) per sequence."""
        with ad.no_grad():
            enc = self.encode(features)
            outs, ids, mask = self._forced(enc, seqs)
        rows = np.arange(len(seqs))
        total = np.zeros(len(seqs))
        for t, (logp, _) in enumerate(outs):
            total += logp.values[rows, ids[:, t + 1]] * mask[:, t + 1]
        attns = [np.stack([outs[t][1].values[k] for t in range(len(s) - 1)]) if len(s) > 1
                 else np.zeros((0, enc.n_frames + 1)) for k, s in enumerate(seqs)]
        return total, attns

    def utterance_nll(self, features, transcript: str) -> ad.Tensor:
        """Mean per-token negative log-likelihood of the transcript (graph-recording)."""
        ids = encode(transcript, self.vocab_)
        enc = self.encode(features)
        lp = self.sequence_logprobs(enc, [ids])
        return ad.mul(ad.sum(lp), ad.constant(-1.0 / (len(ids) - 1)))

    # -- estimator API

    def fit(self, X, y):
        feats = check_feature_list(X, self.feature_dim)
        transcripts = check_sentences(y, allow_empty=True)
        if len(feats) != len(transcripts):
            raise ValueError(f"{len(feats)} feature sequences but {len(transcripts)} transcripts")
        self.vocab_ = self.vocab if self.vocab is not None else CharVocab.from_texts(transcripts)
        self.feature_dim_ = feats[0].shape[1]
        rng = np.random.default_rng(self.seed)
        self._init_params(rng)
        data = list(zip(feats, transcripts))
        self.loss_curve_ = self._train(data, lambda b: self.utterance_nll(*b[0]), rng,
                                       epochs=self.epochs, batch_size=1, max_steps=self.max_steps)
        return self

    def greedy_decode(self, features, max_steps: int | None = None) -> str:
        self._check_fitted()
        V = self.vocab_
        with ad.no_grad():
            enc = self.encode(features)
            state = self.initial_state(enc, 1)
            token = V.sos_id
            out = []
            limit = max_steps or 2 * enc.n_frames + 10
            for t in range(limit):
                logp, _, state = self.decode_step(state, [token], [t], enc)
                scores = logp.values[0].copy()
                scores[V.sos_id] = -np.inf
                token = int(np.argmax(scores))
                if token == V.eos_id:
                    break
                out.append(token)
        return V.decode(out)

    def predict(self, X) -> list[str]:
        return [self.greedy_decode(x) for x in check_feature_list(X, self.feature_dim_)]

    def score(self, X, y) -> float:
        """Character accuracy of greedy decoding (1 - CER, floored at 0)."""
        from ..eval.metrics import edit_distance

        hyps = self.predict(X)
        refs = check_sentences(y, allow_empty=True)
        errs = sum(edit_distance(list(h), list(r)) for h, r in zip(hyps, refs))
        n = sum(len(r) for r in refs)
        return max(0.0, 1.0 - errs / max(n, 1))
