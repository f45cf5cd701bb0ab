from __future__ import annotations

import logging

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .. import autodiff as ad
from ..text import CharVocab
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import clip_by_global_norm, make_optimizer

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    lim = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def lstm_bias(hidden: int) -> np.ndarray:
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate open at init
    return b


class NeuralModelMixin:
    """Parameter storage, checkpoint I/O and the shared SGD-family loop."""

    _kind = "model"
    _config_keys: tuple = ()

    def _check_fitted(self):
        check_is_fitted(self, "params_")

    @property
    def param_list(self) -> list[ad.Tensor]:
        return list(self.params_.values())

    def get_weights(self) -> dict[str, np.ndarray]:
        self._check_fitted()
        return {k: v.values.copy() for k, v in self.params_.items()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        self.params_ = {k: ad.param(np.array(v, dtype=np.float64)) for k, v in weights.items()}

    @property
    def n_parameters(self) -> int:
        return int(sum(v.values.size for v in self.params_.values()))

    def _extra_config(self) -> dict:
        return {}

    def save(self, path) -> None:
        self._check_fitted()
        config = {k: getattr(self, k) for k in self._config_keys}
        config.update(self._extra_config())
        save_checkpoint(self.get_weights(), path, kind=self._kind, vocab=self.vocab_, config=config)

    @classmethod
    def load(cls, path, vocab: CharVocab | None = None):
        weights, header = load_checkpoint(path, vocab=vocab, kind=cls._kind)
        config = dict(header["config"])
        extra = {k: config.pop(k) for k in list(config) if k not in cls._config_keys}
        vocab = CharVocab(header["vocab"][3:])
        model = cls(vocab=vocab, **config)
        model.vocab_ = vocab
        model.set_weights(weights)
        model._restore_extra(extra)
        return model

    def _restore_extra(self, extra: dict) -> None:
        pass

    def _train(self, examples: list, loss_fn, rng: np.random.Generator, *, epochs: int,
               batch_size: int, max_steps: int | None = None) -> list[float]:
        params = self.param_list
        opt = make_optimizer(self.optimizer, params, self.learning_rate)
        curve: list[float] = []
        step = 0
        for epoch in range(epochs):
            order = rng.permutation(len(examples))
            for start in range(0, len(order), batch_size):
                if max_steps is not None and step >= max_steps:
                    return curve
                batch = [examples[i] for i in order[start:start + batch_size]]
                try:
                    loss = loss_fn(batch)
                    grads = ad.backward(loss, wrt=params)
                except ad.NumericError as exc:
                    raise TrainingDivergedError(
                        f"{type(self).__name__}: loss became non-finite at step {step} "
                        f"(epoch {epoch}, lr={self.learning_rate}): {exc}") from exc
                opt.step(clip_by_global_norm(grads, self.clip_norm))
                curve.append(loss.item())
                step += 1
            logger.debug("%s epoch %d loss %.4f", type(self).__name__, epoch, curve[-1])
        return curve
