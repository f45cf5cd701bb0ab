"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .text import normalize


def check_sentences(X, allow_empty: bool = False) -> list[str]:
    """Normalize an iterable of sentences; a bare string is rejected."""
    if isinstance(X, str):
        raise TypeError("expected an iterable of sentences, got a single string")
    out = [normalize(s) for s in X]
    if not allow_empty:
        out = [s for s in out if s]
        if not out:
            raise ValueError("no non-empty sentences in input")
    return out


def check_features(x, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"feature sequence must be 2-D (frames, dim), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty feature sequence")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"feature dim {arr.shape[1]} does not match model dim {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature sequence contains NaN or Inf")
    return arr


def check_feature_list(X, dim: int | None = None) -> list[np.ndarray]:
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise TypeError("expected a list of feature sequences, got a single 2-D array")
    feats = [check_features(x, dim) for x in X]
    if not feats:
        raise ValueError("no feature sequences in input")
    if dim is None and len({f.shape[1] for f in feats}) > 1:
        raise ValueError("feature sequences disagree on dim")
    return feats


def check_scalar(x, name: str, target_type=numbers.Real, min_val=None, max_val=None,
                 include_min: bool = True, include_max: bool = True):
    if not isinstance(x, target_type) or isinstance(x, bool):
        raise TypeError(f"{name} must be {target_type}, got {type(x).__name__}")
    if min_val is not None and (x < min_val or (x == min_val and not include_min)):
        raise ValueError(f"{name}={x} is below the allowed minimum {min_val}")
    if max_val is not None and (x > max_val or (x == max_val and not include_max)):
        raise ValueError(f"{name}={x} is above the allowed maximum {max_val}")
    return x
