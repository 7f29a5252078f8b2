"""Shared fixtures-by-hand for the test suite: tiny model builders and
a relative-error helper for gradient comparisons."""

from __future__ import annotations

import numpy as np

from vidcap.model import Dims, FeatureSet, ModelConfig, init_params
from vidcap.numerics import Rng


def tiny_dims(vocab_size: int = 5) -> Dims:
    return Dims(vocab_size=vocab_size, embed_dim=3, hidden_dim=3, temporal_dim=2, motion_dim=2)


def tiny_setup(seed: int = 0, vocab_size: int = 5, **cfg_kwargs):
    """(params, features, caption, cfg) for a smallest-useful model."""
    dims = tiny_dims(vocab_size)
    cfg = ModelConfig(dims=dims, **cfg_kwargs)
    rng = Rng(seed)
    params = init_params(dims, rng.fork("params"))
    features = FeatureSet(
        temporal=rng.fork("t").normal((3, dims.temporal_dim)),
        motion=rng.fork("m").normal((2, dims.motion_dim)),
        attributes=[4, 3],
    )
    caption = [1, 4, 3, 2]  # BOS w w EOS
    return params, features, caption, cfg


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max_i |a-b| / max(|a|, |b|, floor); the floor keeps near-zero
    coordinates from dominating with noise."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
