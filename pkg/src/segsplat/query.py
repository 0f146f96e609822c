"""Dense feature recovery from semantic buffers and open-vocabulary querying.

Recovery linearly combines bank rows with the rendered blend weights and
unit-normalizes per pixel; relevancy follows the pairwise-softmax-with-
canonicals rule computed in its numerically stable sigmoid form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bank import SemanticBank

BACKGROUND_NORM_EPS = 1e-8

DEFAULT_TEMPERATURE = 10.0
DEFAULT_FLOOR = 0.5
DEFAULT_MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class FeatureMap:
    """Per-pixel unit feature vectors; background pixels are exact zeros."""

    values: np.ndarray
    background_mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        bg = np.asarray(self.background_mask, dtype=bool)
        if v.ndim != 3:
            raise ValueError("feature values must be (H, W, D)")
        if bg.shape != v.shape[:2]:
            raise ValueError("background mask resolution mismatch")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "background_mask", bg)

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class QueryConfig:
    """A text query embedding plus the canonical comparison embeddings."""

    query_embedding: np.ndarray
    canonical_embeddings: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE
    floor: float = DEFAULT_FLOOR
    mask_threshold: float = DEFAULT_MASK_THRESHOLD

    def __post_init__(self):
        q = np.asarray(self.query_embedding, dtype=np.float64)
        c = np.atleast_2d(np.asarray(self.canonical_embeddings, dtype=np.float64))
        if q.ndim != 1:
            raise ValueError("query embedding must be a vector")
        if c.shape[0] == 0:
            raise ValueError("canonical embedding list must be non-empty")
        if c.shape[1] != q.shape[0]:
            raise ValueError("query and canonical embeddings disagree on dimension")
        for name, arr in (("query", q[None]), ("canonical", c)):
            norms = np.linalg.norm(arr, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-5):
                raise ValueError(f"{name} embeddings must be unit length")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not (0.0 <= self.floor <= 1.0 and 0.0 <= self.mask_threshold <= 1.0):
            raise ValueError("thresholds must be in [0, 1]")
        object.__setattr__(self, "query_embedding", q)
        object.__setattr__(self, "canonical_embeddings", c)


def blend_features(semantic: np.ndarray, bank: SemanticBank) -> np.ndarray:
    """Raw per-pixel combination E(v)^T B, before normalization."""
    semantic = np.asarray(semantic, dtype=np.float64)
    if semantic.ndim != 3 or semantic.shape[2] != bank.size:
        raise ValueError(
            f"semantic buffer channels {semantic.shape} do not match bank size {bank.size}"
        )
    return semantic @ bank.centroids


def recover_features(semantic: np.ndarray, bank: SemanticBank) -> FeatureMap:
    """Translate blended index weights back to embedding space.

    Pixels whose combined vector has norm below 1e-8 are flagged background
    and zeroed; all others are normalized to unit length.
    """
    raw = blend_features(semantic, bank)
    norms = np.linalg.norm(raw, axis=2)
    background = norms < BACKGROUND_NORM_EPS
    safe = np.where(background, 1.0, norms)
    values = raw / safe[:, :, None]
    values[background] = 0.0
    return FeatureMap(values=values, background_mask=background)


def relevancy_map(features: FeatureMap, cfg: QueryConfig) -> np.ndarray:
    """Per-pixel relevancy of the query against the canonical phrases.

    r = min over canonicals of sigmoid(tau * (s_query - s_canonical)),
    where s_* are dot products with the unit pixel feature. Scores below
    ``cfg.floor`` and background pixels are set to 0.
    """
    if features.dim != cfg.query_embedding.shape[0]:
        raise ValueError("feature dimension does not match query embedding")
    # einsum keeps each dot product bit-stable regardless of how many
    # canonicals are stacked, so adding a canonical can only lower the min
    s_q = np.einsum("hwd,d->hw", features.values, cfg.query_embedding)
    s_c = np.einsum("hwd,cd->hwc", features.values, cfg.canonical_embeddings)
    scores = expit(cfg.temperature * (s_q[:, :, None] - s_c)).min(axis=2)
    scores[scores < cfg.floor] = 0.0
    scores[features.background_mask] = 0.0
    return scores


def segment(relevancy: np.ndarray, threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    """Binary mask: pixels with relevancy >= threshold are included."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must be in [0, 1]")
    return np.asarray(relevancy) >= threshold
