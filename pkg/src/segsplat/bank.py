"""Semantic memory bank: K-Means over pooled mask embeddings.

The bank is the M x D matrix of cluster centroids; each view's mask-id
label map is remapped to cluster indices (0 stays background).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotation import ViewAnnotation

DEFAULT_LAMBDA = 1.2
DEFAULT_MAX_ITERS = 100


@dataclass(frozen=True)
class BankProvenance:
    seed: int
    lam: float
    iterations: int


@dataclass(frozen=True)
class SemanticBank:
    """M x D matrix of unit-normalized cluster centroid embeddings."""

    centroids: np.ndarray
    provenance: BankProvenance

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2:
            raise ValueError("centroids must be (M, D)")
        object.__setattr__(self, "centroids", c)
        if c.shape[0] == 0:
            return
        norms = np.linalg.norm(c, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("bank rows must be nonzero")
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("bank rows must be unit length")

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class SemanticIndexMap:
    """Per-view pixel map of bank indices in {0..M}, 0 = background."""

    values: np.ndarray
    view_index: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("index map must be 2-D")
        if v.size and v.min() < 0:
            raise ValueError("index map values must be non-negative")
        object.__setattr__(self, "values", v.astype(np.int32))


def compute_cluster_count(n_total: int, k_views: int, lam: float = DEFAULT_LAMBDA) -> int:
    """Number of clusters M = clamp(round(lam * n_total / k_views), 1, n_total).

    Rounding is half-up; n_total = 0 yields an empty bank.
    """
    if k_views < 1:
        raise ValueError("k_views must be >= 1")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if n_total < 0:
        raise ValueError("n_total must be non-negative")
    if n_total == 0:
        return 0
    m = math.floor(lam * n_total / k_views + 0.5)
    return min(max(m, 1), n_total)


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective_history: tuple[float, ...]
    iterations: int


def _kmeans_pp_init(features: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    centroids = np.empty((m, features.shape[1]), dtype=np.float64)
    centroids[0] = features[rng.integers(n)]
    dist_sq = np.sum((features - centroids[0]) ** 2, axis=1)
    for j in range(1, m):
        total = dist_sq.sum()
        if total <= 0:
            # all remaining points coincide with a chosen centroid
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=dist_sq / total))
        centroids[j] = features[idx]
        dist_sq = np.minimum(dist_sq, np.sum((features - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(features: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # squared distances (N, M); argmin breaks ties toward the lowest index
    d = (
        np.sum(features**2, axis=1)[:, None]
        - 2.0 * features @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    assign = np.argmin(d, axis=1)
    return assign, d[np.arange(len(assign)), assign]


def _objective(features: np.ndarray, centroids: np.ndarray, assign: np.ndarray) -> float:
    diff = features - centroids[assign]
    return float(np.sum(diff * diff))


def kmeans(
    features: np.ndarray,
    m: int,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> KMeansResult:
    """Lloyd iterations with seeded k-means++ init.

    Callers normalize feature rows beforehand. Assignments break distance
    ties toward the lowest cluster index; a cluster that empties is reseeded
    to the point farthest from its previous centroid. Converges when no
    assignment changes. The returned centroids are the converged member
    means re-normalized to unit length; ``objective_history`` interleaves
    the objective after each assignment and each update step and is
    non-increasing.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be (N, D)")
    n = features.shape[0]
    if not (1 <= m <= n):
        raise ValueError(f"cluster count must satisfy 1 <= m <= {n}, got {m}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(features, m, rng)

    history: list[float] = []
    assign = np.full(n, -1, dtype=np.int64)
    iterations = 0
    for _ in range(max_iters):
        new_assign, _ = _assign(features, centroids)
        history.append(_objective(features, centroids, new_assign))
        converged = bool(np.array_equal(new_assign, assign))
        assign = new_assign
        iterations += 1
        if converged:
            break

        counts = np.bincount(assign, minlength=m)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, features)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        claimed: set[int] = set()
        for j in np.flatnonzero(~nonempty):
            dist = np.sum((features - centroids[j]) ** 2, axis=1)
            for idx in claimed:
                dist[idx] = -np.inf
            far = int(np.argmax(dist))
            claimed.add(far)
            centroids[j] = features[far]
        history.append(_objective(features, centroids, assign))

    # unit-normalize for the bank; a zero mean (exactly cancelling members)
    # falls back to the cluster's first member, which is already unit length
    norms = np.linalg.norm(centroids, axis=1)
    for j in np.flatnonzero(norms < 1e-12):
        members = np.flatnonzero(assign == j)
        centroids[j] = features[members[0]] if members.size else features[0]
        norms[j] = np.linalg.norm(centroids[j])
    centroids = centroids / norms[:, None]
    return KMeansResult(
        centroids=centroids,
        assignments=assign,
        objective_history=tuple(history),
        iterations=iterations,
    )


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("cannot normalize zero-length embedding rows")
    return x / norms


def build_bank(
    views: Sequence[ViewAnnotation],
    lam: float = DEFAULT_LAMBDA,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[SemanticBank, list[SemanticIndexMap]]:
    """Pool all view embeddings, cluster, and remap label maps to indices.

    Views must already carry rasterized label maps (see
    ``annotation.prepare_view``). Embeddings are L2-normalized before
    clustering. Cluster indices are densely renumbered 1..M in order of
    first appearance across (view, mask) order so serialization is stable.
    """
    views = list(views)
    if not views:
        raise ValueError("build_bank requires at least one view")
    for v in views:
        if v.label_map is None:
            raise ValueError(f"view {v.view_index} has no rasterized label map")
    dims = {v.embedding_dim for v in views if len(v.masks)}
    if len(dims) > 1:
        raise ValueError(f"views disagree on embedding dimension: {sorted(dims)}")

    mask_owner: list[tuple[int, int]] = []  # (view position, mask position)
    rows = []
    for vi, v in enumerate(views):
        for mi in range(len(v.masks)):
            mask_owner.append((vi, mi))
            rows.append(v.embeddings[mi])
    n_total = len(rows)
    m = compute_cluster_count(n_total, len(views), lam)
    if m == 0:
        empty_bank = SemanticBank(
            centroids=np.zeros((0, dims.pop() if dims else 0)),
            provenance=BankProvenance(seed=seed, lam=lam, iterations=0),
        )
        maps = [
            SemanticIndexMap(np.zeros_like(v.label_map), view_index=v.view_index)
            for v in views
        ]
        return empty_bank, maps

    features = normalize_rows(np.stack(rows))
    result = kmeans(features, m, seed=seed, max_iters=max_iters)

    # dense renumbering by first appearance
    renumber: dict[int, int] = {}
    for a in result.assignments:
        if int(a) not in renumber:
            renumber[int(a)] = len(renumber) + 1
    order = sorted(renumber, key=renumber.get)
    centroids = result.centroids[order]

    bank = SemanticBank(
        centroids=centroids,
        provenance=BankProvenance(seed=seed, lam=lam, iterations=result.iterations),
    )
    maps = []
    flat = 0
    per_view_assign: list[dict[int, int]] = [dict() for _ in views]
    for (vi, mi), a in zip(mask_owner, result.assignments):
        per_view_assign[vi][views[vi].masks[mi].mask_id] = renumber[int(a)]
        flat += 1
    for vi, v in enumerate(views):
        out = np.zeros_like(v.label_map)
        for mask_id, cluster in per_view_assign[vi].items():
            out[v.label_map == mask_id] = cluster
        maps.append(SemanticIndexMap(out, view_index=v.view_index))
    return bank, maps
