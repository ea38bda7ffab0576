"""K-Means over kernel embeddings and representative selection.

K is chosen by sweeping a range and scoring each clustering with the
mean silhouette coefficient; among values whose score is within a
small band of the best, the smallest K wins, because fewer clusters
mean fewer simulated kernels.  Each cluster is represented by its
earliest launch and weighted by its cardinality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SingleCluster, TooFewKernels
from .seeds import rng_for

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
KMEANS_REL_TOL = 1e-6
SILHOUETTE_SUBSAMPLE = 2000


def _dist2(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (N, K)."""
    d2 = (
        np.sum(x**2, axis=1, keepdims=True)
        - 2.0 * (x @ c.T)
        + np.sum(c**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    closest = _dist2(x, centroids[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest / total))
        centroids[j] = x[pick]
        closest = np.minimum(closest, _dist2(x, centroids[j : j + 1]).ravel())
    return centroids


def _lloyd(
    x: np.ndarray, centroids: np.ndarray, max_iter: int, rel_tol: float
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    k = centroids.shape[0]
    centroids = centroids.copy()
    assignment = np.zeros(x.shape[0], dtype=np.int64)
    prev_inertia = None
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _dist2(x, centroids)
        assignment = np.argmin(d2, axis=1)
        counts = np.bincount(assignment, minlength=k)
        if np.any(counts == 0):
            # Reseed each empty cluster onto the point currently
            # farthest from its own centroid; ties break low.
            own = d2[np.arange(x.shape[0]), assignment].copy()
            for c in np.flatnonzero(counts == 0):
                far = int(np.argmax(own))
                centroids[c] = x[far]
                own[far] = -1.0
            d2 = _dist2(x, centroids)
            assignment = np.argmin(d2, axis=1)
            counts = np.bincount(assignment, minlength=k)
        for c in range(k):
            if counts[c] > 0:
                centroids[c] = x[assignment == c].mean(axis=0)
        inertia = float(_dist2(x, centroids)[np.arange(x.shape[0]), assignment].sum())
        history.append(inertia)
        if prev_inertia is not None:
            if prev_inertia == 0.0 or (prev_inertia - inertia) <= rel_tol * prev_inertia:
                break
        prev_inertia = inertia
    return assignment, centroids, history[-1], history


def kmeans(
    embeddings: np.ndarray,
    k: int,
    seed: int,
    return_history: bool = False,
):
    """Restarted Lloyd iterations with k-means++ seeding.

    Ten restarts are run and the lowest-inertia result kept, ties
    resolved by restart index so the outcome is a total order.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"K={k} outside [1, {n}]")
    best = None
    for restart in range(KMEANS_RESTARTS):
        rng = rng_for(seed, "kmeans", restart)
        init = _kmeanspp_init(x, k, rng)
        assignment, centroids, inertia, history = _lloyd(
            x, init, KMEANS_MAX_ITER, KMEANS_REL_TOL
        )
        if best is None or inertia < best[2]:
            best = (assignment, centroids, inertia, history)
    assignment, centroids, inertia, history = best
    if return_history:
        return assignment, centroids, inertia, history
    return assignment, centroids, inertia


def _silhouette_values(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    distances = np.sqrt(_dist2(x, x))
    uniq = np.unique(labels)
    n = x.shape[0]
    scores = np.zeros(n)
    masks = {c: labels == c for c in uniq}
    counts = {c: int(masks[c].sum()) for c in uniq}
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1:
            continue  # singleton convention: s = 0
        a = distances[i, masks[own]].sum() / (counts[own] - 1)
        b = np.inf
        for c in uniq:
            if c == own:
                continue
            mean_other = distances[i, masks[c]].mean()
            if mean_other < b:
                b = mean_other
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return scores


def silhouette_score(embeddings: np.ndarray, assignment: np.ndarray) -> float:
    """Mean silhouette over points, subsampled above 2000 points."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(assignment)
    populated = np.unique(labels)
    if populated.size < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    n = x.shape[0]
    if n > SILHOUETTE_SUBSAMPLE:
        rng = rng_for(0, "silhouette-subsample", n)
        pick = rng.choice(n, size=SILHOUETTE_SUBSAMPLE, replace=False)
        # Keep every cluster represented.
        missing = np.setdiff1d(populated, np.unique(labels[pick]))
        for c in missing:
            pick = np.append(pick, np.flatnonzero(labels == c)[0])
        pick = np.sort(pick)
        x = x[pick]
        labels = labels[pick]
    return float(_silhouette_values(x, labels).mean())


def sweep_silhouette(
    embeddings: np.ndarray, k_min: int, k_max: int, seed: int
) -> dict[int, float]:
    """Silhouette score for each K in [k_min, k_max]."""
    scores: dict[int, float] = {}
    for k in range(k_min, k_max + 1):
        assignment, _, _ = kmeans(embeddings, k, seed)
        try:
            scores[k] = silhouette_score(embeddings, assignment)
        except SingleCluster:
            # Degenerate duplicates collapsed the clustering.
            scores[k] = -np.inf
    return scores


def pick_k_from_scores(scores: dict[int, float], tie_band: float) -> int:
    """Smallest K whose score is within tie_band of the best score."""
    if not scores:
        raise ConfigError("empty silhouette sweep")
    best = max(scores.values())
    for k in sorted(scores):
        if scores[k] >= best - tie_band:
            return k
    return min(scores)


def select_k(
    embeddings: np.ndarray,
    k_min: int = 2,
    k_max: int | None = None,
    tie_band: float = 0.01,
    identity_eps: float = 1e-9,
    seed: int = 0,
) -> int:
    """Silhouette-maximizing K, favoring smaller K inside the tie band.

    A corpus whose embeddings are all mutually closer than identity_eps
    short-circuits to K=1.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise TooFewKernels("need at least 2 embeddings to select K")
    max_dist = float(np.sqrt(np.max(_dist2(x, x))))
    if max_dist < identity_eps:
        return 1
    if k_max is None:
        k_max = min(20, n - 1)
    k_max = min(k_max, n)
    if k_max < k_min:
        return min(k_min, n)
    scores = sweep_silhouette(x, k_min, k_max, seed)
    return pick_k_from_scores(scores, tie_band)


@dataclass(slots=True)
class ClusterGroup:
    rep: int
    weight: int
    members: list[int]


@dataclass(slots=True)
class ClusterPlan:
    k: int
    silhouette: float
    clusters: list[ClusterGroup] = field(default_factory=list)

    @property
    def representatives(self) -> list[int]:
        return [c.rep for c in self.clusters]

    def assignment(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for idx, cluster in enumerate(self.clusters):
            for lid in cluster.members:
                out[lid] = idx
        return out

    def to_json(self) -> dict:
        return {
            "K": self.k,
            "silhouette": self.silhouette,
            "clusters": [
                {"rep": c.rep, "weight": c.weight, "members": list(c.members)}
                for c in self.clusters
            ],
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ClusterPlan":
        return cls(
            k=int(raw["K"]),
            silhouette=float(raw["silhouette"]),
            clusters=[
                ClusterGroup(
                    rep=int(c["rep"]),
                    weight=int(c["weight"]),
                    members=[int(m) for m in c["members"]],
                )
                for c in raw["clusters"]
            ],
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ClusterPlan":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def make_plan(
    embeddings: np.ndarray, launch_ids, k: int, seed: int
) -> ClusterPlan:
    """Cluster and pick each cluster's earliest launch as representative.

    Clusters are renumbered by representative launch order and weighted
    by their cardinality, so the weights sum to the corpus size.
    """
    ids = [int(l) for l in launch_ids]
    x = np.asarray(embeddings, dtype=np.float64)
    if len(ids) != x.shape[0]:
        raise ConfigError(f"{len(ids)} launch ids for {x.shape[0]} embeddings")
    assignment, _, _ = kmeans(x, k, seed)
    groups: dict[int, list[int]] = {}
    for lid, label in zip(ids, assignment):
        groups.setdefault(int(label), []).append(lid)
    clusters = [
        ClusterGroup(rep=min(members), weight=len(members), members=sorted(members))
        for members in groups.values()
    ]
    clusters.sort(key=lambda c: c.rep)
    populated = np.unique(assignment)
    if populated.size >= 2:
        sil = silhouette_score(x, assignment)
    else:
        sil = 0.0
    return ClusterPlan(k=len(clusters), silhouette=sil, clusters=clusters)
