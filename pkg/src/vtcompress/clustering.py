"""K-means++ over token embeddings (or keys) and cluster-based retention.

Retention strategies built on a fitted clustering:
  * static: keep the top x% of tokens per cluster by saliency,
  * dynamic: per-cluster budgets from a softmax over mean cluster saliency,
  * coarse: static retention plus one mean token per cluster for the rest,
  * aggregate: replace each cluster entirely by its mean embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._common import round_half_up, stable_softmax
from .prng import ALGORITHM_ID, SplitMix64
from .saliency import SaliencyMap
from .sequence import Aggregated, CompressedSequence, Retained, retained_from
from .token_store import TokenBundle

CLUSTER_BASES = ("embeddings", "keys")
CLUSTER_METRICS = ("euclidean", "cosine")

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6

# slack for the monotonicity check; Lloyd is non-increasing up to rounding
_OBJECTIVE_SLACK = 1e-9


@dataclass(frozen=True)
class ClusterModel:
    """A fitted k-means++ clustering with its final objective."""

    k: int
    labels: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray
    seed: int
    basis: str
    objective: float
    n_iters: int
    objective_history: tuple[float, ...]

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        centroids = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        sizes = np.ascontiguousarray(np.asarray(self.sizes, dtype=np.int64))
        for arr in (labels, centroids, sizes):
            arr.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "sizes", sizes)
        if self.k < 1 or centroids.shape[0] != self.k or sizes.shape[0] != self.k:
            raise ValueError("centroids/sizes must have one row per cluster")
        if labels.min() < 0 or labels.max() >= self.k:
            raise ValueError("labels out of range [0, k)")
        if sizes.min() < 1:
            raise ValueError("every cluster must be non-empty")
        if int(sizes.sum()) != labels.shape[0]:
            raise ValueError("cluster sizes must sum to the point count")
        if self.basis not in CLUSTER_BASES:
            raise ValueError(f"basis must be one of {CLUSTER_BASES}")

    @property
    def n_points(self) -> int:
        return self.labels.shape[0]

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(N, k) squared Euclidean distances without materializing N*k*D."""
    p2 = np.einsum("nd,nd->n", points, points)
    c2 = np.einsum("kd,kd->k", centroids, centroids)
    d2 = p2[:, None] - 2.0 * (points @ centroids.T) + c2[None, :]
    return np.maximum(d2, 0.0)


def _wcss(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = points - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def _seed_centroids(points: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    """k-means++ seeding: first uniform, rest proportional to squared distance."""
    n = points.shape[0]
    chosen = [rng.rand_below(n)]
    d2 = np.einsum("nd,nd->n", points - points[chosen[0]], points - points[chosen[0]])
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            u = rng.uniform() * total
            idx = int(np.searchsorted(np.cumsum(d2), u, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = rng.rand_below(n)
        chosen.append(idx)
        step = points - points[idx]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", step, step))
    return points[np.asarray(chosen)].copy()


def _update_with_repair(
    points: np.ndarray, labels: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Means per cluster; empty clusters grab the point farthest from its mean.

    Relocating the farthest point (from a cluster that can spare one) onto the
    empty centroid strictly lowers the objective, which keeps Lloyd monotone.
    """
    n, d = points.shape
    sizes = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d), dtype=np.float64)
    np.add.at(sums, labels, points)
    centroids = np.where(sizes[:, None] > 0, sums / np.maximum(sizes, 1)[:, None], 0.0)

    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        labels = labels.copy()
        for e in empty:
            dist = np.einsum("nd,nd->n", points - centroids[labels], points - centroids[labels])
            dist[sizes[labels] < 2] = -np.inf
            p = int(np.argmax(dist))
            centroids[e] = points[p]
            sizes[labels[p]] -= 1
            labels[p] = e
            sizes[e] = 1
    return centroids, labels


def kmeans_pp(
    points,
    k: int,
    seed: int,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    *,
    basis: str = "embeddings",
) -> ClusterModel:
    """K-means++ seeding followed by Lloyd iterations.

    Stops when the largest centroid displacement drops below ``tol`` or after
    ``max_iters`` rounds. Fully deterministic for a fixed seed; the objective
    is checked to be non-increasing on every iteration.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")

    rng = SplitMix64(seed)
    centroids = _seed_centroids(pts, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    objective = float("inf")
    history: list[float] = []

    n_iters = 0
    for _ in range(max_iters):
        n_iters += 1
        new_labels = np.argmin(_squared_distances(pts, centroids), axis=1)
        new_centroids, new_labels = _update_with_repair(pts, new_labels, k)
        new_objective = _wcss(pts, new_labels, new_centroids)
        if new_objective > objective + _OBJECTIVE_SLACK * max(1.0, objective):
            raise RuntimeError(
                f"Lloyd objective increased: {objective} -> {new_objective}"
            )
        shift = float(np.sqrt(np.einsum("kd,kd->k", new_centroids - centroids,
                                        new_centroids - centroids)).max())
        centroids, labels, objective = new_centroids, new_labels, new_objective
        history.append(objective)
        if shift < tol or shift == 0.0:
            break

    return ClusterModel(
        k=k,
        labels=labels,
        centroids=centroids,
        sizes=np.bincount(labels, minlength=k),
        seed=seed,
        basis=basis,
        objective=objective,
        n_iters=n_iters,
        objective_history=tuple(history),
    )


def cluster_bundle(
    bundle: TokenBundle,
    k: int,
    seed: int,
    basis: str = "embeddings",
    metric: str = "euclidean",
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> ClusterModel:
    """Cluster a bundle's visual tokens by embeddings or vision-encoder keys."""
    if basis not in CLUSTER_BASES:
        raise ValueError(f"basis must be one of {CLUSTER_BASES}")
    if metric not in CLUSTER_METRICS:
        raise ValueError(f"metric must be one of {CLUSTER_METRICS}")
    if basis == "keys":
        if bundle.visual_keys is None:
            raise ValueError("bundle has no visual_keys; cannot cluster with basis='keys'")
        points = bundle.visual_keys
    else:
        points = bundle.visual_embeddings
    if metric == "cosine":
        norms = np.sqrt(np.einsum("nd,nd->n", points, points))
        points = points / np.where(norms > 0.0, norms, 1.0)[:, None]
    return kmeans_pp(points, k, seed, max_iters=max_iters, tol=tol, basis=basis)


def _check_over_bundle(bundle: TokenBundle, model: ClusterModel, saliency: SaliencyMap | None):
    if model.n_points != bundle.n_visual:
        raise ValueError(
            f"cluster model covers {model.n_points} tokens, bundle has {bundle.n_visual}"
        )
    if saliency is not None and len(saliency) != bundle.n_visual:
        raise ValueError(
            f"saliency length {len(saliency)} != bundle visual token count {bundle.n_visual}"
        )


def _top_by_score(members: np.ndarray, scores: np.ndarray, count: int) -> np.ndarray:
    """Highest-scoring ``count`` members; ties favor the lower index."""
    ranked = members[np.argsort(-scores[members], kind="stable")]
    return ranked[:count]


def _adjust_to_exact_count(
    selected: set[int], scores: np.ndarray, target: int
) -> set[int]:
    """Trim or pad a pooled selection by global saliency rank to hit a target."""
    n = scores.shape[0]
    if not 1 <= target <= n:
        raise ValueError(f"retain_count must be in [1, {n}], got {target}")
    global_order = np.argsort(-scores, kind="stable")
    if len(selected) > target:
        keep_rank = [i for i in global_order if i in selected][:target]
        return set(int(i) for i in keep_rank)
    if len(selected) < target:
        out = set(selected)
        for i in global_order:
            if len(out) == target:
                break
            out.add(int(i))
        return out
    return set(selected)


def variant1_static(
    bundle: TokenBundle,
    model: ClusterModel,
    saliency: SaliencyMap,
    x_percent: float,
    retain_count: int | None = None,
) -> CompressedSequence:
    """Keep the top x% of each cluster by saliency (at least one per cluster).

    ``retain_count`` optionally trims/pads the pooled selection by global
    saliency rank so benchmarks can hit an exact budget.
    """
    _check_over_bundle(bundle, model, saliency)
    if not 0.0 < x_percent <= 100.0:
        raise ValueError(f"x_percent must be in (0, 100], got {x_percent}")
    scores = saliency.scores
    selected: set[int] = set()
    for c in range(model.k):
        members = model.members(c)
        count = max(1, round_half_up(x_percent * members.shape[0] / 100.0))
        selected.update(int(i) for i in _top_by_score(members, scores, count))
    if retain_count is not None:
        selected = _adjust_to_exact_count(selected, scores, retain_count)
    meta = {
        "strategy": "cluster-static",
        "k": model.k,
        "x_percent": x_percent,
        "cluster_seed": model.seed,
        "basis": model.basis,
    }
    return retained_from(bundle.visual_embeddings, np.fromiter(selected, dtype=np.int64), meta)


def variant2_dynamic(
    bundle: TokenBundle,
    model: ClusterModel,
    saliency: SaliencyMap,
    lam: float,
    retain_count: int | None = None,
) -> CompressedSequence:
    """Per-cluster budgets proportional to softmax-normalized mean saliency.

    Cluster i keeps the top max(1, round(min(1, lam*w_i) * |c_i|)) tokens,
    where w is the softmax of mean member saliency across clusters.
    """
    _check_over_bundle(bundle, model, saliency)
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    scores = saliency.scores
    means = np.array([scores[model.members(c)].mean() for c in range(model.k)])
    weights = stable_softmax(means, axis=0)
    selected: set[int] = set()
    for c in range(model.k):
        members = model.members(c)
        frac = min(1.0, lam * float(weights[c]))
        count = max(1, round_half_up(frac * members.shape[0]))
        selected.update(int(i) for i in _top_by_score(members, scores, count))
    if retain_count is not None:
        selected = _adjust_to_exact_count(selected, scores, retain_count)
    meta = {
        "strategy": "cluster-dynamic",
        "k": model.k,
        "lambda": lam,
        "cluster_seed": model.seed,
        "basis": model.basis,
    }
    return retained_from(bundle.visual_embeddings, np.fromiter(selected, dtype=np.int64), meta)


def _mean_position(bundle: TokenBundle, members: np.ndarray) -> tuple[float, float]:
    rows = members // bundle.grid_cols
    cols = members % bundle.grid_cols
    return float(rows.mean()), float(cols.mean())


def variant3_coarse(
    bundle: TokenBundle,
    model: ClusterModel,
    saliency: SaliencyMap,
    x_percent: float,
) -> CompressedSequence:
    """Static top-x% retention plus one mean token per cluster for the rest.

    Retained tokens come first in original order, followed by the aggregates
    in cluster-id order. A cluster whose members were all retained contributes
    no aggregate. Every input token lands in exactly one provenance record.
    """
    _check_over_bundle(bundle, model, saliency)
    if not 0.0 < x_percent < 100.0:
        raise ValueError(f"x_percent must be in (0, 100), got {x_percent}")
    scores = saliency.scores
    retained: set[int] = set()
    leftovers: list[tuple[int, np.ndarray]] = []
    for c in range(model.k):
        members = model.members(c)
        count = max(1, round_half_up(x_percent * members.shape[0] / 100.0))
        keep = set(int(i) for i in _top_by_score(members, scores, count))
        retained.update(keep)
        rest = np.array(sorted(set(int(i) for i in members) - keep), dtype=np.int64)
        if rest.size:
            leftovers.append((c, rest))

    kept = np.sort(np.fromiter(retained, dtype=np.int64))
    rows = [bundle.visual_embeddings[kept]]
    provenance: list[Retained | Aggregated] = [Retained(int(i)) for i in kept]
    for _, rest in leftovers:
        rows.append(bundle.visual_embeddings[rest].mean(axis=0, keepdims=True))
        provenance.append(Aggregated(tuple(int(i) for i in rest), _mean_position(bundle, rest)))

    meta = {
        "strategy": "cluster-coarse",
        "k": model.k,
        "x_percent": x_percent,
        "cluster_seed": model.seed,
        "basis": model.basis,
    }
    return CompressedSequence(
        embeddings=np.vstack(rows),
        provenance=tuple(provenance),
        order_policy="original",
        meta=meta,
    )


def cluster_aggregate(
    bundle: TokenBundle,
    model: ClusterModel,
    seed: int,
    order_policy: str = "random",
) -> CompressedSequence:
    """Replace each cluster by the mean of its member embeddings.

    Output order is a seeded random permutation, or raster order of the
    rounded mean positions (ties by cluster id) with ``mean_position``.
    """
    _check_over_bundle(bundle, model, None)
    if order_policy not in ("random", "mean_position"):
        raise ValueError(f"order_policy must be 'random' or 'mean_position', got {order_policy!r}")

    member_lists = [model.members(c) for c in range(model.k)]
    means = np.vstack(
        [bundle.visual_embeddings[members].mean(axis=0) for members in member_lists]
    )
    positions = [_mean_position(bundle, members) for members in member_lists]

    if order_policy == "random":
        order = SplitMix64(seed).shuffled(model.k)
    else:
        order = sorted(
            range(model.k),
            key=lambda c: (round_half_up(positions[c][0]), round_half_up(positions[c][1]), c),
        )

    provenance = tuple(
        Aggregated(tuple(int(i) for i in member_lists[c]), positions[c]) for c in order
    )
    meta = {
        "strategy": "cluster-aggregate",
        "k": model.k,
        "seed": seed,
        "rng": ALGORITHM_ID,
        "cluster_seed": model.seed,
        "basis": model.basis,
        "order_policy": order_policy,
    }
    return CompressedSequence(
        embeddings=means[np.asarray(order)],
        provenance=provenance,
        order_policy=order_policy,
        meta=meta,
    )


def cluster_saliency(
    bundle: TokenBundle,
    saliency: SaliencyMap,
    k: int,
    x_percent: float,
    seed: int,
    basis: str = "embeddings",
    metric: str = "euclidean",
    retain_count: int | None = None,
) -> CompressedSequence:
    """Cluster, then keep the top x% of each cluster by saliency."""
    model = cluster_bundle(bundle, k, seed, basis=basis, metric=metric)
    return variant1_static(bundle, model, saliency, x_percent, retain_count=retain_count)
