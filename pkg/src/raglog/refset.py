"""Reference-set construction: random sampling, k-means with elbow-selected k,
and a 2D principal-component projection for cluster maps.

Two strategies populate the normal-only store. Random sampling draws n
entries uniformly without replacement. Clustered selection embeds all
candidates, clusters them with k-means (k fixed, or elbow-selected over a
range), then samples a fixed number per cluster so rare normal modes keep
representation the uniform draw can miss.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import Embedder
from .ingest import GroundTruth, LogEntry
from .store import DimMismatchError, VectorRecord, VectorStore

log = logging.getLogger(__name__)

DEFAULT_CANDIDATE_CAP = 200_000


class TooFewPointsError(ValueError):
    """Fewer input points than requested clusters."""


class EmptyInputError(ValueError):
    """Reference-set build received no candidate entries."""


@dataclass
class ClusterModel:
    """Fitted k-means state: centroids, assignments, and per-iteration WCSS."""

    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    wcss_history: list[float]
    seed: int
    iterations_run: int
    converged: bool


@dataclass(frozen=True)
class RandomPlan:
    n: int
    seed: int = 0


@dataclass(frozen=True)
class ClusteredPlan:
    per_cluster: int
    k: int | None = None  # fixed k; None selects k by elbow over [k_min, k_max]
    k_min: int = 2
    k_max: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.per_cluster < 1:
            raise ValueError(f"per_cluster must be >= 1, got {self.per_cluster}")
        if self.k is None and not 2 <= self.k_min <= self.k_max:
            raise ValueError(f"need 2 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")


ReferencePlan = RandomPlan | ClusteredPlan


@dataclass
class BuildReport:
    """Everything needed to audit or regenerate a reference-store build."""

    strategy: str
    seed: int
    embedder: str
    requested: int
    built: int
    shortfall: bool
    k: int | None = None
    per_cluster_counts: list[int] = field(default_factory=list)
    cluster_sizes: list[int] = field(default_factory=list)
    elbow_curve: list[tuple[int, float]] = field(default_factory=list)
    candidate_pool: int = 0
    pool_subsampled: bool = False
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "embedder": self.embedder,
            "requested": self.requested,
            "built": self.built,
            "shortfall": self.shortfall,
            "k": self.k,
            "per_cluster_counts": self.per_cluster_counts,
            "cluster_sizes": self.cluster_sizes,
            "elbow_curve": [[k, w] for k, w in self.elbow_curve],
            "candidate_pool": self.candidate_pool,
            "pool_subsampled": self.pool_subsampled,
            "config_digest": self.config_digest,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ProjectedPoint:
    x: float
    y: float
    cluster: int


@dataclass
class ProjectionResult:
    points: list[ProjectedPoint]
    degenerate: bool


def _as_matrix(vectors) -> np.ndarray:
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.size == 0:
        raise EmptyInputError("no vectors given")
    if mat.ndim != 2:
        raise DimMismatchError(f"expected a 2D array of vectors, got shape {mat.shape}")
    return mat


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 via the expansion; clamp tiny negatives from cancellation.
    d = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centroids[0:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # All remaining points coincide with a centroid; any choice works.
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        closest = np.minimum(closest, _sq_dists(points, centroids[j : j + 1])[:, 0])
    return centroids


def kmeans(
    vectors,
    k: int,
    seed: int,
    max_iter: int = 100,
    rel_tol: float = 1e-4,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding, deterministic in (vectors, k, seed).

    Iterations stop when the relative WCSS improvement drops below ``rel_tol``
    or after ``max_iter`` rounds. A cluster that loses all members is reseeded
    to the point currently farthest from its assigned centroid.
    """
    points = _as_matrix(vectors)
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise TooFewPointsError(f"{n} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    wcss_history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    converged = False
    prev = np.inf
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        dists = _sq_dists(points, centroids)
        assignments = np.argmin(dists, axis=1)  # argmin takes the lowest index on ties
        w = float(np.sum((points - centroids[assignments]) ** 2))
        wcss_history.append(w)
        if prev != np.inf and prev - w <= rel_tol * prev:
            converged = True
            break
        prev = w
        new_centroids = centroids.copy()
        reseed_order: np.ndarray | None = None
        reseed_used = 0
        for j in range(k):
            members = assignments == j
            if members.any():
                new_centroids[j] = points[members].mean(axis=0)
            else:
                # Reseed to the point farthest from its assigned centroid;
                # multiple empty clusters take successive farthest points.
                if reseed_order is None:
                    reseed_order = np.argsort(-dists[np.arange(n), assignments], kind="stable")
                new_centroids[j] = points[reseed_order[reseed_used]]
                reseed_used += 1
        centroids = new_centroids
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        wcss_history=wcss_history,
        seed=seed,
        iterations_run=iterations,
        converged=converged,
    )


def wcss(vectors, model: ClusterModel) -> float:
    """Sum of squared Euclidean distances from each point to its assigned centroid."""
    points = _as_matrix(vectors)
    if points.shape[0] != model.assignments.shape[0]:
        raise DimMismatchError(
            f"{points.shape[0]} vectors vs {model.assignments.shape[0]} assignments"
        )
    if points.shape[1] != model.centroids.shape[1]:
        raise DimMismatchError(
            f"vector dim {points.shape[1]} vs centroid dim {model.centroids.shape[1]}"
        )
    return float(np.sum((points - model.centroids[model.assignments]) ** 2))


def elbow_select_k(
    vectors,
    k_min: int = 2,
    k_max: int = 10,
    seed: int = 0,
) -> tuple[int, list[tuple[int, float]]]:
    """Pick k by the elbow of the WCSS-vs-k curve.

    WCSS is computed for k = 1..k_max (each run freshly seeded with ``seed``);
    the chosen k maximizes the discrete second difference
    ``wcss(k-1) - 2*wcss(k) + wcss(k+1)`` over [k_min, k_max - 1], ties going
    to the smallest k. Returns the chosen k and the full curve.
    """
    points = _as_matrix(vectors)
    if not 2 <= k_min <= k_max - 1:
        raise ValueError(f"need 2 <= k_min <= k_max - 1, got [{k_min}, {k_max}]")
    if points.shape[0] < k_max:
        raise TooFewPointsError(f"{points.shape[0]} points cannot support k_max={k_max}")
    curve: list[tuple[int, float]] = []
    for k in range(1, k_max + 1):
        model = kmeans(points, k, seed)
        curve.append((k, model.wcss_history[-1]))
    return elbow_from_curve(curve, k_min, k_max), curve


def elbow_from_curve(curve: list[tuple[int, float]], k_min: int = 2, k_max: int | None = None) -> int:
    """Second-difference elbow rule applied to an existing (k, wcss) curve."""
    w = dict(curve)
    if k_max is None:
        k_max = max(w)
    if not 2 <= k_min <= k_max - 1:
        raise ValueError(f"need 2 <= k_min <= k_max - 1, got [{k_min}, {k_max}]")
    missing = [k for k in range(k_min - 1, k_max + 1) if k not in w]
    if missing:
        raise ValueError(f"curve is missing wcss values for k={missing}")
    best_k = k_min
    best_score = -np.inf
    for k in range(k_min, k_max):
        score = w[k - 1] - 2.0 * w[k] + w[k + 1]
        if score > best_score:
            best_score = score
            best_k = k
    return best_k


def project_2d(vectors, model: ClusterModel, seed: int = 0) -> ProjectionResult:
    """Project vectors onto their top-2 principal components for cluster maps.

    Components are found by power iteration with deflation (seeded start,
    up to 200 iterations or 1e-7 convergence). Rank-deficient input zeroes the
    missing component(s) and sets the degenerate flag; the output is
    plot-ready data, not an image.
    """
    points = _as_matrix(vectors)
    if points.shape[0] < 3:
        raise ValueError(f"need at least 3 vectors to project, got {points.shape[0]}")
    centered = points - points.mean(axis=0)
    rng = np.random.default_rng(seed)
    coords = np.zeros((points.shape[0], 2), dtype=np.float64)
    degenerate = False
    residual = centered
    for comp in range(2):
        direction, ok = _power_component(residual, rng)
        if not ok:
            degenerate = True
            break
        proj = residual @ direction
        coords[:, comp] = proj
        residual = residual - np.outer(proj, direction)
    pts = [
        ProjectedPoint(x=float(coords[i, 0]), y=float(coords[i, 1]), cluster=int(model.assignments[i]))
        for i in range(points.shape[0])
    ]
    return ProjectionResult(points=pts, degenerate=degenerate)


def _power_component(data: np.ndarray, rng: np.random.Generator, max_iter: int = 200, tol: float = 1e-7):
    """Leading right singular direction of ``data`` by power iteration on data^T data."""
    d = data.shape[1]
    total_var = float(np.sum(data * data))
    if total_var <= 1e-12:
        return np.zeros(d), False
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = data.T @ (data @ v)
        norm = np.linalg.norm(w)
        if norm <= 1e-12 * total_var:
            return np.zeros(d), False
        w /= norm
        if np.dot(w, v) < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    return v, True


def _require_normals(entries: list[LogEntry]) -> None:
    for e in entries:
        if e.label is not GroundTruth.NORMAL:
            raise ValueError(f"reference candidates must all be normal; entry {e.id} is {e.label.value}")


def build_reference_store(
    train_normals: list[LogEntry],
    plan: ReferencePlan,
    embedder: Embedder,
    store_path: str | Path | None = None,
    *,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
    config_digest: str = "",
) -> tuple[VectorStore, BuildReport]:
    """Build the normal-only vector store according to the reference plan.

    Records receive fresh sequential ids (0..built-1). When ``store_path`` is
    given the store is also saved there. Deterministic in (entries, plan).
    """
    if not train_normals:
        raise EmptyInputError("no training normals to build a reference store from")
    _require_normals(train_normals)
    if isinstance(plan, RandomPlan):
        selected, report = _select_random(train_normals, plan)
    elif isinstance(plan, ClusteredPlan):
        selected, report = _select_clustered(train_normals, plan, embedder, candidate_cap)
    else:
        raise TypeError(f"unknown reference plan: {plan!r}")
    report.embedder = embedder.descriptor.name
    report.config_digest = config_digest
    store = VectorStore(
        dim=embedder.descriptor.dim,
        normalized=embedder.descriptor.normalized,
        embedder_name=embedder.descriptor.name,
        extras={"config_digest": config_digest, "seed": plan.seed} if config_digest else {"seed": plan.seed},
    )
    for fresh_id, entry in enumerate(selected):
        store.insert(VectorRecord(id=fresh_id, vector=embedder.embed_text(entry.message), text=entry.message))
    report.built = store.count
    if store_path is not None:
        store.save(store_path)
    return store, report


def _select_random(entries: list[LogEntry], plan: RandomPlan) -> tuple[list[LogEntry], BuildReport]:
    if plan.n < 1:
        raise ValueError(f"random plan needs n >= 1, got {plan.n}")
    shortfall = plan.n > len(entries)
    if shortfall:
        log.warning("random plan wants %d entries but only %d candidates exist", plan.n, len(entries))
        selected = list(entries)
    else:
        selected = random.Random(plan.seed).sample(entries, plan.n)
    report = BuildReport(
        strategy="random",
        seed=plan.seed,
        embedder="",
        requested=plan.n,
        built=len(selected),
        shortfall=shortfall,
        candidate_pool=len(entries),
    )
    return selected, report


def _select_clustered(
    entries: list[LogEntry],
    plan: ClusteredPlan,
    embedder: Embedder,
    candidate_cap: int,
) -> tuple[list[LogEntry], BuildReport]:
    pool = entries
    subsampled = False
    if len(pool) > candidate_cap:
        pool = random.Random(plan.seed).sample(pool, candidate_cap)
        subsampled = True
        log.info("clustering pool capped at %d of %d candidates", candidate_cap, len(entries))
    vectors = np.vstack([embedder.embed_text(e.message) for e in pool]).astype(np.float64)
    elbow_curve: list[tuple[int, float]] = []
    if plan.k is not None:
        k = plan.k
    else:
        k, elbow_curve = elbow_select_k(vectors, plan.k_min, plan.k_max, plan.seed)
    model = kmeans(vectors, k, plan.seed)
    rng = random.Random(plan.seed)
    selected: list[LogEntry] = []
    per_cluster_counts: list[int] = []
    cluster_sizes: list[int] = []
    shortfall = False
    for j in range(k):
        members = [pool[i] for i in np.flatnonzero(model.assignments == j)]
        cluster_sizes.append(len(members))
        if len(members) <= plan.per_cluster:
            take = list(members)
            if len(members) < plan.per_cluster:
                shortfall = True
        else:
            take = rng.sample(members, plan.per_cluster)
        per_cluster_counts.append(len(take))
        selected.extend(take)
    report = BuildReport(
        strategy="clustered",
        seed=plan.seed,
        embedder="",
        requested=k * plan.per_cluster,
        built=len(selected),
        shortfall=shortfall,
        k=k,
        per_cluster_counts=per_cluster_counts,
        cluster_sizes=cluster_sizes,
        elbow_curve=elbow_curve,
        candidate_pool=len(pool),
        pool_subsampled=subsampled,
    )
    return selected, report


def write_projection_csv(path: str | Path, projection: ProjectionResult) -> None:
    """Plot-ready cluster map: CSV with header ``x,y,cluster``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,cluster\n")
        for p in projection.points:
            fh.write(f"{p.x!r},{p.y!r},{p.cluster}\n")


def write_elbow_csv(path: str | Path, curve: list[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,wcss\n")
        for k, w in curve:
            fh.write(f"{k},{w!r}\n")
