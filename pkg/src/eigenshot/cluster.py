"""Clustering in feature space: k-means, anchor-constrained k-means, and
cluster-quality scoring.

The anchor-constrained variant runs Lloyd iterations in which the first m
centers (the anchors) are frozen for the whole run; only the K free centers
are re-estimated. Plain :func:`kmeans` is kept as an independent Lloyd loop so
the m=0 reduction of :func:`ackmeans` can be checked against it; both share
the same distance/update kernels and the same seeded initialization, which
makes the two trajectories comparable step for step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .store import FeatureSet, LabelSet

DEFAULT_T_MAX = 100

_INIT_MODES = ("random-pick", "kmeanspp")


@dataclass
class ClusterModel:
    """Centers plus a nearest-center assignment over named samples.

    The first ``num_anchors`` center rows are frozen anchors, bit-identical to
    the anchors that were passed in; the remaining ``num_free`` rows are the
    re-estimated free centers.
    """

    centers: np.ndarray
    num_anchors: int
    num_free: int
    assignment: dict[str, int]
    seed: int
    iterations_run: int
    # kept for diagnostics/tests, not serialized
    sse_per_iteration: list[float] = field(default_factory=list, repr=False)

    def assignment_array(self, ids: list[str]) -> np.ndarray:
        return np.array([self.assignment[sid] for sid in ids], dtype=np.int64)


@dataclass
class ClusterQuality:
    bcubed_precision: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.bcubed_precision <= 1.0:
            raise ValueError(f"bcubed_precision {self.bcubed_precision} outside [0,1]")


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (N, n_centers). Exact subtract-then-square
    form so both Lloyd loops see identical values."""
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _dist_to_own_center(
    points: np.ndarray, centers: np.ndarray, assign: np.ndarray
) -> np.ndarray:
    diff = points - centers[assign]
    return np.einsum("nd,nd->n", diff, diff)


def _eligible_init_pool(points: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Indices eligible to seed free centers: for each anchor, the sample(s)
    closest to it are excluded so free centers start outside anchor-covered
    spots. Falls back to all samples when too few remain."""
    n = points.shape[0]
    eligible = np.ones(n, dtype=bool)
    if anchors.shape[0]:
        d2 = _sq_dists(points, anchors)
        for j in range(anchors.shape[0]):
            col = d2[:, j]
            eligible[col == col.min()] = False
    return np.flatnonzero(eligible)


def _initial_free_centers(
    points: np.ndarray,
    anchors: np.ndarray,
    num_free: int,
    init: str,
    rng: np.random.Generator,
) -> np.ndarray:
    if init not in _INIT_MODES:
        raise ValueError(f"init must be one of {_INIT_MODES}, got {init!r}")
    if num_free == 0:
        return np.empty((0, points.shape[1]), dtype=np.float64)
    pool = _eligible_init_pool(points, anchors)
    if pool.size < num_free:
        pool = np.arange(points.shape[0])

    if init == "random-pick":
        picked = rng.choice(pool, size=num_free, replace=False)
        return points[picked].copy()

    # kmeans++-style: D^2-weighted picks relative to anchors plus picks so far
    chosen: list[int] = []
    pool_list = pool.tolist()
    for _ in range(num_free):
        ref = np.vstack([anchors, points[chosen]]) if chosen else anchors
        if ref.shape[0] == 0:
            pick = int(rng.choice(pool_list))
        else:
            d2 = _sq_dists(points[pool_list], ref).min(axis=1)
            total = d2.sum()
            if total <= 0.0:
                pick = int(rng.choice(pool_list))
            else:
                pick = int(rng.choice(pool_list, p=d2 / total))
        chosen.append(pick)
        pool_list.remove(pick)
        if not pool_list:
            pool_list = [i for i in range(points.shape[0]) if i not in chosen]
    return points[chosen].copy()


def _update_free_centers(
    points: np.ndarray,
    centers: np.ndarray,
    assign: np.ndarray,
    num_anchors: int,
) -> None:
    """Set each free center to the mean of its members; empty free clusters are
    re-seeded at the sample farthest from its own assigned center. Mutates
    ``centers`` rows >= num_anchors only."""
    total = centers.shape[0]
    empty: list[int] = []
    for j in range(num_anchors, total):
        members = assign == j
        count = int(members.sum())
        if count == 0:
            empty.append(j)
        else:
            # fixed-order reduction: row order is sample order
            centers[j] = points[members].sum(axis=0) / count
    if not empty:
        return
    dist_own = _dist_to_own_center(points, centers, assign)
    used: set[int] = set()
    for j in empty:
        masked = dist_own.copy()
        if used:
            masked[list(used)] = -np.inf
        far = int(np.argmax(masked))
        centers[j] = points[far]
        used.add(far)


def _free_sse(
    points: np.ndarray, centers: np.ndarray, assign: np.ndarray, num_anchors: int
) -> float:
    mask = assign >= num_anchors
    if not mask.any():
        return 0.0
    return float(_dist_to_own_center(points[mask], centers, assign[mask]).sum())


def _total_sse(points: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> float:
    return float(_dist_to_own_center(points, centers, assign).sum())


def kmeans(
    fs: FeatureSet,
    num_clusters: int,
    init: str = "random-pick",
    t_max: int = DEFAULT_T_MAX,
    seed: int = 0,
) -> ClusterModel:
    """Seeded Lloyd k-means. Deterministic given (input, seed); stops early
    when no assignment changes."""
    if fs.n == 0:
        raise ValueError("cannot cluster an empty feature set")
    if not 1 <= num_clusters <= fs.n:
        raise ValueError(f"num_clusters must be in [1, {fs.n}], got {num_clusters}")
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")

    points = fs.vectors
    rng = np.random.default_rng(seed)
    no_anchors = np.empty((0, fs.d), dtype=np.float64)
    centers = _initial_free_centers(points, no_anchors, num_clusters, init, rng)

    assign = np.argmin(_sq_dists(points, centers), axis=1)
    iterations = 0
    sse_trace: list[float] = []
    for _ in range(t_max):
        _update_free_centers(points, centers, assign, num_anchors=0)
        new_assign = np.argmin(_sq_dists(points, centers), axis=1)
        iterations += 1
        sse_trace.append(_total_sse(points, centers, new_assign))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    return ClusterModel(
        centers=centers,
        num_anchors=0,
        num_free=num_clusters,
        assignment={sid: int(a) for sid, a in zip(fs.ids, assign)},
        seed=seed,
        iterations_run=iterations,
        sse_per_iteration=sse_trace,
    )


def ackmeans(
    fs: FeatureSet,
    anchors: np.ndarray | list,
    num_free: int,
    t_max: int = DEFAULT_T_MAX,
    seed: int = 0,
    init: str = "random-pick",
) -> ClusterModel:
    """Anchor-constrained k-means: the m anchor centers never move; the K free
    centers follow Lloyd updates. Assignment is nearest center over all m+K,
    ties resolved to the lowest center index."""
    if fs.n == 0:
        raise ValueError("cannot cluster an empty feature set")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, fs.d)
    if not np.all(np.isfinite(anchors)):
        raise ValueError("anchors must be finite")
    m = anchors.shape[0]
    if num_free < 0:
        raise ValueError(f"num_free must be >= 0, got {num_free}")
    if m + num_free < 1:
        raise ValueError("need at least one center (m + K >= 1)")
    if num_free > fs.n:
        raise ValueError(f"num_free {num_free} exceeds sample count {fs.n}")
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")

    points = fs.vectors
    rng = np.random.default_rng(seed)
    free = _initial_free_centers(points, anchors, num_free, init, rng)
    centers = np.vstack([anchors, free]) if m else free

    assign = np.argmin(_sq_dists(points, centers), axis=1)
    iterations = 0
    sse_trace: list[float] = []
    for _ in range(t_max):
        if num_free:
            before = _free_sse(points, centers, assign, m)
            _update_free_centers(points, centers, assign, num_anchors=m)
            after = _free_sse(points, centers, assign, m)
            # mean update at fixed assignment can only shrink free-cluster SSE
            assert after <= before + 1e-9 * max(1.0, before)
        new_assign = np.argmin(_sq_dists(points, centers), axis=1)
        iterations += 1
        sse_trace.append(_total_sse(points, centers, new_assign))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    model = ClusterModel(
        centers=centers,
        num_anchors=m,
        num_free=num_free,
        assignment={sid: int(a) for sid, a in zip(fs.ids, assign)},
        seed=seed,
        iterations_run=iterations,
        sse_per_iteration=sse_trace,
    )
    if m and not np.array_equal(model.centers[:m], anchors):
        raise AssertionError("anchor centers moved during clustering")
    return model


def bcubed_precision(
    assignment: Mapping[str, int], labels: LabelSet
) -> ClusterQuality:
    """Mean per-sample cluster purity over labeled samples: for each labeled
    sample, the fraction of labeled samples in its cluster (itself included)
    that share its label."""
    labeled = list(labels.labels)
    if not labeled:
        raise ValueError("bcubed_precision needs at least one labeled sample")
    missing = [sid for sid in labeled if sid not in assignment]
    if missing:
        raise ValueError(f"assignment does not cover labeled ids: {missing[:5]}")

    cluster_sizes: dict[int, int] = {}
    cluster_label_counts: dict[tuple[int, int], int] = {}
    for sid in labeled:
        c = assignment[sid]
        lab = labels[sid]
        cluster_sizes[c] = cluster_sizes.get(c, 0) + 1
        cluster_label_counts[(c, lab)] = cluster_label_counts.get((c, lab), 0) + 1

    total = 0.0
    for sid in labeled:
        c = assignment[sid]
        lab = labels[sid]
        total += cluster_label_counts[(c, lab)] / cluster_sizes[c]
    return ClusterQuality(total / len(labeled))


def pca_project(fs: FeatureSet, out_dims: int) -> FeatureSet:
    """Project onto the top principal components after mean-centering.

    Deterministic: each component is sign-fixed so its largest-magnitude
    coordinate is positive. Components beyond the data rank contribute exact
    zero coordinates.
    """
    if not 1 <= out_dims <= fs.d:
        raise ValueError(f"out_dims must be in [1, {fs.d}], got {out_dims}")
    centered = fs.vectors - fs.vectors.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    rank = vt.shape[0]
    take = min(out_dims, rank)
    components = vt[:take]
    flip = np.sign(components[np.arange(take), np.abs(components).argmax(axis=1)])
    flip[flip == 0] = 1.0
    components = components * flip[:, None]
    projected = centered @ components.T
    if take < out_dims:
        pad = np.zeros((fs.n, out_dims - take), dtype=np.float64)
        projected = np.hstack([projected, pad])
    return FeatureSet(list(fs.ids), projected)


def l2_normalize(fs: FeatureSet) -> FeatureSet:
    """Unit-normalize every row; zero rows are left as zeros."""
    norms = np.linalg.norm(fs.vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return FeatureSet(list(fs.ids), fs.vectors / norms)


def save_cluster_model(model: ClusterModel, path: str | Path, **extra) -> None:
    doc = {
        "m": model.num_anchors,
        "K": model.num_free,
        "centers": [[float(v) for v in row] for row in model.centers],
        "assignment": model.assignment,
        "seed": model.seed,
        "iterations_run": model.iterations_run,
    }
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_cluster_model(path: str | Path) -> ClusterModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ClusterModel(
        centers=np.array(doc["centers"], dtype=np.float64),
        num_anchors=int(doc["m"]),
        num_free=int(doc["K"]),
        assignment={k: int(v) for k, v in doc["assignment"].items()},
        seed=int(doc["seed"]),
        iterations_run=int(doc["iterations_run"]),
    )
