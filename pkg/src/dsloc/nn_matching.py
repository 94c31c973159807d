"""Nearest-neighbour retrieval, dynamic NN selection and query-feature pruning."""

from __future__ import annotations

import heapq
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    theta: float = 0.7
    beta: float = 0.7
    max_pool: int = 50

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.max_pool < 2:
            raise ValueError(f"max_pool must be at least 2, got {self.max_pool}")


@dataclass(frozen=True)
class Neighbor:
    ref: int  # row in the index
    parent_image: str
    feature_id: int
    distance: float


@dataclass
class NeighborList:
    query_feature: int
    neighbors: list[Neighbor] = field(default_factory=list)

    def __len__(self):
        return len(self.neighbors)

    def __getitem__(self, i):
        return self.neighbors[i]

    @property
    def distances(self) -> np.ndarray:
        return np.array([nb.distance for nb in self.neighbors])


def _ratio(num: float, den: float) -> float:
    # 0/0 counts as maximally indistinct
    if den == 0:
        return 1.0 if num == 0 else float("inf")
    return num / den


class DescriptorIndex:
    """Euclidean kNN over reference descriptors.

    ``backend="exact"`` scans every descriptor. ``backend="kmeans"`` builds a
    hierarchical k-means tree searched best-bin-first; candidates it visits are
    re-ranked exactly, so it only ever misses neighbours, never misorders them.
    Ties in distance are broken by (parent_image, feature_id).
    """

    def __init__(
        self,
        descriptors,
        parent_images: Sequence[str],
        feature_ids: Sequence[int] | None = None,
        *,
        backend: str = "exact",
        branching: int = 16,
        leaf_size: int | None = None,
        checks: int = 256,
        kmeans_iter: int = 10,
        seed: int = 0,
    ):
        X = np.asarray(descriptors, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("reference set is empty")
        if not np.all(np.isfinite(X)):
            raise ValueError("reference descriptors must be finite")
        if len(parent_images) != X.shape[0]:
            raise ValueError("one parent image per descriptor required")
        if feature_ids is None:
            feature_ids = np.zeros(X.shape[0], dtype=np.int64)
        if len(feature_ids) != X.shape[0]:
            raise ValueError("one feature id per descriptor required")
        if backend not in ("exact", "kmeans"):
            raise ValueError(f"unknown backend {backend!r}")
        if branching < 2:
            raise ValueError("branching factor must be at least 2")
        self.X = X
        self.parent_images = np.asarray(parent_images, dtype=str)
        self.feature_ids = np.asarray(feature_ids, dtype=np.int64)
        self.backend = backend
        self.branching = branching
        self.leaf_size = leaf_size or branching
        self.checks = checks
        order = np.lexsort((self.feature_ids, self.parent_images))
        self._tiebreak = np.empty(len(order), dtype=np.int64)
        self._tiebreak[order] = np.arange(len(order))
        self._tree = None
        if backend == "kmeans":
            self._tree = _KMeansTree.build(X, branching, self.leaf_size, kmeans_iter, seed)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def _candidates(self, q: np.ndarray, m: int) -> np.ndarray:
        if self._tree is None:
            return np.arange(len(self))
        return self._tree.search(q, max(self.checks, m))

    def knn(self, q, m: int, query_feature: int = 0) -> NeighborList:
        if m < 1:
            raise ValueError("m must be at least 1")
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, index holds {self.dim}-d descriptors")
        idx = self._candidates(q, m)
        diff = self.X[idx] - q
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        order = np.lexsort((self._tiebreak[idx], dist))[:m]
        return NeighborList(
            query_feature,
            [
                Neighbor(
                    int(idx[j]),
                    str(self.parent_images[idx[j]]),
                    int(self.feature_ids[idx[j]]),
                    float(dist[j]),
                )
                for j in order
            ],
        )

    def save(self, path) -> None:
        arrays = dict(
            X=self.X,
            parent_images=self.parent_images,
            feature_ids=self.feature_ids,
            params=np.array([self.branching, self.leaf_size, self.checks]),
            backend=np.array(self.backend),
        )
        if self._tree is not None:
            arrays.update({f"tree_{k}": v for k, v in self._tree.arrays().items()})
        np.savez(Path(path), **arrays)

    @classmethod
    def load(cls, path) -> "DescriptorIndex":
        with np.load(Path(path), allow_pickle=False) as data:
            branching, leaf_size, checks = (int(v) for v in data["params"])
            index = cls(
                data["X"],
                data["parent_images"],
                data["feature_ids"],
                backend="exact",
                branching=branching,
                leaf_size=leaf_size,
                checks=checks,
            )
            if str(data["backend"]) == "kmeans":
                index.backend = "kmeans"
                index._tree = _KMeansTree.from_arrays(
                    {k[5:]: data[k] for k in data.files if k.startswith("tree_")}
                )
        return index


def build_index(descriptors, parent_images, feature_ids=None, **config) -> DescriptorIndex:
    return DescriptorIndex(descriptors, parent_images, feature_ids, **config)


def knn(index: DescriptorIndex, q, m: int, query_feature: int = 0) -> NeighborList:
    return index.knn(q, m, query_feature)


class _KMeansTree:
    """Flat-array hierarchical k-means tree.

    Node i has centre ``centers[i]``; inner nodes own children
    ``child_start[i] : child_start[i] + child_count[i]`` and leaves own
    ``points[point_start[i] : point_start[i] + point_count[i]]``.
    """

    def __init__(self, centers, child_start, child_count, point_start, point_count, points):
        self.centers = centers
        self.child_start = child_start
        self.child_count = child_count
        self.point_start = point_start
        self.point_count = point_count
        self.points = points

    @classmethod
    def build(cls, X, branching, leaf_size, iters, seed):
        rng = np.random.default_rng(seed)
        centers, child_start, child_count = [X.mean(axis=0)], [0], [0]
        point_start, point_count, points = [0], [0], []
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, members = stack.pop()
            if len(members) <= leaf_size:
                point_start[node] = len(points)
                point_count[node] = len(members)
                points.extend(members.tolist())
                continue
            k = min(branching, len(members))
            init = X[rng.choice(members, size=k, replace=False)]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # empty clusters are dropped below
                _, labels = kmeans2(X[members], init, iter=iters, minit="matrix")
            groups = [members[labels == c] for c in range(k)]
            groups = [g for g in groups if len(g)]
            if len(groups) < 2:
                # all members coincide (or k-means collapsed): split evenly
                groups = np.array_split(members, k)
            child_start[node] = len(centers)
            child_count[node] = len(groups)
            for g in groups:
                centers.append(X[g].mean(axis=0))
                child_start.append(0)
                child_count.append(0)
                point_start.append(0)
                point_count.append(0)
                stack.append((len(centers) - 1, g))
        return cls(
            np.array(centers),
            np.array(child_start),
            np.array(child_count),
            np.array(point_start),
            np.array(point_count),
            np.array(points, dtype=np.int64),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(
            centers=self.centers,
            child_start=self.child_start,
            child_count=self.child_count,
            point_start=self.point_start,
            point_count=self.point_count,
            points=self.points,
        )

    @classmethod
    def from_arrays(cls, arrays):
        return cls(**{k: np.asarray(v) for k, v in arrays.items()})

    def search(self, q: np.ndarray, checks: int) -> np.ndarray:
        """Collect at least ``checks`` candidate points, nearest bins first."""
        found: list[np.ndarray] = []
        total = 0
        heap = [(0.0, 0)]
        while heap and total < checks:
            _, node = heapq.heappop(heap)
            # descend greedily, queueing the siblings we pass by
            while self.child_count[node]:
                start = self.child_start[node]
                kids = np.arange(start, start + self.child_count[node])
                d = np.sum((self.centers[kids] - q) ** 2, axis=1)
                best = int(np.argmin(d))
                for j, kid in enumerate(kids):
                    if j != best:
                        heapq.heappush(heap, (float(d[j]), int(kid)))
                node = int(kids[best])
            s = self.point_start[node]
            found.append(self.points[s : s + self.point_count[node]])
            total += self.point_count[node]
        return np.concatenate(found)


def dynamic_nn_select(nn: NeighborList | Sequence[float], theta: float = 0.7) -> list:
    """Grow the neighbour list while consecutive distance ratios exceed ``theta``.

    Follows the selection loop literally, including its guard m < |NN| - 1, so
    the last fetched neighbour is never considered.
    """
    items = nn.neighbors if isinstance(nn, NeighborList) else list(nn)
    if not items:
        raise ValueError("empty neighbour list")
    dist = [it.distance if isinstance(it, Neighbor) else float(it) for it in items]
    selected = [items[0]]
    m = 1
    while m < len(items) - 1:
        if _ratio(dist[m - 1], dist[m]) > theta:
            selected.append(items[m])
            m += 1
        else:
            break
    return selected


def prune_ratio(nn: NeighborList | Sequence[float]) -> float:
    items = nn.neighbors if isinstance(nn, NeighborList) else list(nn)
    dist = [it.distance if isinstance(it, Neighbor) else float(it) for it in items]
    return _ratio(dist[0], dist[-1])


def prune_query_feature(nn: NeighborList | Sequence[float], beta: float = 0.7) -> bool:
    """True when the query feature should be dropped (first and last NN too alike)."""
    if len(nn) < 2:
        log.debug("fewer than two neighbours, keeping query feature")
        return False
    return prune_ratio(nn) > beta
