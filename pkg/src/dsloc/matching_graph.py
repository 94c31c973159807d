"""Multi-NN matching graph and dominant-set feature matching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .nn_matching import Neighbor
from .stqp import DominantSetResult, extract_dominant_sets, homogenize

DEFAULT_GAMMA = 2.0**7


class InsufficientFeaturesError(ValueError):
    """Fewer than two query features survived pruning, so the graph has no edges."""


@dataclass(frozen=True)
class CandidateNode:
    query_feature_id: int
    nn_rank: int
    ref: int
    parent_image: str
    feature_id: int
    distance: float
    zeta: float


@dataclass
class MatchingGraph:
    nodes: list[CandidateNode]
    A: np.ndarray
    b: np.ndarray
    gamma: float = DEFAULT_GAMMA

    def __len__(self):
        return len(self.nodes)


@dataclass
class FeatureMatchResult:
    clusters: list[DominantSetResult]
    votes: dict[str, int]
    B: np.ndarray = field(repr=False)
    nodes: list[CandidateNode] = field(repr=False, default_factory=list)

    def cluster_images(self, cluster: DominantSetResult) -> list[str]:
        return [self.nodes[i].parent_image for i in cluster.support]


def gaussian_similarity(d2, gamma: float):
    """exp(-d^2 / 2 gamma^2) for squared distance(s) ``d2``."""
    return np.exp(-np.asarray(d2, dtype=float) / (2.0 * gamma * gamma))


def node_score(distance: float, gamma: float = DEFAULT_GAMMA) -> float:
    return float(gaussian_similarity(distance * distance, gamma))


def _lookup(psi) -> Callable[[str], np.ndarray]:
    if callable(psi):
        return psi
    return lambda image: psi[image]


def edge_weight(u: CandidateNode, v: CandidateNode, psi, gamma: float = DEFAULT_GAMMA) -> float:
    """Similarity of the parent images of two candidates from different query features."""
    if u.query_feature_id == v.query_feature_id:
        raise ValueError("candidates of the same query feature are never connected")
    get = _lookup(psi)
    diff = np.asarray(get(u.parent_image), dtype=float) - np.asarray(get(v.parent_image), dtype=float)
    return float(gaussian_similarity(diff @ diff, gamma))


def build_matching_graph(
    selected: Mapping[int, Sequence[Neighbor]] | Sequence[tuple[int, Sequence[Neighbor]]],
    psi,
    gamma: float = DEFAULT_GAMMA,
    *,
    node_gamma: float | None = None,
    score_scale: float = 1.0,
) -> MatchingGraph:
    """Nodes are the selected NNs of each surviving query feature.

    ``psi`` maps a reference image id to its global descriptor (GPS metres by
    default in the pipeline). Node scores use ``node_gamma`` in descriptor
    space and are multiplied by ``score_scale`` before entering ``b``.
    """
    items = sorted(selected.items() if isinstance(selected, Mapping) else selected)
    items = [(qf, list(nbrs)) for qf, nbrs in items if len(nbrs)]
    if len(items) < 2:
        raise InsufficientFeaturesError(
            f"{len(items)} query feature(s) survived pruning; at least 2 are needed"
        )
    node_gamma = gamma if node_gamma is None else node_gamma
    nodes = [
        CandidateNode(
            qf, rank, nb.ref, nb.parent_image, nb.feature_id, nb.distance,
            node_score(nb.distance, node_gamma),
        )
        for qf, nbrs in items
        for rank, nb in enumerate(nbrs)
    ]
    get = _lookup(psi)
    images = sorted({nd.parent_image for nd in nodes})
    where = {img: i for i, img in enumerate(images)}
    P = np.array([np.asarray(get(img), dtype=float) for img in images])
    diff = P[:, None, :] - P[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    image_sim = gaussian_similarity(d2, gamma)

    pos = np.array([where[nd.parent_image] for nd in nodes])
    qf = np.array([nd.query_feature_id for nd in nodes])
    A = image_sim[np.ix_(pos, pos)]
    A[qf[:, None] == qf[None, :]] = 0.0
    b = score_scale * np.array([nd.zeta for nd in nodes])
    return MatchingGraph(nodes, A, b, gamma)


def match_features(graph: MatchingGraph, k: int = 3, **solver_options) -> FeatureMatchResult:
    B = homogenize(graph.A, graph.b)
    clusters = extract_dominant_sets(B, k, **solver_options)
    votes = Counter(graph.nodes[i].parent_image for c in clusters for i in c.support)
    return FeatureMatchResult(clusters, dict(sorted(votes.items())), B, graph.nodes)


@dataclass(frozen=True)
class VoteDecision:
    image_id: str
    votes: int
    tie: bool


def vote_localize(result: FeatureMatchResult | Mapping[str, int]) -> VoteDecision:
    """Image with the most cluster members; ties go to the smallest id and are flagged."""
    votes = result.votes if isinstance(result, FeatureMatchResult) else dict(result)
    if not votes:
        raise ValueError("no votes to count")
    top = max(votes.values())
    winners = sorted(img for img, v in votes.items() if v == top)
    return VoteDecision(winners[0], top, len(winners) > 1)
