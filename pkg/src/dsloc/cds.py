"""Query-anchored post-processing with constrained dominant sets.

The query becomes node 0 of a graph over every member of the extracted
clusters. Members of the same cluster keep their (max-normalised) payoffs,
the query links to every member through fused global similarity, and all
other pairs are disconnected. Penalising every non-query vertex by more than
the largest eigenvalue of the non-query block forces the query into the
support of any local maximiser.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graph_core import support as support_of
from .matching_graph import DEFAULT_GAMMA, FeatureMatchResult, gaussian_similarity
from .stqp import DEFAULT_TAU, find_equilibrium

AREA_FLOOR = 1e-6
ALPHA_FLOOR = 1e-6
QUERY = "__query__"


class QueryExcludedError(RuntimeError):
    """The solver returned a support without the query, contradicting the alpha bound."""


@dataclass
class FeatureWeighting:
    names: list[str]
    areas: np.ndarray
    weights: np.ndarray
    degenerate: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {n: float(w) for n, w in zip(self.names, self.weights)}


def curve_area(scores) -> float:
    """Trapezoidal area under a score curve drawn over a unit-length abscissa."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 1:
        return float(scores[0])
    return float(np.trapezoid(scores, dx=1.0 / (scores.size - 1)))


def weights_from_areas(areas) -> np.ndarray:
    inv = 1.0 / np.maximum(np.asarray(areas, dtype=float), AREA_FLOOR)
    return inv / inv.sum()


def feature_weights(
    query: Mapping[str, np.ndarray],
    references: Sequence[Mapping[str, np.ndarray]],
    names: Sequence[str] | None = None,
) -> FeatureWeighting:
    """Weight each global feature by the inverse area under its normalised score curve.

    Distances from the query to each matched reference are min-max
    normalised, turned into scores (1 = closest) and sorted in descending
    order. A discriminative feature scores one reference high and the rest
    low, giving a small area and hence a large weight. A feature whose
    distances are all identical has no usable curve; it gets the floor area
    and is listed in ``degenerate``.
    """
    if len(references) < 2:
        raise ValueError("feature weighting needs at least two matched references")
    names = sorted(query) if names is None else list(names)
    areas, degenerate = [], []
    for name in names:
        try:
            q = np.asarray(query[name], dtype=float)
            dist = np.array([np.linalg.norm(q - np.asarray(r[name], dtype=float)) for r in references])
        except KeyError as exc:
            raise KeyError(f"global feature {name!r} missing on an image") from exc
        lo, hi = dist.min(), dist.max()
        if hi - lo <= 0:
            areas.append(AREA_FLOOR)
            degenerate.append(name)
            continue
        scores = np.sort(1.0 - (dist - lo) / (hi - lo))[::-1]
        areas.append(max(curve_area(scores), AREA_FLOOR))
    areas = np.array(areas)
    return FeatureWeighting(names, areas, weights_from_areas(areas), degenerate)


def _gamma_for(gammas, name: str) -> float:
    if gammas is None:
        return DEFAULT_GAMMA
    if isinstance(gammas, Mapping):
        return float(gammas.get(name, DEFAULT_GAMMA))
    return float(gammas)


def fused_global_similarity(
    fi: Mapping[str, np.ndarray],
    fj: Mapping[str, np.ndarray],
    weights: FeatureWeighting | Mapping[str, float],
    gammas: Mapping[str, float] | float | None = None,
) -> float:
    """Weighted sum of per-feature Gaussian similarities."""
    w = weights.as_dict() if isinstance(weights, FeatureWeighting) else dict(weights)
    total = 0.0
    for name, wk in w.items():
        if name not in fi or name not in fj:
            raise KeyError(f"global feature {name!r} missing")
        diff = np.asarray(fi[name], dtype=float) - np.asarray(fj[name], dtype=float)
        total += wk * float(gaussian_similarity(diff @ diff, _gamma_for(gammas, name)))
    return total


@dataclass
class CdsGraph:
    images: list[str]  # images[0] is the query placeholder
    cluster_of: np.ndarray  # extraction rank per node, 0 for the query
    source: list[int]  # matching-graph node behind each CDS node, -1 for the query
    Bhat: np.ndarray
    query: int = 0

    @property
    def size(self) -> int:
        return self.Bhat.shape[0]


def build_cds_graph(
    query_features: Mapping[str, np.ndarray],
    result: FeatureMatchResult,
    reference_features: Mapping[str, Mapping[str, np.ndarray]],
    weights: FeatureWeighting | Mapping[str, float],
    gammas: Mapping[str, float] | float | None = None,
) -> CdsGraph:
    if not result.clusters:
        raise ValueError("no clusters to post-process")
    images = [QUERY]
    ranks = [0]
    source = [-1]
    blocks = []
    for cluster in result.clusters:
        members = list(cluster.support)
        sub = result.B[np.ix_(members, members)]
        top = sub.max()
        blocks.append((len(images), sub / top if top > 0 else sub))
        for node in members:
            images.append(result.nodes[node].parent_image)
            ranks.append(cluster.rank)
            source.append(node)
    S = len(images)
    Bhat = np.zeros((S, S))
    for start, block in blocks:
        m = block.shape[0]
        Bhat[start : start + m, start : start + m] = block
    np.fill_diagonal(Bhat, 0.0)

    rho_cache: dict[str, float] = {}
    for i in range(1, S):
        img = images[i]
        if img not in rho_cache:
            rho_cache[img] = fused_global_similarity(
                query_features, reference_features[img], weights, gammas
            )
        Bhat[0, i] = Bhat[i, 0] = rho_cache[img]
    return CdsGraph(images, np.array(ranks), source, Bhat)


def _collatz_wielandt(M: np.ndarray, steps: int) -> float:
    # For nonnegative M and any positive v: lambda_max <= max_i (Mv)_i / v_i.
    # Iterating with M + I keeps v strictly positive.
    v = np.ones(M.shape[0])
    for _ in range(steps):
        v = M @ v + v
        v /= v.max()
    return float(np.max((M @ v) / v))


def alpha_bound(
    Bhat,
    query: int | Sequence[int] = 0,
    *,
    margin: float = 0.1,
    power_steps: int = 0,
) -> float:
    """Penalty strictly above the largest eigenvalue of the non-query block.

    The Gershgorin row-sum bound is always valid. With ``power_steps`` > 0 and a
    nonnegative block, a Collatz-Wielandt bound from power iterates is also
    computed and the smaller of the two used; both are upper bounds.
    """
    Bhat = np.asarray(Bhat, dtype=float)
    q = {query} if isinstance(query, (int, np.integer)) else set(query)
    rest = [i for i in range(Bhat.shape[0]) if i not in q]
    if not rest:
        return ALPHA_FLOOR
    sub = Bhat[np.ix_(rest, rest)]
    upper = float(np.abs(sub).sum(axis=1).max())
    if power_steps > 0 and np.all(sub >= 0):
        upper = min(upper, _collatz_wielandt(sub, power_steps))
    return max((1.0 + margin) * upper, ALPHA_FLOOR)


@dataclass
class CdsSolution:
    x: np.ndarray
    alpha: float
    objective: float
    iterations: int
    support: tuple[int, ...]
    query: int = 0

    @property
    def membership(self) -> dict[int, float]:
        return {i: float(self.x[i]) for i in self.support}


def constrained_dominant_set(
    Bhat,
    query: int = 0,
    alpha: float | None = None,
    x0=None,
    tau: float = DEFAULT_TAU,
    **solver_options,
) -> CdsSolution:
    Bhat = np.asarray(Bhat, dtype=float)
    if alpha is None:
        alpha = alpha_bound(Bhat, query)
    penalty = np.full(Bhat.shape[0], alpha)
    penalty[query] = 0.0
    eq = find_equilibrium(Bhat - np.diag(penalty), x0, tau, **solver_options)
    supp = support_of(eq.x)
    if query not in supp:
        raise QueryExcludedError(
            f"query dropped from the support (alpha={alpha:.4g}, support={supp}, "
            f"residual={eq.residual:.3g})"
        )
    return CdsSolution(eq.x, alpha, eq.objective, eq.iterations, supp, query)


@dataclass(frozen=True)
class MatchDecision:
    image_id: str | None
    score: float
    tie: bool = False
    low_confidence: bool = False


def best_match(
    solution: CdsSolution,
    images: Sequence[str],
    *,
    min_mass: float = 0.01,
) -> MatchDecision:
    """Parent image of the non-query node with the largest membership.

    A support holding only the query yields ``image_id=None``. The decision is
    flagged low-confidence when the non-query nodes together hold less than
    ``min_mass`` of the solution.
    """
    others = [i for i in solution.support if i != solution.query]
    if not others:
        return MatchDecision(None, 0.0, low_confidence=True)
    scores = solution.x[others]
    top = scores.max()
    winners = sorted({images[i] for i, s in zip(others, scores) if s == top})
    return MatchDecision(
        winners[0],
        float(top),
        tie=len(winners) > 1,
        low_confidence=bool(scores.sum() < min_mass),
    )
