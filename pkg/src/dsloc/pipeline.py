"""End-to-end localization of query images against a reference set."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import cds
from .dataset import ImageRecord
from .geo import LocalProjection, haversine_m
from .matching_graph import (
    DEFAULT_GAMMA,
    InsufficientFeaturesError,
    build_matching_graph,
    match_features,
    vote_localize,
)
from .nn_matching import DescriptorIndex, SelectionConfig, dynamic_nn_select, prune_query_feature

log = logging.getLogger(__name__)

REPORT_SCHEMA = "dsloc.report/1"
METHODS = ("vote", "cds")


@dataclass(frozen=True)
class PipelineConfig:
    theta: float = 0.7
    beta: float = 0.7
    max_pool: int = 50
    gamma: float = DEFAULT_GAMMA  # GPS metres, matching-graph edges
    node_gamma: float = DEFAULT_GAMMA  # local descriptor space, node scores
    global_gamma: float = DEFAULT_GAMMA  # global descriptors, query links
    clusters: int = 3
    score_scale: float = 1.0
    alpha_margin: float = 0.1
    power_steps: int = 0
    global_features: tuple[str, ...] | None = None
    backend: str = "exact"

    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.theta, self.beta, self.max_pool)


class Localizer:
    """Holds the reference side (index, GPS, global descriptors) for repeated queries."""

    def __init__(self, references: Sequence[ImageRecord], config: PipelineConfig = PipelineConfig(),
                 index: DescriptorIndex | None = None):
        self.config = config
        config.selection()  # validates thresholds
        self.references = {r.image_id: r for r in references}
        self.projection = LocalProjection.around([r.gps for r in references])
        self.xy = {r.image_id: self.projection.to_xy(r.gps) for r in references}
        self.globals = {r.image_id: r.global_features for r in references}
        if index is None:
            index = index_references(references, backend=config.backend)
        self.index = index

    def _select(self, descriptors: np.ndarray):
        c = self.config
        kept = {}
        for qf, q in enumerate(np.asarray(descriptors, dtype=np.float64)):
            pool = self.index.knn(q, c.max_pool, qf)
            if prune_query_feature(pool, c.beta):
                continue
            kept[qf] = dynamic_nn_select(pool, c.theta)
        return kept

    def localize(self, query_id: str, descriptors, global_features, method: str = "cds") -> dict:
        """Localize one query from its descriptors and global features alone."""
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        c = self.config
        report = {
            "schema_version": REPORT_SCHEMA,
            "query_id": query_id,
            "method": method,
            "predicted_image": None,
            "predicted_gps": None,
            "flags": [],
            "trace": ["nn"],
            "n_features": int(len(descriptors)),
        }
        kept = self._select(descriptors)
        report["n_kept"] = len(kept)
        try:
            graph = build_matching_graph(
                kept, self.xy.__getitem__, c.gamma, node_gamma=c.node_gamma, score_scale=c.score_scale
            )
        except InsufficientFeaturesError as exc:
            report["flags"].append("insufficient_features")
            report["diagnosis"] = str(exc)
            return report
        report["trace"].append("matching")
        result = match_features(graph, c.clusters)
        report["n_nodes"] = len(graph)
        report["clusters"] = [
            {"rank": cl.rank, "size": len(cl.support), "objective": cl.objective,
             "images": sorted(set(result.cluster_images(cl)))}
            for cl in result.clusters
        ]
        report["votes"] = result.votes
        if not result.clusters:
            report["flags"].append("no_cluster")
            return report

        if method == "vote":
            decision = vote_localize(result)
            report["trace"].append("vote")
            if decision.tie:
                report["flags"].append("tie")
            self._predict(report, decision.image_id)
            return report

        report["trace"].append("cds")
        matched = sorted({result.nodes[i].parent_image for cl in result.clusters for i in cl.support})
        names = c.global_features or tuple(sorted(global_features))
        if len(matched) >= 2:
            weights = cds.feature_weights(global_features, [self.globals[m] for m in matched], names)
            if weights.degenerate:
                report["flags"].append("degenerate_feature:" + ",".join(weights.degenerate))
        else:
            weights = cds.FeatureWeighting(list(names), np.ones(len(names)), np.full(len(names), 1 / len(names)))
        graph_hat = cds.build_cds_graph(global_features, result, self.globals, weights, c.global_gamma)
        alpha = cds.alpha_bound(graph_hat.Bhat, 0, margin=c.alpha_margin, power_steps=c.power_steps)
        solution = cds.constrained_dominant_set(graph_hat.Bhat, 0, alpha)
        decision = cds.best_match(solution, graph_hat.images)
        report["cds"] = {
            "alpha": alpha,
            "size": graph_hat.size,
            "weights": weights.as_dict(),
            "query_membership": float(solution.x[0]),
            "membership": [[graph_hat.images[i], float(solution.x[i])] for i in solution.support if i != 0],
        }
        if decision.tie:
            report["flags"].append("tie")
        if decision.low_confidence:
            report["flags"].append("low_confidence")
        if decision.image_id is None:
            report["flags"].append("no_match")
            return report
        self._predict(report, decision.image_id)
        return report

    def _predict(self, report: dict, image_id: str) -> None:
        report["predicted_image"] = image_id
        report["predicted_gps"] = list(self.references[image_id].gps)


def index_references(references: Sequence[ImageRecord], backend: str = "exact", **options) -> DescriptorIndex:
    X = np.concatenate([r.local_descriptors for r in references]).astype(np.float64)
    parents = [r.image_id for r in references for _ in range(len(r.local_descriptors))]
    fids = [j for r in references for j in range(len(r.local_descriptors))]
    return DescriptorIndex(X, parents, fids, backend=backend, **options)


def score_report(report: dict, truth_gps) -> dict:
    """Attach the geodesic error against ground truth; only done after matching."""
    if report["predicted_gps"] is None:
        report["error_m"] = None
        report["failure"] = True
    else:
        err = haversine_m(report["predicted_gps"], truth_gps)
        report["error_m"] = err
        report["failure"] = err > 300.0
    return report


def run_queries(localizer: Localizer, queries: Sequence[ImageRecord], methods=("cds",)) -> list[dict]:
    reports = []
    for q in queries:
        for method in methods:
            rep = localizer.localize(q.image_id, q.local_descriptors, q.global_features, method)
            reports.append(score_report(rep, q.gps))
    return reports


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True)
