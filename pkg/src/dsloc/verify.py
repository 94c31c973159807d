"""Oracle suites behind ``dsloc verify`` and the acceptance tests.

Each check returns a :class:`Check` with a pass flag and a short detail
string; none of them raise on failure.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import cds
from .dataset import CityConfig, generate_synthetic_city
from .evaluate import DEFAULT_THRESHOLDS, evaluate_reports
from .geo import haversine_m
from .graph_core import check_dominance, is_dominant_set, weight_w
from .nn_matching import dynamic_nn_select, prune_query_feature
from .pipeline import Localizer, dumps_report, run_queries
from .stqp import find_equilibrium, homogenize, replicator_equilibrium


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]], budget: float | None = None) -> Check:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if budget is not None and dt >= budget:
        ok = False
        detail += f"; runtime {dt:.1f}s over budget {budget:.0f}s"
    return Check(name, bool(ok), detail, dt)


def five_node_matrix(triangle=(20, 21, 22), spoke=(30, 35, 41), weak: float = 1.0) -> np.ndarray:
    """Five-node example: triangle {1,2,3}, node 4 strongly tied to it, node 5 weakly.

    Index i holds the node labelled i + 1.
    """
    B = np.zeros((5, 5))
    for (i, j), w in zip([(0, 1), (0, 2), (1, 2)], triangle):
        B[i, j] = B[j, i] = w
    for i, w in enumerate(spoke):
        B[i, 3] = B[3, i] = w
    B[:4, 4] = B[4, :4] = weak
    return B


def random_affinity(rng: np.random.Generator, n: int) -> np.ndarray:
    M = np.triu(rng.random((n, n)), 1)
    return M + M.T


def check_five_node() -> Check:
    def run():
        signs = 0
        for tri in itertools.permutations((20, 21, 22)):
            for spoke in itertools.permutations((30, 35, 41)):
                B = five_node_matrix(tri, spoke)
                signs += weight_w([0, 1, 2, 3], 3, B) > 0 and weight_w(range(5), 4, B) < 0
        B = five_node_matrix()
        ds4 = is_dominant_set([0, 1, 2, 3], B)
        ds5 = is_dominant_set(range(5), B)
        ok = signs == 36 and ds4 and not ds5
        return ok, f"sign claims hold in {signs}/36 permutations; {{1,2,3,4}} dominant={ds4}, {{1..5}} dominant={ds5}"

    return _timed("five-node-golden", run, budget=1.0)


def check_oracle_equivalence(instances: int = 500, seed: int = 0) -> Check:
    def run():
        rng = np.random.default_rng(seed)
        good = bad = degenerate = 0
        for _ in range(instances):
            B = random_affinity(rng, int(rng.integers(4, 9)))
            supp = find_equilibrium(B, tau=1e-7).support()
            rep = check_dominance(supp, B, enumerate_subsets=False)
            if rep.dominant is None:
                degenerate += 1
            elif rep.dominant:
                good += 1
            else:
                bad += 1
        rate = good / max(good + bad, 1)
        return rate >= 0.99, f"{good}/{good + bad} supports dominant ({rate:.1%}), {degenerate} degenerate excluded"

    return _timed("oracle-equivalence", run, budget=60.0)


def check_solver_agreement(instances: int = 100, seed: int = 0) -> Check:
    def run():
        rng = np.random.default_rng(seed)
        agree = 0
        worst = 0.0
        for _ in range(instances):
            B = random_affinity(rng, int(rng.integers(2, 11)))
            a = find_equilibrium(B, tau=1e-12, max_iter=100_000, strict=False)
            b = replicator_equilibrium(B, tau=1e-20, strict=False)
            if a.converged and b.converged and a.support() == b.support():
                agree += 1
                worst = max(worst, abs(a.objective - b.objective))
        rate = agree / instances
        ok = rate >= 0.95 and worst <= 1e-6
        return ok, f"supports agree on {agree}/{instances} ({rate:.0%}); max objective gap {worst:.2e}"

    return _timed("solver-cross-agreement", run)


def check_homogenization(triples: int = 1000, seed: int = 0) -> Check:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        fails = 0
        for _ in range(triples):
            n = int(rng.integers(1, 31))
            A = random_affinity(rng, n)
            b = rng.random(n)
            x = rng.dirichlet(np.ones(n))
            B = homogenize(A, b)
            gap = abs(x @ B @ x - x @ A @ x - 2 * b @ x)
            worst = max(worst, gap / n)
            fails += gap > 1e-12 * n
        return fails == 0, f"{triples - fails}/{triples} within 1e-12*n; worst gap/n {worst:.1e}"

    return _timed("homogenization-identity", run)


def random_cds_graph(rng: np.random.Generator) -> np.ndarray:
    """Query node 0 plus 1-3 clusters of 1-6 members, built like the pipeline's graph."""
    sizes = rng.integers(1, 7, size=int(rng.integers(1, 4)))
    S = int(sizes.sum()) + 1
    Bhat = np.zeros((S, S))
    start = 1
    for m in sizes:
        block = random_affinity(rng, int(m)) + np.diag(rng.random(m))
        block = block / block.max()
        Bhat[start : start + m, start : start + m] = block
        start += m
    np.fill_diagonal(Bhat, 0.0)
    rho = rng.random(S - 1) ** rng.uniform(0.5, 4.0)
    Bhat[0, 1:] = Bhat[1:, 0] = rho
    return Bhat


def check_query_containment(graphs: int = 1000, seed: int = 0) -> Check:
    def run():
        rng = np.random.default_rng(seed)
        misses = {1: 0, 2: 0, 10: 0}
        for _ in range(graphs):
            Bhat = random_cds_graph(rng)
            alpha = cds.alpha_bound(Bhat, 0)
            for factor in misses:
                try:
                    cds.constrained_dominant_set(Bhat, 0, factor * alpha)
                except cds.QueryExcludedError:
                    misses[factor] += 1
        ok = not any(misses.values())
        return ok, "query in support: " + ", ".join(
            f"{f}x alpha {graphs - m}/{graphs}" for f, m in misses.items()
        )

    return _timed("cds-query-containment", run, budget=60.0)


def check_selection_traces(lists: int = 1000, seed: int = 0) -> Check:
    def run():
        traces = [
            len(dynamic_nn_select([1.0, 1.05, 1.1, 5.0], 0.7)) == 3,
            len(dynamic_nn_select([1.0, 2.0], 0.7)) == 1,
            len(dynamic_nn_select([3.0] * 10, 0.7)) == 9,
            prune_query_feature([0.9, 1.0], 0.7) is True,
            prune_query_feature([0.1, 1.0], 0.7) is False,
            prune_query_feature([0.0, 0.0], 0.7) is True,
        ]
        rng = np.random.default_rng(seed)
        mono = 0
        for _ in range(lists):
            d = np.sort(rng.random(int(rng.integers(1, 30))) * rng.uniform(0.1, 10))
            t1, t2 = np.sort(rng.uniform(0.01, 0.99, size=2))
            mono += len(dynamic_nn_select(d, t1)) >= len(dynamic_nn_select(d, t2))
        ok = all(traces) and mono == lists
        return ok, f"{sum(traces)}/6 hand traces reproduced; theta monotonicity {mono}/{lists}"

    return _timed("nn-selection-traces", run)


def exhaustive_first_nn_votes(references, query) -> dict[str, int]:
    """Brute-force oracle: each query feature votes for its exact first NN's image."""
    X = np.concatenate([r.local_descriptors for r in references]).astype(np.float64)
    owner = np.repeat([r.image_id for r in references], [len(r.local_descriptors) for r in references])
    votes: dict[str, int] = {}
    for q in query.local_descriptors.astype(np.float64):
        d = np.sqrt(((X - q) ** 2).sum(axis=1))
        img = str(owner[int(np.argmin(d))])
        votes[img] = votes.get(img, 0) + 1
    return votes


def planted_config(tie_heavy: bool = False, seed: int = 0) -> CityConfig:
    return CityConfig(
        grid=10, spacing_m=12.0, descriptors_per_image=20, n_queries=50, noise=0.1,
        distractor_rate=0.3, twin_offset_m=1500.0 if tie_heavy else None, seed=seed,
    )


def run_planted(tie_heavy: bool = False, seed: int = 0) -> list[dict]:
    refs, queries = generate_synthetic_city(planted_config(tie_heavy, seed))
    return run_queries(Localizer(refs), queries, ("vote", "cds"))


def check_planted_recovery(seed: int = 0) -> Check:
    def run():
        refs, queries = generate_synthetic_city(planted_config(False, seed))
        gps = {r.image_id: r.gps for r in refs}
        recoverable = 0
        for q in queries:
            votes = exhaustive_first_nn_votes(refs, q)
            best = max(votes.values())
            picks = [img for img, v in votes.items() if v == best]
            recoverable += all(haversine_m(gps[p], q.gps) <= 30.0 for p in picks)
        plain = evaluate_reports(run_queries(Localizer(refs), queries, ("vote", "cds")))
        tie = evaluate_reports(run_planted(True, seed))
        t30 = DEFAULT_THRESHOLDS.index(30.0)
        cds_30 = plain["cds"][t30]
        dominates = all(c >= v for c, v in zip(tie["cds"], tie["vote"]))
        ok = recoverable / len(queries) >= 0.9 and cds_30 >= 0.9 and dominates
        return ok, (
            f"oracle recoverable {recoverable}/{len(queries)}; cds within 30 m {cds_30:.0%}; "
            f"tie-heavy cds {tie['cds']} vs vote {tie['vote']}"
        )

    return _timed("planted-recovery", run, budget=300.0)


def check_determinism(seed: int = 0) -> Check:
    def run():
        a = "\n".join(dumps_report(r) for r in run_planted(False, seed))
        b = "\n".join(dumps_report(r) for r in run_planted(False, seed))
        return a == b, f"{len(a)} report bytes, identical={a == b}"

    return _timed("determinism", run)


ALL_CHECKS = (
    check_five_node,
    check_oracle_equivalence,
    check_solver_agreement,
    check_homogenization,
    check_query_containment,
    check_selection_traces,
    check_planted_recovery,
    check_determinism,
)


def run_all(quick: bool = False) -> list[Check]:
    if quick:
        return [
            check_five_node(),
            check_oracle_equivalence(100),
            check_solver_agreement(30),
            check_homogenization(200),
            check_query_containment(200),
            check_selection_traces(200),
        ]
    return [fn() for fn in ALL_CHECKS]
