"""Exact dominant-set machinery.

Everything here works straight from the recursive weight definition and is
exponential in the subset size. It is the truth oracle for the solvers in
:mod:`dsloc.stqp`, not a production path.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

import numpy as np

DEGENERACY_TOL = 1e-12
SUPPORT_CUTOFF = 1e-8
MAX_ORACLE_NODES = 20


class DegenerateWeightError(ValueError):
    """A weight sits within the degeneracy tolerance of zero, so its sign is undecidable."""


def as_affinity(B, *, check: bool = True, atol: float = 0.0) -> np.ndarray:
    """Return ``B`` as a float array, validating the affinity-matrix invariants."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"affinity matrix must be square, got shape {B.shape}")
    if check:
        if not np.all(np.isfinite(B)):
            raise ValueError("affinity matrix has non-finite entries")
        if not np.allclose(B, B.T, rtol=0.0, atol=atol):
            raise ValueError("affinity matrix is not symmetric")
        if np.any(np.diag(B) != 0):
            raise ValueError("affinity matrix must have a zero diagonal")
        if np.any(B < 0):
            raise ValueError("affinity matrix has negative entries")
    return B


def _node_set(S: Iterable[int], n: int | None = None) -> tuple[int, ...]:
    members = tuple(int(s) for s in S)
    if len(set(members)) != len(members):
        raise ValueError(f"node set has repeated members: {members}")
    if n is not None and any(s < 0 or s >= n for s in members):
        raise ValueError(f"node set {members} out of range for {n} nodes")
    return members


def phi(S: Iterable[int], l: int, k: int, B) -> float:
    """Similarity of ``k`` to ``l`` relative to the average similarity of ``l`` inside ``S``."""
    B = np.asarray(B, dtype=float)
    S = _node_set(S, B.shape[0])
    if not S:
        raise ValueError("phi needs a non-empty node set")
    if l not in S:
        raise ValueError(f"node {l} is not in {S}")
    if k in S:
        raise ValueError(f"node {k} must lie outside {S}")
    return float(B[l, k] - B[l, list(S)].sum() / len(S))


class WeightTable:
    """Memoised recursive weights W_S(l) for one affinity matrix.

    Memoisation keeps the cost at O(2^|S| |S|^2) instead of factorial, which is
    what makes full subset enumeration feasible up to ~20 nodes.
    """

    def __init__(self, B):
        self.B = np.asarray(B, dtype=float)
        self.n = self.B.shape[0]
        self._cache: dict[tuple[frozenset, int], float] = {}

    def weight(self, S, l: int) -> float:
        S = frozenset(S)
        if not S:
            raise ValueError("weights are undefined on the empty set")
        if l not in S:
            raise ValueError(f"node {l} is not in {sorted(S)}")
        return self._weight(S, l)

    def _weight(self, S: frozenset, l: int) -> float:
        key = (S, l)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if len(S) == 1:
            value = 1.0
        else:
            rest = S - {l}
            idx = list(rest)
            value = 0.0
            for k in rest:
                # phi_{rest}(k, l) = B(k,l) - mean_{p in rest} B(k,p)
                rel = self.B[k, l] - self.B[k, idx].sum() / len(rest)
                value += rel * self._weight(rest, k)
        self._cache[key] = value
        return value

    def total(self, S) -> float:
        S = frozenset(S)
        if not S:
            raise ValueError("total weight is undefined on the empty set")
        return sum(self._weight(S, l) for l in S)


def weight_w(S: Iterable[int], l: int, B) -> float:
    B = np.asarray(B, dtype=float)
    S = _node_set(S, B.shape[0])
    return WeightTable(B).weight(S, l)


def total_weight(S: Iterable[int], B) -> float:
    B = np.asarray(B, dtype=float)
    S = _node_set(S, B.shape[0])
    return WeightTable(B).total(S)


@dataclass(frozen=True)
class DominanceReport:
    """Outcome of the exact dominance test.

    ``dominant`` is None when any decisive weight fell inside the degeneracy
    band; ``degenerate`` then lists the offending (subset, node) pairs.
    """

    dominant: bool | None
    internal: dict[int, float]
    external: dict[int, float]
    subsets_checked: int
    degenerate: tuple = ()
    failed_subset: tuple[int, ...] | None = None


def check_dominance(
    S: Iterable[int],
    B,
    *,
    enumerate_subsets: bool = True,
    tol: float = DEGENERACY_TOL,
    table: WeightTable | None = None,
) -> DominanceReport:
    """Evaluate both dominant-set sign conditions for ``S`` exactly.

    With ``enumerate_subsets`` the positivity of W(T) is also checked for every
    non-empty T within S. Without it only W(S) > 0 is required, which is how
    solver outputs are validated.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if n > MAX_ORACLE_NODES:
        raise ValueError(f"exact dominance check limited to {MAX_ORACLE_NODES} nodes, got {n}")
    S = _node_set(S, n)
    if not S:
        raise ValueError("dominance is undefined for the empty set")
    table = table or WeightTable(B)
    degenerate = []
    members = frozenset(S)

    internal = {l: table.weight(members, l) for l in S}
    outside = [k for k in range(n) if k not in members]
    external = {k: table.weight(members | {k}, k) for k in outside}

    checked = 0
    failed = None
    if enumerate_subsets:
        for size in range(1, len(S) + 1):
            for T in combinations(S, size):
                checked += 1
                w = table.total(T)
                if abs(w) <= tol:
                    degenerate.append((T, None))
                elif w < 0 and failed is None:
                    failed = T
    else:
        checked = 1
        w = table.total(members)
        if abs(w) <= tol:
            degenerate.append((S, None))
        elif w < 0:
            failed = S

    for l, w in internal.items():
        if abs(w) <= tol:
            degenerate.append((S, l))
    for k, w in external.items():
        if abs(w) <= tol:
            degenerate.append((S + (k,), k))

    if degenerate:
        verdict = None
    else:
        verdict = (
            failed is None
            and all(w > 0 for w in internal.values())
            and all(w < 0 for w in external.values())
        )
    return DominanceReport(
        dominant=verdict,
        internal=internal,
        external=external,
        subsets_checked=checked,
        degenerate=tuple(degenerate),
        failed_subset=failed,
    )


def is_dominant_set(S: Iterable[int], B, *, tol: float = DEGENERACY_TOL) -> bool:
    """Exact dominance test with full subset enumeration (at most 20 nodes).

    Raises :class:`DegenerateWeightError` when a deciding weight is within
    ``tol`` of zero.
    """
    report = check_dominance(S, B, enumerate_subsets=True, tol=tol)
    if report.dominant is None:
        raise DegenerateWeightError(f"weights within {tol} of zero: {report.degenerate[:3]}")
    return report.dominant


def characteristic_vector(S: Iterable[int], B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    S = _node_set(S, B.shape[0])
    table = WeightTable(B)
    total = table.total(S)
    if total <= 0:
        raise ValueError(f"W(S) = {total:.3g} is not positive; {S} is not a cluster")
    x = np.zeros(B.shape[0])
    for l in S:
        x[l] = table.weight(S, l) / total
    return x


def support(x, cutoff: float = SUPPORT_CUTOFF) -> tuple[int, ...]:
    x = np.asarray(x, dtype=float)
    return tuple(int(i) for i in np.flatnonzero(x > cutoff))


def is_simplex_vector(x, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(x.ndim == 1 and np.all(x >= 0) and abs(x.sum() - 1.0) <= tol)
