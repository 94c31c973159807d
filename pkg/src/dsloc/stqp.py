"""Solvers for quadratic programs over the standard simplex.

``find_equilibrium`` runs infection-immunization dynamics, which costs O(n)
per step once ``Bx`` is maintained incrementally. ``replicator_equilibrium``
is the classic multiplicative update, kept as an independent cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph_core import SUPPORT_CUTOFF, support

DEFAULT_TAU = 1e-7
# Bx is updated incrementally; refresh it from scratch this often to stop drift.
_REFRESH_EVERY = 64


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, result: "EquilibriumResult"):
        super().__init__(message)
        self.result = result


@dataclass
class EquilibriumResult:
    x: np.ndarray
    objective: float
    iterations: int
    residual: float
    converged: bool = True
    trace: list[tuple[int, float, float]] | None = None

    def support(self, cutoff: float = SUPPORT_CUTOFF) -> tuple[int, ...]:
        return support(self.x, cutoff)

    def write_trace(self, path) -> None:
        """Dump the (iteration, objective, residual) trace as CSV."""
        if self.trace is None:
            raise ValueError("solver was run without trace=True")
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "residual"])
            for it, obj, res in self.trace:
                writer.writerow([it, repr(obj), repr(res)])


@dataclass
class DominantSetResult:
    support: tuple[int, ...]
    membership: dict[int, float]
    objective: float
    rank: int
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        self.support = tuple(self.support)


def homogenize(A, b) -> np.ndarray:
    """B = A + e b^T + b e^T, so that x^T B x = x^T A x + 2 b^T x on the simplex."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    if b.shape != (A.shape[0],):
        raise ValueError(f"b has shape {b.shape}, expected ({A.shape[0]},)")
    return A + b[None, :] + b[:, None]


def _check_pair(B, x) -> tuple[np.ndarray, np.ndarray]:
    B = np.asarray(B, dtype=float)
    x = np.asarray(x, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError(f"payoff matrix must be square, got {B.shape}")
    if x.shape != (B.shape[0],):
        raise ValueError(f"x has shape {x.shape}, expected ({B.shape[0]},)")
    return B, x


def payoff_value(B, x) -> float:
    B, x = _check_pair(B, x)
    return float(x @ B @ x)


def residual_epsilon(B, x, *, Bx=None, literal: bool = False) -> float:
    """Equilibrium residual sum_i min{x_i, x'Bx - (Bx)_i}^2.

    This is zero exactly at Nash equilibria: every strategy in the support
    earns the average payoff and none outside earns more. ``literal=True``
    evaluates the variant with the payoff difference negated, which is zero
    at pure strategies regardless of invaders and cannot serve as a stopping
    rule; it exists only for comparison.
    """
    B, x = _check_pair(B, x)
    if Bx is None:
        Bx = B @ x
    gap = float(x @ Bx) - Bx
    if literal:
        gap = -gap
    m = np.minimum(x, gap)
    return float(m @ m)


def barycenter(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _selection(x: np.ndarray, Bx: np.ndarray, f: float):
    """Pick the pure strategy or co-strategy with the largest payoff gain.

    Returns (index, scale) where the infective direction is
    y - x = scale * (e_index - x), or None when nothing is infective.
    """
    r = Bx - f
    up = int(np.argmax(r))
    alive = np.flatnonzero(x > 0)
    down = int(alive[np.argmin(r[alive])])
    gain_up = r[up]
    gain_down = -r[down]
    if gain_up >= gain_down and gain_up > 0:
        return up, 1.0
    if gain_down > 0 and x[down] < 1.0:
        return down, x[down] / (x[down] - 1.0)
    return None


def select_infective(B, x):
    """Infective strategy y for x, i.e. (y - x)'Bx > 0, or None if x is immune."""
    B, x = _check_pair(B, x)
    Bx = B @ x
    choice = _selection(x, Bx, float(x @ Bx))
    if choice is None:
        return None
    i, scale = choice
    e = np.zeros_like(x)
    e[i] = 1.0
    return x + scale * (e - x)


def default_max_iter(n: int) -> int:
    return int(10 * n * math.log(max(n, 2)) + 1000)


def find_equilibrium(
    B,
    x0=None,
    tau: float = DEFAULT_TAU,
    *,
    max_iter: int | None = None,
    strict: bool = True,
    trace: bool = False,
) -> EquilibriumResult:
    """Infection-immunization dynamics from ``x0`` (barycenter by default).

    Stops once the residual drops to ``tau``. Hitting ``max_iter`` raises
    :class:`ConvergenceError` carrying the last iterate, unless ``strict`` is
    False, in which case the result comes back with ``converged=False``.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = barycenter(n) if x0 is None else np.array(x0, dtype=float)
    B, x = _check_pair(B, x)
    if np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError("x0 must lie on the standard simplex")
    max_iter = default_max_iter(n) if max_iter is None else max_iter
    diag = np.diag(B).copy()

    Bx = B @ x
    f = float(x @ Bx)
    eps = residual_epsilon(B, x, Bx=Bx)
    rows = [(0, f, eps)] if trace else None
    it = 0
    while eps > tau:
        if it >= max_iter:
            result = EquilibriumResult(x, f, it, eps, converged=False, trace=rows)
            if strict:
                raise ConvergenceError(
                    f"no equilibrium within {max_iter} iterations (residual {eps:.3g})", result
                )
            return result
        choice = _selection(x, Bx, f)
        if choice is None:
            break
        i, scale = choice
        # direction d = scale * (e_i - x); Bd = scale * (B[:, i] - Bx)
        gain = scale * (Bx[i] - f)
        curvature = scale * scale * (diag[i] - 2.0 * Bx[i] + f)
        delta = 1.0
        if curvature < 0:
            delta = min(gain / -curvature, 1.0)
        step = delta * scale
        x = x * (1.0 - step)
        x[i] += step
        if scale < 0 and delta == 1.0:
            x[i] = 0.0  # co-strategy at full extent removes i exactly
        np.maximum(x, 0.0, out=x)
        it += 1
        if it % _REFRESH_EVERY == 0:
            x /= x.sum()
            Bx = B @ x
        else:
            Bx = Bx * (1.0 - step) + step * B[:, i]
        f = float(x @ Bx)
        eps = residual_epsilon(B, x, Bx=Bx)
        if eps <= tau:
            # confirm against an exact product before accepting
            x /= x.sum()
            Bx = B @ x
            f = float(x @ Bx)
            eps = residual_epsilon(B, x, Bx=Bx)
        if trace:
            rows.append((it, f, eps))
    return EquilibriumResult(x, f, it, eps, trace=rows)


def replicator_equilibrium(
    B,
    x0=None,
    tau: float = DEFAULT_TAU,
    *,
    max_iter: int | None = None,
    strict: bool = True,
    trace: bool = False,
) -> EquilibriumResult:
    """Discrete replicator dynamics x_i <- x_i (Bx)_i / x'Bx.

    Negative payoffs are shifted away first; the shift adds a constant to the
    objective on the simplex so maximizers are unchanged. The reported
    objective and residual refer to the original ``B``.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    x = barycenter(n) if x0 is None else np.array(x0, dtype=float)
    B, x = _check_pair(B, x)
    if tau <= 0:
        raise ValueError("tau must be positive")
    lo = B.min()
    P = B - lo if lo < 0 else B
    max_iter = 100 * default_max_iter(n) if max_iter is None else max_iter

    Bx = B @ x
    eps = residual_epsilon(B, x, Bx=Bx)
    rows = [(0, float(x @ Bx), eps)] if trace else None
    it = 0
    while eps > tau:
        if it >= max_iter:
            result = EquilibriumResult(x, float(x @ Bx), it, eps, converged=False, trace=rows)
            if strict:
                raise ConvergenceError(
                    f"replicator dynamics did not settle in {max_iter} iterations", result
                )
            return result
        Px = P @ x
        fp = float(x @ Px)
        if fp <= 0:
            break
        x = x * Px / fp
        x /= x.sum()
        it += 1
        Bx = B @ x
        eps = residual_epsilon(B, x, Bx=Bx)
        if trace:
            rows.append((it, float(x @ Bx), eps))
    return EquilibriumResult(x, float(x @ Bx), it, eps, trace=rows)


def extract_dominant_sets(
    B,
    k: int = 3,
    *,
    tau: float = DEFAULT_TAU,
    cutoff: float = SUPPORT_CUTOFF,
    max_iter: int | None = None,
) -> list[DominantSetResult]:
    """Peel off up to ``k`` dominant sets, re-solving on what remains each time."""
    B = np.asarray(B, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    remaining = np.arange(B.shape[0])
    results: list[DominantSetResult] = []
    while len(results) < k and len(remaining) >= 2:
        sub = B[np.ix_(remaining, remaining)]
        if sub.max() <= 0:
            break
        eq = find_equilibrium(sub, tau=tau, max_iter=max_iter)
        local = support(eq.x, cutoff)
        if not local or eq.objective <= 0:
            break
        mass = eq.x[list(local)]
        mass = mass / mass.sum()
        nodes = tuple(int(remaining[i]) for i in local)
        results.append(
            DominantSetResult(
                support=nodes,
                membership={node: float(w) for node, w in zip(nodes, mass)},
                objective=eq.objective,
                rank=len(results) + 1,
                iterations=eq.iterations,
                residual=eq.residual,
            )
        )
        remaining = np.setdiff1d(remaining, nodes)
    return results
