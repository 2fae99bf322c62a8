"""Exact discrete optimal transport with squared Euclidean cost: couplings,
2-Wasserstein distances, barycentric projection, and the nested distance
between families of measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._network_simplex import solve_transport
from ._parallel import ordered_map
from .core import DiscreteMeasure, ValidationError

__all__ = [
    "TransportPlan",
    "NestedCoupling",
    "squared_distances",
    "solve_ot",
    "w2",
    "w2sq",
    "w2sq_shared_support",
    "barycentric_projection",
    "nested_w2sq",
    "save_plan",
]


def squared_distances(x, y) -> np.ndarray:
    """Pairwise squared Euclidean distances between two point arrays,
    computed with the expanded quadratic form and clamped at zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sx = np.einsum("ij,ij->i", x, x)
    sy = np.einsum("ij,ij->i", y, y)
    d = sx[:, None] + sy[None, :] - 2.0 * (x @ y.T)
    np.maximum(d, 0.0, out=d)
    return d


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling between two discrete measures with its squared cost."""

    source_idx: np.ndarray
    target_idx: np.ndarray
    mass: np.ndarray
    cost: float
    shape: tuple

    def source_marginal(self) -> np.ndarray:
        return np.bincount(self.source_idx, weights=self.mass, minlength=self.shape[0])

    def target_marginal(self) -> np.ndarray:
        return np.bincount(self.target_idx, weights=self.mass, minlength=self.shape[1])


@dataclass(frozen=True)
class NestedCoupling:
    """Optimal matching between two equal-size families of measures."""

    permutation: np.ndarray  # permutation[i] = index matched to family member i
    value: float             # (1/N) sum of matched squared Wasserstein costs
    cost_matrix: np.ndarray


def _plan_from_cost(cost: np.ndarray, weights_a: np.ndarray, weights_b: np.ndarray) -> TransportPlan:
    """Run the exact solver on a prebuilt cost matrix."""
    wa = np.array(weights_a, dtype=np.float64)
    wb = np.array(weights_b, dtype=np.float64)
    deficit = wa.sum() - wb.sum()
    if abs(deficit) > 1e-9:
        raise ValidationError(f"weights are unbalanced by {deficit:.3e}; both sides must sum to 1")
    # absorb the rounding deficit into the largest atom so the solver sees
    # exactly balanced marginals
    wb[int(np.argmax(wb))] += deficit
    bi, bj, bf = solve_transport(cost, wa, wb)
    keep = bf > 0.0
    si = bi[keep]
    ti = bj[keep]
    mass = bf[keep]
    value = float(np.sum(mass * cost[si, ti]))
    plan = TransportPlan(source_idx=si, target_idx=ti, mass=mass,
                         cost=value, shape=cost.shape)
    res_a = np.max(np.abs(plan.source_marginal() - wa)) if len(wa) else 0.0
    res_b = np.max(np.abs(plan.target_marginal() - wb)) if len(wb) else 0.0
    if max(res_a, res_b) > 1e-8:
        raise RuntimeError(f"solver produced an infeasible plan (residual {max(res_a, res_b):.3e})")
    return plan


def solve_ot(a: DiscreteMeasure, b: DiscreteMeasure) -> TransportPlan:
    """Optimal coupling between two discrete measures for the squared
    Euclidean cost; deterministic given the input order."""
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    cost = squared_distances(a.points, b.points)
    return _plan_from_cost(cost, a.weights, b.weights)


def w2sq(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Squared 2-Wasserstein distance."""
    return solve_ot(a, b).cost


def w2(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """2-Wasserstein distance."""
    return float(np.sqrt(max(w2sq(a, b), 0.0)))


def w2sq_shared_support(weights_a, weights_b, centers=None, cost=None) -> float:
    """Squared 2-Wasserstein distance between two weight vectors living on
    the same support points.

    Pass ``cost`` (the support's pairwise squared-distance matrix) to reuse
    it across many pairs of a shared-support family.
    """
    wa = np.asarray(weights_a, dtype=np.float64).reshape(-1)
    wb = np.asarray(weights_b, dtype=np.float64).reshape(-1)
    if wa.shape[0] != wb.shape[0]:
        raise ValidationError(f"weight length mismatch: {wa.shape[0]} vs {wb.shape[0]}")
    if cost is None:
        if centers is None:
            raise ValidationError("need either centers or a precomputed cost matrix")
        pts = np.asarray(getattr(centers, "points", centers), dtype=np.float64)
        if pts.shape[0] != wa.shape[0]:
            raise ValidationError("weights do not match the number of centers")
        cost = squared_distances(pts, pts)
    else:
        cost = np.asarray(cost, dtype=np.float64)
        if cost.shape != (wa.shape[0], wb.shape[0]):
            raise ValidationError("cost matrix shape does not match the weights")
    if np.array_equal(wa, wb):
        return 0.0
    return _plan_from_cost(cost, wa, wb).cost


def barycentric_projection(plan: TransportPlan, source: DiscreteMeasure,
                           target: DiscreteMeasure) -> np.ndarray:
    """Map each source point to the mass-weighted average of its plan images.

    Returns an (n_source, d) array; row i is T(y_i) = sum_j P_ij x_j / sum_j P_ij.
    """
    if plan.shape != (source.n, target.n):
        raise ValidationError("plan shape does not match the given measures")
    num = np.zeros((source.n, target.dim))
    np.add.at(num, plan.source_idx, plan.mass[:, None] * target.points[plan.target_idx])
    den = np.bincount(plan.source_idx, weights=plan.mass, minlength=source.n)
    if np.any(den <= 0):
        raise ValidationError("plan leaves a source point without mass")
    return num / den[:, None]


def nested_w2sq(family_a, family_b, threads: int = 1) -> NestedCoupling:
    """Squared nested Wasserstein distance between two equal-size families
    with uniform outer weights, solved as an exact assignment problem."""
    fam_a = list(family_a)
    fam_b = list(family_b)
    if len(fam_a) != len(fam_b):
        raise ValidationError(f"family size mismatch: {len(fam_a)} vs {len(fam_b)}")
    n = len(fam_a)
    pairs = [(i, j) for i in range(n) for j in range(n)]
    costs = ordered_map(lambda ij: w2sq(fam_a[ij[0]], fam_b[ij[1]]), pairs, threads)
    cost = np.asarray(costs, dtype=np.float64).reshape(n, n)
    marg = np.full(n, 1.0 / n)
    plan = _plan_from_cost(cost, marg, marg.copy())
    # uniform marginals make every vertex a permutation scaled by 1/n
    perm = np.full(n, -1, dtype=np.int64)
    for i, j, m in zip(plan.source_idx, plan.target_idx, plan.mass):
        if m > 0.5 / n:
            perm[i] = j
    if np.any(perm < 0) or len(set(perm.tolist())) != n:
        raise RuntimeError("assignment solve did not return a permutation")
    return NestedCoupling(permutation=perm, value=float(plan.cost), cost_matrix=cost)


def save_plan(plan: TransportPlan, path) -> None:
    """Dump a plan as CSV rows (i, j, mass) under a cost header comment."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# cost={repr(float(plan.cost))}\n")
        for i, j, m in zip(plan.source_idx, plan.target_idx, plan.mass):
            fh.write(f"{int(i)},{int(j)},{repr(float(m))}\n")
