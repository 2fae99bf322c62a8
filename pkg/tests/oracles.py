"""Independent reference implementations used to cross-check the library.

Everything here recomputes quantities from first principles with different
algorithms and different numerics than the package (direct coordinate
differences instead of expanded quadratic forms, exhaustive enumeration
instead of simplex pivoting), so agreement is meaningful.
"""

import itertools
import math

import numpy as np

from measure_embed import DiscreteMeasure


def direct_sq_dists(x, y):
    """Pairwise squared distances by direct coordinate differences."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2)


def min_permutation_cost(cost):
    """Exhaustive minimum of sum_i cost[i, sigma(i)] over all permutations."""
    n = cost.shape[0]
    best = math.inf
    best_perm = None
    for perm in itertools.permutations(range(n)):
        total = 0.0
        for i, p in enumerate(perm):
            total += cost[i, p]
        if total < best:
            best = total
            best_perm = perm
    return best, best_perm


def uniform_ot_cost(xa, xb):
    """Exact OT cost between uniform measures on two equal-size clouds,
    by brute force over permutations (masses 1/n along the matching)."""
    cost = direct_sq_dists(xa, xb)
    best, _ = min_permutation_cost(cost)
    return best / cost.shape[0]


def w2sq_1d(xs, wx, ys, wy):
    """1D squared Wasserstein distance via the sorted quantile coupling."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    wx = np.asarray(wx, dtype=np.float64)
    wy = np.asarray(wy, dtype=np.float64)
    wx = wx / wx.sum()
    wy = wy / wy.sum()
    ix = np.argsort(xs, kind="stable")
    iy = np.argsort(ys, kind="stable")
    xs, wx = xs[ix], wx[ix]
    ys, wy = ys[iy], wy[iy]
    total = 0.0
    i = j = 0
    ra = wx[0]
    rb = wy[0]
    while i < len(xs) and j < len(ys):
        m = ra if ra < rb else rb
        total += m * (xs[i] - ys[j]) ** 2
        ra -= m
        rb -= m
        if ra <= 0:
            i += 1
            if i < len(xs):
                ra = wx[i]
        if rb <= 0:
            j += 1
            if j < len(ys):
                rb = wy[j]
    return total


def kernel_double_sum(xa, wa, xb, wb, kfunc):
    """Plain O(n*m) double sum of wa_i wb_j k(xa_i, xb_j)."""
    total = 0.0
    for i in range(len(xa)):
        for j in range(len(xb)):
            total += wa[i] * wb[j] * kfunc(xa[i], xb[j])
    return total


def rbf_value(x, y, sigma):
    return math.exp(-float(((np.asarray(x) - np.asarray(y)) ** 2).sum()) / (2.0 * sigma * sigma))


def linear_plus_square_value(x, y):
    s = float(np.dot(np.asarray(x, float), np.asarray(y, float)))
    return s + s * s


def random_measure(gen, n, d, weighted=True, scale=1.0):
    """A random discrete measure for property tests."""
    pts = scale * (2.0 * gen.random((n, d)) - 1.0)
    w = gen.random(n) + 0.05 if weighted else None
    return DiscreteMeasure(pts, w)


def random_family(gen, n_measures, n_points, d, weighted=True, scale=1.0):
    return [random_measure(gen, n_points, d, weighted, scale) for _ in range(n_measures)]
