"""K-point quantization of discrete measures: k-means++ seeding, weighted
Lloyd iterations, Voronoi partitions with deterministic tie-breaking, and the
per-measure / mean-measure / random-subset quantization schemes."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ._parallel import ordered_map
from .core import (
    Dataset,
    DiscreteMeasure,
    RngStream,
    ValidationError,
    _weighted_distinct_indices,
    load_matrix,
    save_matrix,
    subsample_measure,
)
from .ot import squared_distances

__all__ = [
    "Centers",
    "VoronoiPartition",
    "QuantizedFamily",
    "voronoi_assign",
    "kmeanspp_init",
    "lloyd",
    "quantization_error",
    "quantize_each",
    "mean_measure",
    "quantize_mean",
    "random_subset_quantize",
    "cell_sq_diameters",
    "grid_centers",
    "save_quantized",
    "load_quantized",
]

# chunk row count so distance blocks stay around 32 MB
_CHUNK_FLOATS = 4_000_000


@dataclass(frozen=True)
class Centers:
    """An ordered set of pairwise-distinct quantization centers.

    The row order is the enumeration used for tie-breaking: a point that is
    equidistant from several centers belongs to the lowest-index one.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError(f"centers must form a (K, d) array, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("centers must be finite")
        if pts.shape[0] > 1:
            d2 = squared_distances(pts, pts)
            np.fill_diagonal(d2, np.inf)
            if float(d2.min()) <= 1e-24:
                raise ValidationError("duplicate centers (closer than 1e-12)")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class VoronoiPartition:
    """Assignment of points to cells of a center set, with cell masses."""

    assignment: np.ndarray  # (n,) index of the owning cell per point
    cell_masses: np.ndarray  # (K,) total input weight per cell


@dataclass(frozen=True)
class QuantizedFamily:
    """K-point approximations of a family of N measures.

    ``centers`` is a single shared Centers for the mean-measure scheme and a
    list of N Centers otherwise. ``weights`` holds one simplex row per
    measure. ``eps_k`` is the scheme's quantization error: the average squared
    quantization cost for per-measure schemes, and the mean-measure
    quantization error of the full mean measure for the shared scheme.
    """

    scheme: str
    centers: object
    weights: np.ndarray
    eps_k: float
    seed: int
    lloyd_iters: tuple = field(default=())

    def __post_init__(self):
        if self.scheme not in ("per-measure", "mean-measure", "random-subset"):
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValidationError("weights must be an (N, K) array")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("every weight row must sum to 1")
        if self.eps_k < 0:
            raise ValidationError("quantization error cannot be negative")

    @property
    def shared_support(self) -> bool:
        return self.scheme == "mean-measure"

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[1]

    def centers_of(self, i: int) -> Centers:
        return self.centers if self.shared_support else self.centers[i]

    def measures(self) -> list:
        """Materialize the quantized measures as DiscreteMeasure objects."""
        return [DiscreteMeasure(self.centers_of(i).points, self.weights[i])
                for i in range(self.n)]


def _nearest_center(points: np.ndarray, cpoints: np.ndarray):
    """Chunked nearest-center query; returns (assignment, squared distance)."""
    n = points.shape[0]
    k = cpoints.shape[0]
    assign = np.empty(n, dtype=np.int64)
    mind = np.empty(n, dtype=np.float64)
    step = max(1, _CHUNK_FLOATS // max(k, 1))
    for s in range(0, n, step):
        e = min(n, s + step)
        d = squared_distances(points[s:e], cpoints)
        a = np.argmin(d, axis=1)
        assign[s:e] = a
        mind[s:e] = np.take_along_axis(d, a[:, None], axis=1)[:, 0]
    return assign, mind


def voronoi_assign(points, centers: Centers, weights=None) -> VoronoiPartition:
    """Assign each point to its nearest center, lowest index winning ties.

    Cell masses are the summed weights per cell (uniform 1/n weights when
    none are given).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[1] != centers.dim:
        raise ValidationError(f"points have dim {pts.shape[1]}, centers {centers.dim}")
    assign, _ = _nearest_center(pts, centers.points)
    if weights is None:
        weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        weights = np.asarray(weights, dtype=np.float64)
    masses = np.bincount(assign, weights=weights, minlength=centers.k)
    return VoronoiPartition(assignment=assign, cell_masses=masses)


def quantization_error(m: DiscreteMeasure, centers: Centers) -> float:
    """Weighted average squared distance from the measure to its nearest
    centers: sum_j w_j min_k ||x_k - p_j||^2."""
    _, mind = _nearest_center(m.points, centers.points)
    return float(m.weights @ mind)


def _distinct_count(points: np.ndarray) -> int:
    return np.unique(points, axis=0).shape[0]


def kmeanspp_init(m: DiscreteMeasure, k: int, rng: RngStream) -> Centers:
    """k-means++ seeding: the first center is drawn by weight, each next one
    by weight times squared distance to the nearest chosen center."""
    k = int(k)
    if k < 1:
        raise ValidationError("K must be >= 1")
    if _distinct_count(m.points) < k:
        raise ValidationError(f"needs at least {k} distinct support points")
    gen = rng.generator()
    pts = m.points
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = gen.choice(m.n, p=m.weights)
    d2 = squared_distances(pts, pts[chosen[0]][None, :])[:, 0]
    for t in range(1, k):
        probs = m.weights * d2
        total = probs.sum()
        if total > 0:
            idx = int(gen.choice(m.n, p=probs / total))
        else:
            # remaining mass sits on chosen locations; fall back to the
            # zero-weight points that are still geometrically distinct
            candidates = np.flatnonzero(d2 > 0)
            idx = int(candidates[gen.integers(candidates.size)])
        chosen[t] = idx
        np.minimum(d2, squared_distances(pts, pts[idx][None, :])[:, 0], out=d2)
    return Centers(pts[chosen])


def augment_centers(m: DiscreteMeasure, centers: Centers, k: int,
                    rng: RngStream) -> Centers:
    """Grow a center set to k points, keeping the existing centers and adding
    support points of m drawn with probability proportional to weighted
    squared distance from the current set.

    Adding centers never increases the quantization error, so augmenting a
    smaller-K solution seeds the search at a larger K from a cost no worse
    than the smaller K achieved.
    """
    k = int(k)
    if centers.dim != m.dim:
        raise ValidationError("centers dimension mismatch")
    if centers.k > k:
        raise ValidationError("cannot shrink a center set; k is below the current size")
    if centers.k == k:
        return centers
    gen = rng.generator()
    pts = m.points
    grown = np.array(centers.points)
    _, d2 = _nearest_center(pts, grown)
    for _ in range(k - centers.k):
        probs = m.weights * d2
        total = probs.sum()
        if total > 0:
            idx = int(gen.choice(m.n, p=probs / total))
        else:
            candidates = np.flatnonzero(d2 > 0)
            if candidates.size == 0:
                raise ValidationError(
                    "not enough distinct support points to grow the centers")
            idx = int(candidates[gen.integers(candidates.size)])
        grown = np.vstack([grown, pts[idx][None, :]])
        np.minimum(d2, squared_distances(pts, pts[idx][None, :])[:, 0], out=d2)
    return Centers(grown)


def _reseed_cell(pts, w, cpoints, valid):
    """Pick the support point with the largest weighted squared distance to
    the nearest valid center; breaks ties by the lowest point index."""
    _, mind = _nearest_center(pts, cpoints[valid])
    scores = w * mind
    idx = int(np.argmax(scores))
    if scores[idx] <= 0:
        idx = int(np.argmax(mind))
        if mind[idx] <= 0:
            raise ValidationError("not enough distinct support points to reseed a center")
    return pts[idx]


def lloyd(m: DiscreteMeasure, init: Centers, max_iter: int = 100,
          rel_tol: float = 1e-7):
    """Weighted Lloyd iterations from a given initialization.

    Alternates nearest-center assignment and weighted cell means until the
    objective sum_j w_j min_k ||x_k - p_j||^2 stalls (relative decrease below
    rel_tol) or max_iter is reached. Empty cells are reseeded to the support
    point farthest (in weighted squared distance) from the surviving centers,
    which keeps the objective non-increasing and the centers distinct.

    Returns (Centers, objective trace).
    """
    if max_iter < 1:
        raise ValidationError("max_iter must be >= 1")
    if init.dim != m.dim:
        raise ValidationError("init centers dimension mismatch")
    pts, w = m.points, m.weights
    k = init.k
    centers = np.array(init.points)
    trace = []
    prev = None
    for _ in range(max_iter):
        assign, mind = _nearest_center(pts, centers)
        obj = float(w @ mind)
        trace.append(obj)
        if prev is not None and prev - obj <= rel_tol * prev:
            break
        prev = obj
        if obj <= 0.0:
            break
        mass = np.bincount(assign, weights=w, minlength=k)
        new = np.zeros_like(centers)
        for dd in range(centers.shape[1]):
            new[:, dd] = np.bincount(assign, weights=w * pts[:, dd], minlength=k)
        nonempty = mass > 0
        new[nonempty] /= mass[nonempty, None]
        for kk in np.flatnonzero(~nonempty):
            new[kk] = _reseed_cell(pts, w, new, nonempty.copy())
            nonempty[kk] = True
        centers = _separate_centers(pts, w, new)
    return Centers(centers), np.asarray(trace)


def _separate_centers(pts, w, centers):
    """Reseed any center that collapsed onto an earlier one."""
    k = centers.shape[0]
    if k == 1:
        return centers
    d2 = squared_distances(centers, centers)
    np.fill_diagonal(d2, np.inf)
    for kk in range(1, k):
        if float(d2[kk, :kk].min()) <= 1e-24:
            valid = np.ones(k, dtype=bool)
            valid[kk] = False
            centers[kk] = _reseed_cell(pts, w, centers, valid)
            d2 = squared_distances(centers, centers)
            np.fill_diagonal(d2, np.inf)
    return centers


def _quantize_one(m: DiscreteMeasure, k: int, rng: RngStream, max_iter: int,
                  rel_tol: float, restarts: int, extra_init=None):
    """Best-of-restarts k-means++ plus Lloyd for a single measure.

    extra_init, when given, is a smaller-or-equal center set (for example the
    solution at a smaller K) that joins the competition after being grown to
    k points.
    """
    best = None
    for r in range(restarts):
        stream = rng.child(r)
        init = kmeanspp_init(m, k, stream)
        centers, trace = lloyd(m, init, max_iter=max_iter, rel_tol=rel_tol)
        err = quantization_error(m, centers)
        if best is None or err < best[0]:
            best = (err, centers, len(trace))
    if extra_init is not None:
        init = augment_centers(m, extra_init, k, rng.child(restarts))
        centers, trace = lloyd(m, init, max_iter=max_iter, rel_tol=rel_tol)
        err = quantization_error(m, centers)
        if err < best[0]:
            best = (err, centers, len(trace))
    return best


def quantize_each(ds: Dataset, k: int, rng: RngStream, max_iter: int = 100,
                  rel_tol: float = 1e-7, restarts: int = 1,
                  threads: int = 1, extra_inits=None) -> QuantizedFamily:
    """Quantize every measure separately; weights are its own Voronoi cell
    masses and eps_k averages the per-measure quantization errors.

    extra_inits (optional, one Centers per measure) adds nested candidate
    initializations, guaranteeing eps_k at this K is no worse than the run
    that produced them.
    """
    k = int(k)
    for i, m in enumerate(ds.measures):
        if _distinct_count(m.points) < k:
            raise ValidationError(
                f"measure {ds.ids[i]}: needs at least {k} distinct support points"
            )
    if extra_inits is not None and len(extra_inits) != len(ds):
        raise ValidationError("extra_inits length does not match the dataset")

    def work(i):
        m = ds.measures[i]
        extra = None if extra_inits is None else extra_inits[i]
        err, centers, iters = _quantize_one(m, k, rng.child(i), max_iter,
                                            rel_tol, restarts, extra_init=extra)
        part = voronoi_assign(m.points, centers, m.weights)
        return err, centers, part.cell_masses, iters

    results = ordered_map(work, range(len(ds)), threads)
    errs = np.array([r[0] for r in results])
    centers = [r[1] for r in results]
    weights = np.vstack([r[2] for r in results])
    iters = tuple(int(r[3]) for r in results)
    return QuantizedFamily(scheme="per-measure", centers=centers, weights=weights,
                           eps_k=float(errs.mean()), seed=rng.seed, lloyd_iters=iters)


def mean_measure(ds: Dataset, subsample=None, rng: RngStream | None = None) -> DiscreteMeasure:
    """The average measure: concatenated supports with weights divided by N,
    optionally replaced by an i.i.d. subsample of the given size."""
    pts = np.vstack([m.points for m in ds.measures])
    w = np.concatenate([m.weights for m in ds.measures]) / len(ds)
    full = DiscreteMeasure(pts, w)
    if subsample is None:
        return full
    if rng is None:
        raise ValidationError("subsampling the mean measure requires an rng")
    return subsample_measure(full, int(subsample), rng)


def quantize_mean(ds: Dataset, k: int, rng: RngStream, max_iter: int = 100,
                  rel_tol: float = 1e-7, restarts: int = 1, subsample="auto",
                  threads: int = 1, extra_init=None) -> QuantizedFamily:
    """Quantize the mean measure once and reuse its centers for every
    measure, each keeping its own Voronoi cell masses as weights.

    Lloyd runs on a subsample of the mean measure (default size: the average
    input support size); eps_k is always the quantization error of the full
    mean measure, which keeps the exact identities on eps_k intact.

    extra_init (optional Centers) adds nested candidates grown from a
    smaller-K solution; the final pick minimizes the full-mean error, so
    eps_k can then never exceed the error of extra_init.
    """
    k = int(k)
    full = mean_measure(ds)
    if subsample == "auto":
        subsample = int(np.ceil(sum(m.n for m in ds.measures) / len(ds)))
    if subsample is not None and int(subsample) >= full.n:
        subsample = None
    fit = full if subsample is None else subsample_measure(full, int(subsample), rng.child(0))
    if fit is not full and _distinct_count(fit.points) < k:
        # subsample too small to seed K centers; fit on the full mean measure
        fit = full
    if _distinct_count(fit.points) < k:
        raise ValidationError(f"mean measure needs at least {k} distinct support points")
    err, centers, iters = _quantize_one(fit, k, rng.child(1), max_iter, rel_tol, restarts)
    if extra_init is not None:
        grown = augment_centers(full, extra_init, k, rng.child(2))
        refined, _ = lloyd(fit, grown, max_iter=max_iter, rel_tol=rel_tol)
        candidates = [centers, grown, refined]
        errors = [quantization_error(full, c) for c in candidates]
        centers = candidates[int(np.argmin(errors))]

    def weights_of(m):
        return voronoi_assign(m.points, centers, m.weights).cell_masses

    weights = np.vstack(ordered_map(weights_of, ds.measures, threads))
    eps = quantization_error(full, centers)
    return QuantizedFamily(scheme="mean-measure", centers=centers, weights=weights,
                           eps_k=eps, seed=rng.seed, lloyd_iters=(int(iters),))


def random_subset_quantize(ds: Dataset, k: int, rng: RngStream,
                           threads: int = 1) -> QuantizedFamily:
    """Baseline scheme: per measure, K support points sampled without
    replacement by weight (no Lloyd refinement), Voronoi cell masses as
    weights, eps_k the average cost against those unrefined centers."""
    k = int(k)
    for i, m in enumerate(ds.measures):
        if _distinct_count(m.points) < k:
            raise ValidationError(
                f"measure {ds.ids[i]}: needs at least {k} distinct support points"
            )

    def work(i):
        m = ds.measures[i]
        gen = rng.child(i).generator()
        idx = _weighted_distinct_indices(m.points, m.weights, k, gen)
        centers = Centers(m.points[idx])
        part = voronoi_assign(m.points, centers, m.weights)
        return quantization_error(m, centers), centers, part.cell_masses

    results = ordered_map(work, range(len(ds)), threads)
    errs = np.array([r[0] for r in results])
    centers = [r[1] for r in results]
    weights = np.vstack([r[2] for r in results])
    return QuantizedFamily(scheme="random-subset", centers=centers, weights=weights,
                           eps_k=float(errs.mean()), seed=rng.seed,
                           lloyd_iters=tuple(0 for _ in results))


def cell_sq_diameters(points, centers: Centers, weights=None) -> np.ndarray:
    """Squared diameter of every Voronoi cell, measured over the input points
    assigned to the cell together with the cell's center. Empty cells get 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    part = voronoi_assign(pts, centers)
    out = np.zeros(centers.k)
    for kk in range(centers.k):
        cell = pts[part.assignment == kk]
        group = np.vstack([cell, centers.points[kk][None, :]])
        d2 = squared_distances(group, group)
        out[kk] = float(d2.max())
    return out


def grid_centers(k: int, d: int) -> Centers:
    """Midpoint grid of s^d centers in [0,1]^d with s = floor(K**(1/d)): the
    coordinates ((2a-1)/(2s)) for a in {1..s}^d, enumerated lexicographically.
    Its cells restricted to the cube all have squared diameter d/s^2."""
    k = int(k)
    d = int(d)
    if k < 1 or d < 1:
        raise ValidationError("K and d must be >= 1")
    s = int(np.floor(k ** (1.0 / d)))
    # guard against floating-point underestimation of an exact root
    while (s + 1) ** d <= k:
        s += 1
    while s ** d > k:
        s -= 1
    if s < 1:
        raise ValidationError("K too small for a grid in this dimension")
    axis = (2.0 * np.arange(1, s + 1) - 1.0) / (2.0 * s)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return Centers(pts)


def save_quantized(qf: QuantizedFamily, out_dir) -> None:
    """Serialize a quantized family: centers CSV(s), weights.csv, meta.json."""
    os.makedirs(out_dir, exist_ok=True)
    if qf.shared_support:
        save_matrix(qf.centers.points, os.path.join(out_dir, "centers.csv"))
    else:
        for i in range(qf.n):
            save_matrix(qf.centers[i].points, os.path.join(out_dir, f"centers_{i}.csv"))
    save_matrix(qf.weights, os.path.join(out_dir, "weights.csv"))
    meta = {
        "scheme": qf.scheme,
        "K": qf.k,
        "seed": qf.seed,
        "eps_K": qf.eps_k,
        "lloyd_iters": list(qf.lloyd_iters),
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_quantized(in_dir) -> QuantizedFamily:
    """Load a quantized family serialized by save_quantized."""
    meta_path = os.path.join(in_dir, "meta.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"meta.json not found in {in_dir}") from None
    weights = load_matrix(os.path.join(in_dir, "weights.csv"))
    scheme = meta["scheme"]
    if scheme == "mean-measure":
        centers = Centers(load_matrix(os.path.join(in_dir, "centers.csv")))
    else:
        centers = [Centers(load_matrix(os.path.join(in_dir, f"centers_{i}.csv")))
                   for i in range(weights.shape[0])]
    return QuantizedFamily(scheme=scheme, centers=centers, weights=weights,
                           eps_k=float(meta["eps_K"]), seed=int(meta["seed"]),
                           lloyd_iters=tuple(meta.get("lloyd_iters", ())))
