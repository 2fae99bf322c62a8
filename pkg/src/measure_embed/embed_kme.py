"""Kernel mean embeddings of discrete measures.

Exact Gram matrices and MMD through kernel double sums, random Fourier
features for the rbf kernel, and a Nystrom compression that represents the
mean embedding of a measure by K weighted landmark functions.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .core import (
    Dataset,
    DiscreteMeasure,
    RngStream,
    ValidationError,
    _weighted_distinct_indices,
    load_matrix,
    save_matrix,
)
from .ot import squared_distances
from ._parallel import ordered_map

KERNEL_KINDS = ("rbf", "linear", "linear-plus-square")

# block size (in floats) for chunked kernel double sums
_CHUNK_FLOATS = 4_000_000


class Kernel:
    """A symmetric positive-definite kernel of one of three kinds.

    rbf uses exp(-|x-y|^2 / (2 sigma^2)); linear is x.y; linear-plus-square
    is x.y + (x.y)^2.
    """

    __slots__ = ("kind", "sigma")

    def __init__(self, kind: str, sigma: float | None = None):
        if kind not in KERNEL_KINDS:
            raise ValidationError("unknown kernel kind: %r" % (kind,))
        if kind == "rbf":
            if sigma is None or not np.isfinite(sigma) or sigma <= 0:
                raise ValidationError("rbf kernel needs sigma > 0")
            sigma = float(sigma)
        else:
            sigma = None
        self.kind = kind
        self.sigma = sigma

    def cross(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Matrix of k(x_i, y_j) values."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if self.kind == "rbf":
            return np.exp(squared_distances(x, y) / (-2.0 * self.sigma**2))
        prod = x @ y.T
        if self.kind == "linear":
            return prod
        return prod + prod**2

    def __eq__(self, other):
        return (isinstance(other, Kernel) and other.kind == self.kind
                and other.sigma == self.sigma)

    def __hash__(self):
        return hash((self.kind, self.sigma))

    def __repr__(self):
        if self.kind == "rbf":
            return "Kernel('rbf', sigma=%r)" % (self.sigma,)
        return "Kernel(%r)" % (self.kind,)


def _weighted_double_sum(kernel: Kernel, x, wa, y, wb) -> float:
    """sum_{k,l} wa_k wb_l k(x_k, y_l), blocked to bound memory."""
    n = x.shape[0]
    block = max(1, _CHUNK_FLOATS // max(1, n))
    acc = 0.0
    for start in range(0, y.shape[0], block):
        stop = min(start + block, y.shape[0])
        acc += float(wa @ (kernel.cross(x, y[start:stop]) @ wb[start:stop]))
    return acc


def kme_inner(a: DiscreteMeasure, b: DiscreteMeasure, kernel: Kernel) -> float:
    """Inner product of the two mean embeddings in the kernel's RKHS."""
    if a.dim != b.dim:
        raise ValidationError("measures live in different dimensions")
    return _weighted_double_sum(kernel, a.points, a.weights, b.points, b.weights)


def kme_gram(family, kernel: Kernel, threads: int = 1) -> np.ndarray:
    """Gram matrix of pairwise mean-embedding inner products."""
    measures = list(family)
    n = len(measures)
    if n == 0:
        raise ValidationError("empty family")
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise ValidationError("family mixes dimensions")
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    vals = ordered_map(
        lambda p: kme_inner(measures[p[0]], measures[p[1]], kernel), pairs, threads)
    gram = np.zeros((n, n))
    for (i, j), v in zip(pairs, vals):
        gram[i, j] = v
        gram[j, i] = v
    return gram


def mmd(a: DiscreteMeasure, b: DiscreteMeasure, kernel: Kernel) -> float:
    """Maximum mean discrepancy between two discrete measures."""
    gaa = kme_inner(a, a, kernel)
    gab = kme_inner(a, b, kernel)
    gbb = kme_inner(b, b, kernel)
    return float(np.sqrt(max(gaa - 2.0 * gab + gbb, 0.0)))


# ---------------------------------------------------------------------------
# random Fourier features


class RffMap:
    """Random Fourier feature map for an rbf kernel.

    Features are s/2 sines followed by s/2 cosines of frequency projections.
    With `raw=False` features carry the sqrt(2/s) factor that makes
    feature inner products unbiased estimates of the kernel; `raw=True`
    keeps the unnormalized trigonometric values.
    """

    __slots__ = ("frequencies", "sigma", "raw", "seed")

    def __init__(self, frequencies, sigma: float, raw: bool = False, seed=None):
        freqs = np.asarray(frequencies, dtype=np.float64)
        if freqs.ndim != 2 or freqs.shape[0] < 1:
            raise ValidationError("frequencies must be a nonempty 2d array")
        if not np.all(np.isfinite(freqs)):
            raise ValidationError("frequencies must be finite")
        freqs = freqs.copy()
        freqs.setflags(write=False)
        self.frequencies = freqs
        self.sigma = float(sigma)
        self.raw = bool(raw)
        self.seed = seed

    @property
    def s(self) -> int:
        return 2 * self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    def features(self, x) -> np.ndarray:
        """(n, s) feature matrix for a point array."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        proj = x @ self.frequencies.T
        feats = np.concatenate([np.sin(proj), np.cos(proj)], axis=1)
        if not self.raw:
            feats *= np.sqrt(2.0 / self.s)
        return feats


def rff_map(kernel: Kernel, d: int, s: int, rng: RngStream,
            raw: bool = False) -> RffMap:
    """Draw s/2 Gaussian frequencies matching the rbf bandwidth."""
    if kernel.kind != "rbf":
        raise ValidationError("random Fourier features need an rbf kernel")
    if s < 2 or s % 2 != 0:
        raise ValidationError("feature count s must be even and at least 2")
    if d < 1:
        raise ValidationError("dimension must be positive")
    gen = rng.generator()
    freqs = gen.standard_normal((s // 2, d)) / kernel.sigma
    return RffMap(freqs, kernel.sigma, raw=raw, seed=(rng.seed, rng.stream))


def rff_embed(m: DiscreteMeasure, fmap: RffMap) -> np.ndarray:
    """Weighted average feature vector of a measure (length s)."""
    if m.dim != fmap.dim:
        raise ValidationError("measure and feature map dimensions differ")
    return m.weights @ fmap.features(m.points)


def save_rff(fmap: RffMap, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_matrix(fmap.frequencies, os.path.join(out_dir, "frequencies.csv"))
    desc = {"sigma": fmap.sigma, "s": fmap.s, "raw": fmap.raw,
            "seed": list(fmap.seed) if fmap.seed is not None else None}
    with open(os.path.join(out_dir, "rff.json"), "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_rff(in_dir) -> RffMap:
    with open(os.path.join(in_dir, "rff.json")) as fh:
        desc = json.load(fh)
    freqs = load_matrix(os.path.join(in_dir, "frequencies.csv"))
    seed = tuple(desc["seed"]) if desc.get("seed") is not None else None
    fmap = RffMap(freqs, desc["sigma"], raw=desc["raw"], seed=seed)
    if fmap.s != desc["s"]:
        raise ValidationError("frequency file does not match the recorded size")
    return fmap


# ---------------------------------------------------------------------------
# Nystrom compression


class NystromKme:
    """Mean embedding compressed onto K landmark kernel functions."""

    __slots__ = ("landmarks", "alpha", "ridge", "kernel")

    def __init__(self, landmarks, alpha, ridge: float, kernel: Kernel):
        lm = np.asarray(landmarks, dtype=np.float64)
        if lm.ndim == 1:
            lm = lm.reshape(-1, 1)
        al = np.asarray(alpha, dtype=np.float64)
        if lm.ndim != 2 or lm.shape[0] < 1:
            raise ValidationError("need at least one landmark")
        if al.shape != (lm.shape[0],):
            raise ValidationError("alpha length does not match the landmarks")
        if not (np.all(np.isfinite(lm)) and np.all(np.isfinite(al))):
            raise ValidationError("landmarks and alpha must be finite")
        lm = lm.copy()
        al = al.copy()
        lm.setflags(write=False)
        al.setflags(write=False)
        self.landmarks = lm
        self.alpha = al
        self.ridge = float(ridge)
        self.kernel = kernel

    @property
    def k(self) -> int:
        return self.landmarks.shape[0]


def nystrom_fit(m: DiscreteMeasure, k: int, kernel: Kernel,
                ridge: float | None = None, rng: RngStream | None = None,
                landmark_indices=None) -> NystromKme:
    """Project the mean embedding of m onto K landmark kernel functions.

    Landmarks are drawn from the support of m without replacement,
    proportionally to the weights; alpha solves the regularized normal
    equations (K_LL + ridge I) alpha = K_Lm w.
    """
    if landmark_indices is None:
        if rng is None:
            raise ValidationError("need an rng when landmarks are not given")
        idx = _weighted_distinct_indices(m.points, m.weights, k, rng.generator())
    else:
        idx = np.asarray(landmark_indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size < 1:
            raise ValidationError("landmark indices must be a nonempty 1d array")
        if np.any(idx < 0) or np.any(idx >= m.n):
            raise ValidationError("landmark index out of range")
    landmarks = m.points[idx]
    kll = kernel.cross(landmarks, landmarks)
    if ridge is None:
        ridge = 1e-8 * float(np.trace(kll)) / landmarks.shape[0]
    klm_w = kernel.cross(landmarks, m.points) @ m.weights
    system = kll + ridge * np.eye(landmarks.shape[0])
    try:
        alpha = np.linalg.solve(system, klm_w)
    except np.linalg.LinAlgError:
        raise ValidationError(
            "singular landmark system; use a positive ridge") from None
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("singular landmark system; use a positive ridge")
    return NystromKme(landmarks, alpha, ridge, kernel)


def nystrom_residual(fit: NystromKme, m: DiscreteMeasure) -> float:
    """Squared RKHS distance between the compressed and exact embeddings."""
    kernel = fit.kernel
    mm = _weighted_double_sum(kernel, m.points, m.weights, m.points, m.weights)
    lm = kernel.cross(fit.landmarks, m.points) @ m.weights
    ll = kernel.cross(fit.landmarks, fit.landmarks)
    return float(mm - 2.0 * fit.alpha @ lm + fit.alpha @ ll @ fit.alpha)


def nystrom_inner(a: NystromKme, b: NystromKme) -> float:
    if a.kernel != b.kernel:
        raise ValidationError("fits use different kernels")
    return float(a.alpha @ a.kernel.cross(a.landmarks, b.landmarks) @ b.alpha)


def nystrom_gram(family, threads: int = 1) -> np.ndarray:
    """Gram matrix of pairwise inner products of compressed embeddings."""
    fits = list(family)
    n = len(fits)
    if n == 0:
        raise ValidationError("empty family")
    for f in fits[1:]:
        if f.kernel != fits[0].kernel:
            raise ValidationError("fits use different kernels")
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    vals = ordered_map(lambda p: nystrom_inner(fits[p[0]], fits[p[1]]), pairs, threads)
    gram = np.zeros((n, n))
    for (i, j), v in zip(pairs, vals):
        gram[i, j] = v
        gram[j, i] = v
    return gram


# ---------------------------------------------------------------------------
# bandwidth selection


def median_heuristic(ds: Dataset, pair_budget: int = 100_000,
                     rng: RngStream | None = None) -> float:
    """Bandwidth sigma from the median intra-measure squared distance.

    Uses every within-measure pair when the total fits in the budget,
    otherwise samples pairs (measures chosen proportionally to their pair
    counts).
    """
    if pair_budget < 1:
        raise ValidationError("pair budget must be positive")
    counts = np.array([m.n * (m.n - 1) // 2 for m in ds.measures], dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise ValidationError("no measure has two points; set sigma manually")
    sq = []
    if total <= pair_budget:
        for m in ds.measures:
            if m.n < 2:
                continue
            d2 = squared_distances(m.points, m.points)
            iu = np.triu_indices(m.n, k=1)
            sq.append(d2[iu])
    else:
        if rng is None:
            raise ValidationError("need an rng to subsample pairs")
        gen = rng.generator()
        which = gen.choice(len(ds.measures), size=pair_budget, p=counts / total)
        for i in np.unique(which):
            m = ds.measures[int(i)]
            npairs = int(np.sum(which == i))
            a = gen.integers(0, m.n, size=npairs)
            b = gen.integers(0, m.n - 1, size=npairs)
            b = np.where(b >= a, b + 1, b)
            diff = m.points[a] - m.points[b]
            sq.append(np.sum(diff * diff, axis=1))
    med = float(np.median(np.concatenate(sq)))
    if med <= 0.0:
        raise ValidationError(
            "median pairwise distance is zero; set sigma manually")
    return float(np.sqrt(med))
