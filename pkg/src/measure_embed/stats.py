"""Statistics on measure families and their embeddings.

Pairwise-transport summaries (dispersion, within/between-class scatter and
the guarantees they keep under quantization), a fixed-weight free-support
barycenter, Gram-matrix PCA with its projection excess risk, linear
discriminant classification on PCA scores, and a stratified splitter.
"""

from __future__ import annotations

import numpy as np

from .core import Dataset, DiscreteMeasure, RngStream, ValidationError
from .ot import barycentric_projection, solve_ot, squared_distances, w2sq, \
    w2sq_shared_support
from .quantize import QuantizedFamily, cell_sq_diameters, mean_measure
from .embed_lot import LotEmbedding, lot_gram, lot_inner
from ._parallel import ordered_map


def _pairwise_w2sq(family, pairs, threads: int = 1):
    """w2sq over an explicit (i, j) pair list, using the shared-support
    shortcut when every measure sits on one support array."""
    shared = all(np.array_equal(m.points, family[0].points) for m in family[1:])
    if shared and len(family) > 1:
        cost = squared_distances(family[0].points, family[0].points)
        fn = lambda p: w2sq_shared_support(
            family[p[0]].weights, family[p[1]].weights, cost=cost)
    else:
        fn = lambda p: w2sq(family[p[0]], family[p[1]])
    return ordered_map(fn, pairs, threads)


def dispersion(family, threads: int = 1) -> float:
    """Average squared transport distance over all ordered pairs,
    (1/N^2) sum_ij W2^2(mu_i, mu_j)."""
    measures = list(family)
    n = len(measures)
    if n == 0:
        raise ValidationError("empty family")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    vals = _pairwise_w2sq(measures, pairs, threads)
    return 2.0 * float(np.sum(vals)) / n**2


def _class_indices(labels, cls):
    idx = [i for i, l in enumerate(labels) if l == cls]
    if not idx:
        raise ValidationError("unknown class id: %r" % (cls,))
    return idx


def wcss(family, labels, cls, threads: int = 1) -> float:
    """Within-class scatter of one class: the dispersion of its members."""
    measures = list(family)
    if len(measures) != len(labels):
        raise ValidationError("labels length does not match the family")
    idx = _class_indices(labels, cls)
    pairs = [(i, j) for a, i in enumerate(idx) for j in idx[a + 1:]]
    vals = _pairwise_w2sq(measures, pairs, threads)
    return 2.0 * float(np.sum(vals)) / len(idx) ** 2


def bcss(family, labels, cls_a, cls_b, threads: int = 1) -> float:
    """Between-class scatter: averaged squared distances across two classes."""
    measures = list(family)
    if len(measures) != len(labels):
        raise ValidationError("labels length does not match the family")
    ia = _class_indices(labels, cls_a)
    ib = _class_indices(labels, cls_b)
    pairs = [(i, j) for i in ia for j in ib]
    vals = _pairwise_w2sq(measures, pairs, threads)
    return float(np.sum(vals)) / (len(ia) * len(ib))


# ---------------------------------------------------------------------------
# barycenter


def free_support_barycenter(family, k: int, rng: RngStream | None = None,
                            iters: int = 50, tol: float = 1e-7,
                            init=None, threads: int = 1):
    """Uniform-weight K-point barycenter by alternating transport solves
    and support updates.

    Returns (measure, trace) where trace[t] is the barycenter functional
    (1/N) sum_i W2^2(candidate_t, mu_i); the trace never increases.
    """
    measures = list(family)
    n = len(measures)
    if n == 0:
        raise ValidationError("empty family")
    if k < 1:
        raise ValidationError("K must be at least 1")
    if init is not None:
        support = np.asarray(init, dtype=np.float64)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        if support.shape != (k, measures[0].dim):
            raise ValidationError("init must be a K x d point array")
        support = support.copy()
    else:
        if rng is None:
            raise ValidationError("need an rng when init is not given")
        first = measures[0]
        gen = rng.generator()
        take = min(k, first.n)
        try:
            idx = gen.choice(first.n, size=take, replace=False, p=first.weights)
        except ValueError:
            idx = gen.choice(first.n, size=take, replace=False)
        if k > first.n:
            extra = gen.choice(first.n, size=k - first.n, replace=True,
                               p=first.weights)
            idx = np.concatenate([idx, extra])
        support = first.points[idx].copy()

    trace = []
    for _ in range(max(1, iters)):
        candidate = DiscreteMeasure(support)
        mapped = np.zeros_like(support)
        cost = 0.0
        plans = ordered_map(lambda m: solve_ot(candidate, m), measures, threads)
        for m, plan in zip(measures, plans):
            mapped += barycentric_projection(plan, candidate, m)
            cost += plan.cost
        trace.append(cost / n)
        new_support = mapped / n
        move = float(np.max(np.linalg.norm(new_support - support, axis=1)))
        support = new_support
        if move < tol:
            break
    return DiscreteMeasure(support), np.array(trace)


# ---------------------------------------------------------------------------
# PCA on Gram matrices


class PcaResult:
    """Spectral summary of an embedding Gram matrix.

    scores rows are the embedded measures' coordinates on the principal
    directions; coefficients express each principal direction as a
    combination of the embedded data points.
    """

    __slots__ = ("eigenvalues", "scores", "coefficients", "centered")

    def __init__(self, eigenvalues, scores, coefficients, centered: bool):
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.coefficients = np.asarray(coefficients, dtype=np.float64)
        self.centered = bool(centered)

    @property
    def q(self) -> int:
        return self.eigenvalues.shape[0]


def _sym_eig_desc(g: np.ndarray):
    """Eigendecomposition sorted by descending eigenvalue with a sign
    convention (largest-magnitude entry of each vector positive)."""
    vals, vecs = np.linalg.eigh(g)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        pivot = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[pivot, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vals, vecs


def gram_pca(gram, q: int, centered: bool = False) -> PcaResult:
    """PCA of embedded data through its Gram matrix.

    scores column j is sqrt(lambda_j) u_j; coefficients column j is
    u_j / sqrt(lambda_j) (zero when the eigenvalue vanishes).
    """
    g = np.asarray(gram, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValidationError("Gram matrix must be square")
    n = g.shape[0]
    scale = max(1.0, float(np.abs(g).max()))
    if np.abs(g - g.T).max() > 1e-8 * scale:
        raise ValidationError("Gram matrix is not symmetric")
    if q < 1 or q > n:
        raise ValidationError("q must be between 1 and N")
    g = 0.5 * (g + g.T)
    if centered:
        j = np.eye(n) - np.full((n, n), 1.0 / n)
        g = j @ g @ j
        g = 0.5 * (g + g.T)
    vals, vecs = _sym_eig_desc(g)
    vals = vals[:q]
    vecs = vecs[:, :q]
    pos = np.sqrt(np.clip(vals, 0.0, None))
    scores = vecs * pos[None, :]
    with np.errstate(divide="ignore"):
        inv = np.where(pos > 0, 1.0 / np.where(pos > 0, pos, 1.0), 0.0)
    coefficients = vecs * inv[None, :]
    return PcaResult(vals, scores, coefficients, centered)


def pca_excess_risk(full, quantized, q: int) -> float:
    """How much covariance energy the quantized top-q principal subspace
    misses relative to the exact one.

    Both families are LOT embeddings over one shared reference; the result
    is tr(Sigma P_full) - tr(Sigma P_quantized) where Sigma is the
    (uncentered) covariance of the full embeddings and both projectors are
    rank q. Always >= -1e-8 tr(Sigma) since the exact subspace maximizes
    the captured energy.
    """
    full = list(full)
    quant = list(quantized)
    n = len(full)
    if n == 0 or len(quant) != n:
        raise ValidationError("families must be nonempty and equally sized")
    if q < 1 or q > n:
        raise ValidationError("q must be between 1 and N")
    ref_ids = {e.reference_id for e in full} | {e.reference_id for e in quant}
    if len(ref_ids) != 1:
        raise ValidationError("embeddings were built against different references")

    g_full = lot_gram(full)
    g_quant = lot_gram(quant)
    cross = np.zeros((n, n))
    for i in range(n):
        for l in range(n):
            cross[i, l] = lot_inner(full[i], quant[l])

    vals_full, _ = _sym_eig_desc(g_full)
    captured_full = float(np.sum(np.clip(vals_full[:q], 0.0, None))) / n

    vals_q, vecs_q = _sym_eig_desc(g_quant)
    floor = 1e-12 * max(float(vals_q[0]), 1.0) if vals_q.size else 0.0
    captured_quant = 0.0
    for j in range(q):
        if vals_q[j] <= floor:
            continue
        proj = cross @ vecs_q[:, j]
        captured_quant += float(proj @ proj) / float(vals_q[j])
    captured_quant /= n
    return captured_full - captured_quant


# ---------------------------------------------------------------------------
# LDA on score vectors


class LdaModel:
    """Linear discriminant classifier fitted on score vectors."""

    __slots__ = ("classes", "means", "covariance", "priors", "_weights", "_bias")

    def __init__(self, classes, means, covariance, priors):
        self.classes = list(classes)
        self.means = np.asarray(means, dtype=np.float64)
        self.covariance = np.asarray(covariance, dtype=np.float64)
        self.priors = np.asarray(priors, dtype=np.float64)
        solved = np.linalg.solve(self.covariance, self.means.T)
        self._weights = solved
        self._bias = (np.log(self.priors)
                      - 0.5 * np.einsum("cd,dc->c", self.means, solved))


def lda_fit(scores, labels, shrinkage: float | None = None) -> LdaModel:
    """Fit a linear discriminant rule with a shrunk pooled covariance.

    shrinkage None uses 1e-6 * trace / dim added to the diagonal; pass an
    absolute value to override (needed when the pooled covariance is 0).
    """
    x = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = list(labels)
    if x.shape[0] != len(labels):
        raise ValidationError("labels length does not match the score rows")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValidationError("need at least two classes")
    n, d = x.shape
    means = np.zeros((len(classes), d))
    priors = np.zeros(len(classes))
    pooled = np.zeros((d, d))
    for c, cls in enumerate(classes):
        rows = x[[i for i, l in enumerate(labels) if l == cls]]
        means[c] = rows.mean(axis=0)
        priors[c] = rows.shape[0] / n
        centered = rows - means[c]
        pooled += centered.T @ centered
    denom = max(n - len(classes), 1)
    pooled /= denom
    if shrinkage is None:
        shrinkage = 1e-6 * float(np.trace(pooled)) / d
    pooled = pooled + shrinkage * np.eye(d)
    try:
        np.linalg.cholesky(pooled)
    except np.linalg.LinAlgError:
        raise ValidationError(
            "singular pooled covariance; increase shrinkage") from None
    return LdaModel(classes, means, pooled, priors)


def lda_predict(model: LdaModel, scores):
    """Predicted class labels; ties resolve to the earliest class."""
    x = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if x.shape[1] != model.means.shape[1]:
        raise ValidationError("score dimension does not match the model")
    disc = x @ model._weights + model._bias[None, :]
    picks = np.argmax(disc, axis=1)
    return [model.classes[p] for p in picks]


def train_test_split(n: int, train_frac: float, rng: RngStream, labels=None):
    """Random (stratified when labels are given) train/test index split.

    Returns (train, test, stratified); stratified flips to False when some
    class has fewer than two members.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValidationError("train fraction must be strictly between 0 and 1")
    if n < 2:
        raise ValidationError("need at least two rows to split")
    gen = rng.generator()
    stratified = labels is not None
    if labels is not None:
        labels = list(labels)
        if len(labels) != n:
            raise ValidationError("labels length does not match n")
        counts = {}
        for l in labels:
            counts[l] = counts.get(l, 0) + 1
        if min(counts.values()) < 2:
            stratified = False
    if stratified:
        train = []
        test = []
        for cls in sorted(set(labels)):
            idx = np.array([i for i, l in enumerate(labels) if l == cls])
            idx = idx[gen.permutation(idx.size)]
            take = int(round(train_frac * idx.size))
            take = min(max(take, 1), idx.size - 1)
            train.extend(idx[:take].tolist())
            test.extend(idx[take:].tolist())
        train = np.array(sorted(train), dtype=np.int64)
        test = np.array(sorted(test), dtype=np.int64)
    else:
        perm = gen.permutation(n)
        take = int(round(train_frac * n))
        take = min(max(take, 1), n - 1)
        train = np.sort(perm[:take]).astype(np.int64)
        test = np.sort(perm[take:]).astype(np.int64)
    return train, test, stratified


# ---------------------------------------------------------------------------
# quantization guarantees


def dispersion_bound_check(family, qf: QuantizedFamily, lam=(0.5, 1.0, 2.0),
                           threads: int = 1) -> dict:
    """Evaluate the dispersion and pairwise-distance guarantees of a
    quantized family against the originals.

    For every lambda the quantized dispersion obeys
    SS(quantized) <= (1 + 2/lambda) SS(family) + (4 + 2 lambda) eps_K;
    for the shared-support scheme each pairwise distance obeys
    W2^2(q_i, q_j) <= 3 W2^2(mu_i, mu_j) + 6 max_cell_sq_diameter.
    Reports each inequality's slack (bound minus value).
    """
    measures = list(family)
    quantized = qf.measures()
    if len(quantized) != len(measures):
        raise ValidationError("quantized family size does not match the input")
    if np.isscalar(lam):
        lam = (float(lam),)
    ss_full = dispersion(measures, threads=threads)
    ss_quant = dispersion(quantized, threads=threads)
    report = {
        "ss_family": ss_full,
        "ss_quantized": ss_quant,
        "eps_k": qf.eps_k,
        "lambda_slack": {},
        "pairwise_slack_min": None,
        "max_cell_sq_diameter": None,
    }
    for l in lam:
        l = float(l)
        if l <= 0:
            raise ValidationError("lambda must be positive")
        bound = (1.0 + 2.0 / l) * ss_full + (4.0 + 2.0 * l) * qf.eps_k
        report["lambda_slack"][l] = bound - ss_quant
    if qf.shared_support:
        mm = mean_measure(Dataset(measures))
        diams = cell_sq_diameters(mm.points, qf.centers, mm.weights)
        dmax = float(diams.max())
        report["max_cell_sq_diameter"] = dmax
        n = len(measures)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        full_vals = _pairwise_w2sq(measures, pairs, threads)
        quant_vals = _pairwise_w2sq(quantized, pairs, threads)
        slack = [3.0 * f + 6.0 * dmax - qv
                 for f, qv in zip(full_vals, quant_vals)]
        report["pairwise_slack_min"] = float(min(slack)) if slack else 0.0
    return report
