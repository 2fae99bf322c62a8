"""Synthetic families of affine pushforwards of a radial base measure.

Each measure is (R_i x + b_i)#base where the base distribution is R * Z/|Z|
(uniform radius, uniform direction) supported on the unit ball. For this
family both embedding Gram matrices have closed forms, which makes the
generator double as an oracle for convergence checks.
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
    _sample_unit_ball,
    save_dataset,
    save_matrix,
)
from ._parallel import ordered_map


class ShiftScalingParams:
    """Per-measure shift vectors and PSD scaling roots, plus sampling sizes.

    roots[i] is the symmetric PSD square root of the i-th covariance-like
    scaling; the generator applies x -> roots[i] x + shifts[i].
    """

    __slots__ = ("shifts", "roots", "labels", "m", "seed", "class_centers")

    def __init__(self, shifts, roots, m: int, seed: int, labels=None,
                 class_centers=None):
        shifts = np.asarray(shifts, dtype=np.float64)
        roots = np.asarray(roots, dtype=np.float64)
        if shifts.ndim != 2:
            raise ValidationError("shifts must be an N x d array")
        n, d = shifts.shape
        if roots.shape != (n, d, d):
            raise ValidationError("roots must be an N x d x d array")
        if not (np.all(np.isfinite(shifts)) and np.all(np.isfinite(roots))):
            raise ValidationError("parameters must be finite")
        for i in range(n):
            r = roots[i]
            if np.abs(r - r.T).max() > 1e-10 * max(1.0, np.abs(r).max()):
                raise ValidationError("root %d is not symmetric" % i)
            eig = np.linalg.eigvalsh(0.5 * (r + r.T))
            if eig.min() < -1e-10 * max(1.0, eig.max()):
                raise ValidationError("root %d is not positive semi-definite" % i)
        if labels is not None:
            labels = [str(l) for l in labels]
            if len(labels) != n:
                raise ValidationError("labels length does not match N")
        if m < 1:
            raise ValidationError("points per measure must be at least 1")
        self.shifts = shifts
        self.roots = roots
        self.labels = labels
        self.m = int(m)
        self.seed = int(seed)
        self.class_centers = (None if class_centers is None
                              else np.asarray(class_centers, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.shifts.shape[0]

    @property
    def d(self) -> int:
        return self.shifts.shape[1]


def sample_base(n: int, d: int, rng: RngStream) -> np.ndarray:
    """n base points: uniform radius times a uniform direction (norms <= 1)."""
    if n < 1 or d < 1:
        raise ValidationError("n and d must be positive")
    return _sample_unit_ball(rng.generator(), n, d)


def gen_dataset(params: ShiftScalingParams, threads: int = 1) -> Dataset:
    """Sample the family: measure i is uniform on R_i x_j + b_i with m fresh
    base points, deterministic per (seed, i)."""
    root_stream = RngStream(params.seed)

    def make(i: int) -> DiscreteMeasure:
        base = _sample_unit_ball(root_stream.child(i).generator(), params.m,
                                 params.d)
        return DiscreteMeasure(base @ params.roots[i].T + params.shifts[i])

    measures = ordered_map(make, list(range(params.n)), threads)
    return Dataset(measures, labels=params.labels)


def default_params(n: int, d: int, m: int, classes: int,
                   seed: int) -> ShiftScalingParams:
    """Random parameters with class structure.

    Class centers are drawn uniform on [-2, 2]^d, redrawn (bounded retries)
    until all pairwise center distances reach 1; shifts add within-class
    Gaussian scatter (std 0.5) to the class center; scaling roots are
    diagonal with entries uniform on [0.75, 1.5].
    """
    if n < 1 or classes < 1 or classes > n:
        raise ValidationError("need 1 <= classes <= N")
    rng = RngStream(seed)
    gen = rng.child(0).generator()
    centers = None
    for _ in range(200):
        cand = gen.uniform(-2.0, 2.0, size=(classes, d))
        if classes == 1:
            centers = cand
            break
        diff = cand[:, None, :] - cand[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=2))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= 1.0:
            centers = cand
            break
    if centers is None:
        raise ValidationError(
            "could not draw class centers at least 1 apart; "
            "use fewer classes or a higher dimension")
    cls = np.arange(n) % classes
    gen2 = rng.child(1).generator()
    shifts = centers[cls] + 0.5 * gen2.standard_normal((n, d))
    scales = gen2.uniform(0.75, 1.5, size=(n, d))
    roots = np.zeros((n, d, d))
    for i in range(n):
        np.fill_diagonal(roots[i], scales[i])
    labels = ["c%d" % c for c in cls]
    return ShiftScalingParams(shifts, roots, m=m, seed=seed, labels=labels,
                              class_centers=centers)


def true_lot_gram(params: ShiftScalingParams) -> np.ndarray:
    """Closed-form Gram of the displacement embeddings of the family against
    the radial base measure: b_i.b_j + <R_i - I, R_j - I>_F / (3d)."""
    d = params.d
    eye = np.eye(d)
    gram = params.shifts @ params.shifts.T
    dev = params.roots - eye[None, :, :]
    gram += np.einsum("ikl,jkl->ij", dev, dev) / (3.0 * d)
    return gram


def true_kme_gram(params: ShiftScalingParams) -> np.ndarray:
    """Closed-form Gram of the mean embeddings under x.y + (x.y)^2.

    Entry: b_i.b_j + (b_i.b_j)^2 + (b_i' S_j b_i + b_j' S_i b_j)/(3d)
    + <S_i, S_j>_F/(9 d^2) with S = R^2.
    """
    d = params.d
    sig = np.einsum("ikl,ilm->ikm", params.roots, params.roots)
    dots = params.shifts @ params.shifts.T
    gram = dots + dots**2
    quad = np.einsum("ik,jkl,il->ij", params.shifts, sig, params.shifts)
    gram += (quad + quad.T) / (3.0 * d)
    gram += np.einsum("ikl,jkl->ij", sig, sig) / (9.0 * d * d)
    return gram


def save_params(params: ShiftScalingParams, path) -> None:
    payload = {
        "n": params.n,
        "d": params.d,
        "m": params.m,
        "seed": params.seed,
        "labels": params.labels,
        "shifts": params.shifts.tolist(),
        "roots": params.roots.tolist(),
        "class_centers": (None if params.class_centers is None
                          else params.class_centers.tolist()),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> ShiftScalingParams:
    with open(path) as fh:
        payload = json.load(fh)
    return ShiftScalingParams(
        payload["shifts"], payload["roots"], m=payload["m"],
        seed=payload["seed"], labels=payload.get("labels"),
        class_centers=payload.get("class_centers"))


def save_synth(params: ShiftScalingParams, out_dir, threads: int = 1) -> str:
    """Generate and write the dataset directory together with the parameter
    record and both closed-form Gram matrices. Returns the manifest path."""
    ds = gen_dataset(params, threads=threads)
    manifest = save_dataset(ds, out_dir)
    save_params(params, os.path.join(out_dir, "params.json"))
    save_matrix(true_lot_gram(params), os.path.join(out_dir, "true_gram_lot.csv"))
    save_matrix(true_kme_gram(params), os.path.join(out_dir, "true_gram_kme.csv"))
    return manifest
