"""Linearized optimal transport embeddings against a fixed reference sample.

Each input measure is pushed onto the reference discretization through the
barycentric projection of an exact optimal plan; the embedding is the
displacement field T(y_j) - y_j sampled at the reference points.  Inner
products between embeddings are uniform averages over the reference sample,
so every embedding in a family must be built against the same reference.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .core import (
    DiscreteMeasure,
    RngStream,
    ValidationError,
    _sample_unit_ball,
    load_matrix,
    save_matrix,
)
from .ot import barycentric_projection, solve_ot
from ._parallel import ordered_map

REFERENCE_KINDS = ("uniform-cube", "unit-ball-radial", "external-file")


def _fingerprint(kind: str, points: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(kind.encode())
    h.update(str(points.shape).encode())
    h.update(np.ascontiguousarray(points, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


class ReferenceMeasure:
    """A uniform sample y_1..y_m0 standing in for the reference measure.

    The fingerprint ties embeddings to the exact sample they were built
    against; mixing references in one Gram matrix is rejected.
    """

    __slots__ = ("points", "kind", "seed", "reference_id")

    def __init__(self, points, kind: str, seed=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValidationError("reference needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("reference points must be finite")
        if kind not in REFERENCE_KINDS:
            raise ValidationError("unknown reference kind: %r" % (kind,))
        pts = pts.copy()
        pts.setflags(write=False)
        self.points = pts
        self.kind = kind
        self.seed = seed
        self.reference_id = _fingerprint(kind, pts)

    @property
    def m0(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.points)

    def __repr__(self):
        return "ReferenceMeasure(kind=%r, m0=%d, dim=%d)" % (
            self.kind, self.m0, self.dim)


class LotEmbedding:
    """Displacement field of one measure over the reference sample."""

    __slots__ = ("values", "reference_id")

    def __init__(self, values, reference_id: str):
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError("embedding values must be a 2d array")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("embedding values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        self.values = vals
        self.reference_id = reference_id

    @property
    def m0(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def make_reference(kind: str, d: int | None = None, m0: int = 1000,
                   rng: RngStream | None = None,
                   path=None) -> ReferenceMeasure:
    """Draw (or load) the reference sample.

    kind "uniform-cube" samples i.i.d. uniform on [0,1]^d, "unit-ball-radial"
    samples R * Z/|Z| with R uniform and Z standard normal, and
    "external-file" reads a points CSV from `path`.
    """
    if kind == "external-file":
        if path is None:
            raise ValidationError("external-file reference needs a path")
        pts = load_matrix(path)
        return ReferenceMeasure(pts, kind)
    if d is None or d < 1:
        raise ValidationError("sampled references need a positive dimension")
    if m0 < 1:
        raise ValidationError("m0 must be at least 1")
    if rng is None:
        raise ValidationError("sampled references need an rng")
    gen = rng.generator()
    if kind == "uniform-cube":
        pts = gen.random((m0, d))
    elif kind == "unit-ball-radial":
        pts = _sample_unit_ball(gen, m0, d)
    else:
        raise ValidationError("unknown reference kind: %r" % (kind,))
    return ReferenceMeasure(pts, kind, seed=(rng.seed, rng.stream))


def lot_embed(m: DiscreteMeasure, ref: ReferenceMeasure) -> LotEmbedding:
    """Embed a measure as the barycentric displacement over the reference."""
    if m.dim != ref.dim:
        raise ValidationError("measure and reference dimensions differ")
    source = ref.measure()
    plan = solve_ot(source, m)
    mapped = barycentric_projection(plan, source, m)
    return LotEmbedding(mapped - ref.points, ref.reference_id)


def embed_family(measures, ref: ReferenceMeasure, threads: int = 1):
    """Embed a family of measures against one shared reference."""
    items = list(measures)
    return ordered_map(lambda m: lot_embed(m, ref), items, threads)


def _check_compatible(u: LotEmbedding, v: LotEmbedding):
    if u.reference_id != v.reference_id:
        raise ValidationError("embeddings were built against different references")
    if u.values.shape != v.values.shape:
        raise ValidationError("embedding shapes differ")


def lot_inner(u: LotEmbedding, v: LotEmbedding) -> float:
    """Average-over-reference inner product (1/m0) sum_j u_j . v_j."""
    _check_compatible(u, v)
    return float(np.sum(u.values * v.values)) / u.m0


def lot_distance(u: LotEmbedding, v: LotEmbedding) -> float:
    _check_compatible(u, v)
    diff = u.values - v.values
    return float(np.sqrt(np.sum(diff * diff) / u.m0))


def lot_gram(family, threads: int = 1) -> np.ndarray:
    """Gram matrix of pairwise lot_inner values over one family."""
    embs = list(family)
    n = len(embs)
    if n == 0:
        raise ValidationError("empty embedding family")
    for e in embs[1:]:
        _check_compatible(embs[0], e)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    vals = ordered_map(lambda p: lot_inner(embs[p[0]], embs[p[1]]), pairs, threads)
    gram = np.zeros((n, n))
    for (i, j), v in zip(pairs, vals):
        gram[i, j] = v
        gram[j, i] = v
    return gram


def save_reference(ref: ReferenceMeasure, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_matrix(ref.points, os.path.join(out_dir, "reference.csv"))
    desc = {"kind": ref.kind, "m0": ref.m0, "dim": ref.dim,
            "seed": list(ref.seed) if ref.seed is not None else None,
            "reference_id": ref.reference_id}
    with open(os.path.join(out_dir, "reference.json"), "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_reference(in_dir) -> ReferenceMeasure:
    with open(os.path.join(in_dir, "reference.json")) as fh:
        desc = json.load(fh)
    pts = load_matrix(os.path.join(in_dir, "reference.csv"))
    seed = tuple(desc["seed"]) if desc.get("seed") is not None else None
    ref = ReferenceMeasure(pts, desc["kind"], seed=seed)
    want = desc.get("reference_id")
    if want is not None and want != ref.reference_id:
        raise ValidationError("reference file does not match its recorded fingerprint")
    return ref


def save_lot_embeddings(embeddings, ref: ReferenceMeasure, out_dir) -> None:
    """Write one CSV per embedding next to the reference files."""
    embs = list(embeddings)
    for e in embs:
        if e.reference_id != ref.reference_id:
            raise ValidationError("embedding does not belong to this reference")
    save_reference(ref, out_dir)
    for i, e in enumerate(embs):
        save_matrix(e.values, os.path.join(out_dir, "embedding_%04d.csv" % i))


def load_lot_embeddings(in_dir):
    """Read back (embeddings, reference) written by save_lot_embeddings."""
    ref = load_reference(in_dir)
    names = sorted(name for name in os.listdir(in_dir)
                   if name.startswith("embedding_") and name.endswith(".csv"))
    embs = []
    for name in names:
        vals = load_matrix(os.path.join(in_dir, name))
        if vals.shape[0] != ref.m0:
            raise ValidationError("%s: row count does not match the reference" % name)
        embs.append(LotEmbedding(vals, ref.reference_id))
    return embs, ref
