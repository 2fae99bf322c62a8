"""Core data model: weighted point clouds, dataset manifests, matrix I/O,
and deterministic random streams."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValidationError",
    "DiscreteMeasure",
    "Dataset",
    "RngStream",
    "load_dataset",
    "save_dataset",
    "load_matrix",
    "save_matrix",
    "subsample_measure",
]


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class DiscreteMeasure:
    """A discrete probability measure: n weighted support points in R^d.

    Weights are renormalized to sum to one on construction and the arrays
    are frozen afterwards, so instances are safe to share across threads.
    Duplicate support points are kept as distinct atoms.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None):
        points = np.array(points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ValidationError(
                f"support must be a nonempty (n, d) array, got shape {points.shape}"
            )
        if not np.all(np.isfinite(points)):
            raise ValidationError("support points must be finite")
        n = points.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.array(weights, dtype=np.float64).reshape(-1)
            if weights.shape[0] != n:
                raise ValidationError(
                    f"got {n} points but {weights.shape[0]} weights"
                )
            if not np.all(np.isfinite(weights)):
                raise ValidationError("weights must be finite")
            if np.any(weights < 0):
                raise ValidationError("weights must be nonnegative")
        total = weights.sum()
        if total <= 0:
            raise ValidationError("weights must have positive total mass")
        weights = weights / total
        self.points = _freeze(points)
        self.weights = _freeze(weights)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        """Weighted mean of the support points."""
        return self.weights @ self.points

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"


class Dataset:
    """A family of N discrete measures sharing one ambient dimension."""

    __slots__ = ("measures", "ids", "labels")

    def __init__(self, measures, ids=None, labels=None):
        measures = list(measures)
        if not measures:
            raise ValidationError("dataset needs at least one measure")
        dim = measures[0].dim
        for i, m in enumerate(measures):
            if m.dim != dim:
                raise ValidationError(
                    f"dimension mismatch: measure {i} has dim {m.dim}, expected {dim}"
                )
        if ids is None:
            ids = [str(i) for i in range(len(measures))]
        else:
            ids = [str(s) for s in ids]
            if len(ids) != len(measures):
                raise ValidationError("ids must have one entry per measure")
        if labels is not None:
            labels = [str(l) for l in labels]
            if len(labels) != len(measures):
                raise ValidationError("labels must have one entry per measure")
        self.measures = measures
        self.ids = ids
        self.labels = labels

    def __len__(self) -> int:
        return len(self.measures)

    def __iter__(self):
        return iter(self.measures)

    @property
    def dim(self) -> int:
        return self.measures[0].dim

    def __repr__(self) -> str:
        return f"Dataset(N={len(self)}, dim={self.dim}, labeled={self.labels is not None})"


_MASK64 = (1 << 64) - 1


def _mix64(a: int, b: int) -> int:
    # splitmix64 finalizer; derives child stream ids without collisions in practice
    z = (a * 0x9E3779B97F4A7C15 + b + 0x632BE59BD9B4E019) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (seed, stream id).

    The same key yields the same draw sequence on every run and under any
    thread schedule; parallel code hands each task its own child stream.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.random.SeedSequence((self.seed & _MASK64, self.stream & _MASK64))
        return np.random.Generator(np.random.PCG64(key))

    def child(self, index: int) -> "RngStream":
        """Derive an independent stream for subtask `index`."""
        return RngStream(self.seed, _mix64(self.stream & _MASK64, index & _MASK64))


def save_matrix(matrix, path) -> None:
    """Write a 2D real matrix as headerless CSV with round-trip precision."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValidationError(f"matrix must be 2D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("matrix entries must be finite")
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def load_matrix(path) -> np.ndarray:
    """Read a headerless CSV of reals; all rows must have the same length."""
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValidationError(
                    f"{path}:{lineno}: ragged row ({len(cells)} cells, expected {width})"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise ValidationError(f"{path}:{lineno}: not a number: {bad!r}") from None
    if not rows:
        raise ValidationError(f"{path}: empty matrix file")
    return np.asarray(rows, dtype=np.float64)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _load_measure_file(path: str, dim: int, weighted: bool) -> DiscreteMeasure:
    """Parse one measure CSV: d coordinate columns plus an optional weight column."""
    expected = dim + 1 if weighted else dim
    points = []
    weights = [] if weighted else None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != expected:
                raise ValidationError(
                    f"{path}:{lineno}: dimension mismatch, expected {expected} "
                    f"columns, got {len(cells)}"
                )
            try:
                values = [float(c) for c in cells]
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise ValidationError(f"{path}:{lineno}: not a number: {bad!r}") from None
            if weighted:
                if values[-1] < 0:
                    raise ValidationError(f"{path}:{lineno}: negative weight {values[-1]}")
                weights.append(values[-1])
                points.append(values[:-1])
            else:
                points.append(values)
    if not points:
        raise ValidationError(f"{path}: empty measure file")
    if weighted and sum(weights) <= 0:
        raise ValidationError(f"{path}: weights sum to zero")
    return DiscreteMeasure(np.asarray(points), None if weights is None else np.asarray(weights))


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from a JSON manifest referencing per-measure CSV files.

    The manifest has the shape
    ``{"dim": d, "weighted": bool, "measures": [{"id", "path", "label"}]}``
    with measure paths resolved relative to the manifest location. Weight
    columns are read only when the manifest sets ``"weighted": true``;
    otherwise uniform weights 1/n are assumed.
    """
    manifest_path = os.fspath(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{manifest_path}: invalid JSON ({exc})") from None
    if not isinstance(manifest, dict) or "dim" not in manifest or "measures" not in manifest:
        raise ValidationError(f"{manifest_path}: manifest needs 'dim' and 'measures' keys")
    dim = manifest["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise ValidationError(f"{manifest_path}: 'dim' must be a positive integer")
    entries = manifest["measures"]
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{manifest_path}: 'measures' must be a nonempty list")
    weighted = bool(manifest.get("weighted", False))
    base = os.path.dirname(os.path.abspath(manifest_path))

    measures, ids, labels = [], [], []
    for idx, entry in enumerate(entries):
        if not isinstance(entry, dict) or "path" not in entry:
            raise ValidationError(f"{manifest_path}: measure entry {idx} needs a 'path'")
        path = os.path.join(base, entry["path"])
        if not os.path.exists(path):
            raise ValidationError(f"measure file not found: {path} (from {manifest_path})")
        measures.append(_load_measure_file(path, dim, weighted))
        ids.append(str(entry.get("id", idx)))
        labels.append(entry.get("label"))

    if any(l is not None for l in labels):
        missing = [ids[i] for i, l in enumerate(labels) if l is None]
        if missing:
            raise ValidationError(
                f"{manifest_path}: measures {missing} have no label but others do"
            )
    else:
        labels = None
    return Dataset(measures, ids=ids, labels=labels)


def save_dataset(ds: Dataset, out_dir, weighted: bool = True) -> str:
    """Write a dataset directory (manifest.json plus one CSV per measure).

    Returns the manifest path. With ``weighted=False`` only coordinates are
    written, which assumes uniform weights.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, m in enumerate(ds.measures):
        name = f"measure_{i:04d}.csv"
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for p, w in zip(m.points, m.weights):
                row = [repr(float(v)) for v in p]
                if weighted:
                    row.append(repr(float(w)))
                fh.write(",".join(row))
                fh.write("\n")
        entries.append({
            "id": ds.ids[i],
            "path": name,
            "label": None if ds.labels is None else ds.labels[i],
        })
    manifest = {"dim": ds.dim, "weighted": weighted, "measures": entries}
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def subsample_measure(m: DiscreteMeasure, count: int, rng: RngStream) -> DiscreteMeasure:
    """Draw `count` points i.i.d. from m (with replacement, probability equal
    to the weights) and return the uniform measure on the drawn points."""
    count = int(count)
    if count < 1:
        raise ValidationError("count must be >= 1")
    gen = rng.generator()
    idx = gen.choice(m.n, size=count, replace=True, p=m.weights)
    return DiscreteMeasure(m.points[idx], None)


def _sample_unit_ball(gen: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Sample n points as R * Z/|Z| with R uniform on [0,1] and Z standard normal."""
    z = gen.standard_normal((n, d))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0] = 1.0
    r = gen.random(n)
    return (r / norms)[:, None] * z


def _weighted_distinct_indices(points: np.ndarray, weights: np.ndarray,
                               k: int, gen: np.random.Generator) -> np.ndarray:
    """Sample k support indices without replacement, proportional to weights,
    skipping indices whose coordinates duplicate an already chosen point.

    Falls back to uniform draws over the remaining distinct locations when
    all remaining mass sits on chosen locations.
    """
    n = points.shape[0]
    current = np.array(weights, dtype=np.float64)
    alive = np.ones(n, dtype=bool)
    chosen = np.empty(k, dtype=np.int64)
    for t in range(k):
        total = current.sum()
        if total > 0:
            idx = int(gen.choice(n, p=current / total))
        else:
            candidates = np.flatnonzero(alive)
            if candidates.size == 0:
                raise ValidationError(f"fewer than {k} distinct support points")
            idx = int(candidates[gen.integers(candidates.size)])
        chosen[t] = idx
        same = np.all(points == points[idx], axis=1)
        current[same] = 0.0
        alive[same] = False
    return chosen
