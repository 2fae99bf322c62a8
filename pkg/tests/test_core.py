import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from measure_embed import (
    Dataset,
    DiscreteMeasure,
    RngStream,
    ValidationError,
    load_dataset,
    load_matrix,
    save_dataset,
    save_matrix,
    subsample_measure,
)


# ---------------------------------------------------------------- measures

def test_measure_renormalizes_weights():
    m = DiscreteMeasure([[0.0], [1.0], [2.0]], [2.0, 3.0, 5.0])
    assert abs(m.weights.sum() - 1.0) < 1e-12
    assert np.allclose(m.weights, [0.2, 0.3, 0.5])


def test_measure_uniform_default():
    m = DiscreteMeasure([[0.0], [1.0]])
    assert np.allclose(m.weights, [0.5, 0.5])
    assert m.n == 2 and m.dim == 1


def test_measure_1d_input_reshapes():
    m = DiscreteMeasure([0.0, 1.0, 2.0])
    assert m.points.shape == (3, 1)


def test_measure_keeps_tiny_weights():
    m = DiscreteMeasure([[0.0], [1.0]], [1.0, 1e-16])
    assert m.n == 2
    assert m.weights[1] > 0


def test_measure_invalid_inputs():
    with pytest.raises(ValidationError):
        DiscreteMeasure(np.zeros((0, 2)))
    with pytest.raises(ValidationError):
        DiscreteMeasure([[np.nan]])
    with pytest.raises(ValidationError):
        DiscreteMeasure([[0.0]], [-1.0])
    with pytest.raises(ValidationError):
        DiscreteMeasure([[0.0], [1.0]], [0.0, 0.0])
    with pytest.raises(ValidationError):
        DiscreteMeasure([[0.0], [1.0]], [1.0])


def test_measure_arrays_frozen():
    m = DiscreteMeasure([[0.0], [1.0]])
    with pytest.raises(ValueError):
        m.points[0, 0] = 3.0
    with pytest.raises(ValueError):
        m.weights[0] = 0.7


def test_dataset_dim_check():
    a = DiscreteMeasure([[0.0, 0.0]])
    b = DiscreteMeasure([[0.0, 0.0, 0.0]])
    with pytest.raises(ValidationError):
        Dataset([a, b])
    with pytest.raises(ValidationError):
        Dataset([])
    with pytest.raises(ValidationError):
        Dataset([a], labels=["x", "y"])


# ---------------------------------------------------------------- rng

def test_rng_stream_reproducible():
    a = RngStream(12345, 7).generator().random(8)
    b = RngStream(12345, 7).generator().random(8)
    assert np.array_equal(a, b)


def test_rng_children_distinct_and_stable():
    root = RngStream(99)
    c0 = root.child(0)
    c1 = root.child(1)
    assert c0 != c1
    assert c0 == root.child(0)
    x0 = c0.generator().random(4)
    x1 = c1.generator().random(4)
    assert not np.array_equal(x0, x1)
    # nesting stays deterministic
    assert root.child(3).child(5) == root.child(3).child(5)


# ---------------------------------------------------------------- matrices

def test_matrix_round_trip_identity(tmp_path):
    path = tmp_path / "m.csv"
    save_matrix(np.eye(2), path)
    back = load_matrix(path)
    assert np.array_equal(back, np.eye(2))


def test_matrix_scalar_point_one(tmp_path):
    path = tmp_path / "m.csv"
    save_matrix(np.array([[0.1]]), path)
    assert path.read_text().strip() == "0.1"
    assert load_matrix(path)[0, 0] == 0.1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                min_size=1, max_size=12))
def test_matrix_round_trip_bit_exact(values):
    import tempfile

    arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.csv")
        save_matrix(arr, path)
        assert np.array_equal(load_matrix(path), arr)


def test_matrix_ragged_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\n3.0,4.0,5.0\n")
    with pytest.raises(ValidationError, match="ragged"):
        load_matrix(path)


def test_matrix_rejects_text(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,oops\n")
    with pytest.raises(ValidationError, match="not a number"):
        load_matrix(path)


def test_matrix_rejects_nonfinite():
    with pytest.raises(ValidationError):
        save_matrix(np.array([[np.inf]]), "/tmp/never-written.csv")


# ---------------------------------------------------------------- manifests

def _write_manifest(tmp_path, manifest):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_dataset_uniform_weights(tmp_path):
    (tmp_path / "a.csv").write_text("0.0\n1.0\n")
    path = _write_manifest(tmp_path, {
        "dim": 1,
        "measures": [{"id": "a", "path": "a.csv", "label": None}],
    })
    ds = load_dataset(path)
    assert len(ds) == 1 and ds.dim == 1
    assert np.allclose(ds.measures[0].weights, [0.5, 0.5])
    assert ds.labels is None


def test_load_dataset_weight_column(tmp_path):
    (tmp_path / "a.csv").write_text("0.0,0.2\n1.0,0.8\n")
    path = _write_manifest(tmp_path, {
        "dim": 1,
        "weighted": True,
        "measures": [{"id": "a", "path": "a.csv", "label": "pos"}],
    })
    ds = load_dataset(path)
    assert np.allclose(ds.measures[0].weights, [0.2, 0.8])
    assert ds.labels == ["pos"]


def test_load_dataset_dimension_mismatch(tmp_path):
    (tmp_path / "a.csv").write_text("0.0,0.0\n")
    (tmp_path / "b.csv").write_text("0.0,0.0,0.0\n")
    path = _write_manifest(tmp_path, {
        "dim": 2,
        "measures": [{"id": "a", "path": "a.csv"}, {"id": "b", "path": "b.csv"}],
    })
    with pytest.raises(ValidationError, match="dimension mismatch"):
        load_dataset(path)


def test_load_dataset_missing_file(tmp_path):
    path = _write_manifest(tmp_path, {
        "dim": 1,
        "measures": [{"id": "a", "path": "nope.csv"}],
    })
    with pytest.raises(ValidationError, match="not found"):
        load_dataset(path)


def test_load_dataset_negative_weight(tmp_path):
    (tmp_path / "a.csv").write_text("0.0,-0.5\n1.0,0.5\n")
    path = _write_manifest(tmp_path, {
        "dim": 1, "weighted": True,
        "measures": [{"id": "a", "path": "a.csv"}],
    })
    with pytest.raises(ValidationError, match="negative weight"):
        load_dataset(path)


def test_load_dataset_partial_labels(tmp_path):
    (tmp_path / "a.csv").write_text("0.0\n")
    (tmp_path / "b.csv").write_text("1.0\n")
    path = _write_manifest(tmp_path, {
        "dim": 1,
        "measures": [{"id": "a", "path": "a.csv", "label": "x"},
                     {"id": "b", "path": "b.csv", "label": None}],
    })
    with pytest.raises(ValidationError, match="no label"):
        load_dataset(path)


def test_dataset_save_load_round_trip(tmp_path):
    gen = np.random.default_rng(3)
    measures = [DiscreteMeasure(gen.random((5, 2)), gen.random(5) + 0.1)
                for _ in range(3)]
    ds = Dataset(measures, ids=["u", "v", "w"], labels=["a", "b", "a"])
    manifest = save_dataset(ds, tmp_path / "out")
    back = load_dataset(manifest)
    assert back.ids == ds.ids
    assert back.labels == ds.labels
    for m0, m1 in zip(ds.measures, back.measures):
        assert np.array_equal(m0.points, m1.points)
        # loading renormalizes, which can move the last bit of each weight
        assert np.allclose(m0.weights, m1.weights, rtol=0, atol=1e-15)


# ---------------------------------------------------------------- subsample

def test_subsample_single_atom():
    m = DiscreteMeasure([[2.0, 3.0]])
    out = subsample_measure(m, 5, RngStream(0))
    assert out.n == 5
    assert np.allclose(out.points, [2.0, 3.0])
    assert np.allclose(out.weights, 0.2)


def test_subsample_deterministic():
    m = DiscreteMeasure(np.random.default_rng(1).random((20, 2)))
    a = subsample_measure(m, 10, RngStream(42, 3))
    b = subsample_measure(m, 10, RngStream(42, 3))
    assert np.array_equal(a.points, b.points)


def test_subsample_mean_concentrates():
    # empirical mean over 100 seeds stays within 3 standard errors
    gen = np.random.default_rng(7)
    m = DiscreteMeasure(gen.random((40, 2)))
    target = m.mean()
    var = m.weights @ ((m.points - target) ** 2)
    draws = []
    for seed in range(100):
        sub = subsample_measure(m, m.n, RngStream(seed, 11))
        draws.append(sub.points)
    pooled = np.concatenate(draws, axis=0)
    stderr = np.sqrt(var / pooled.shape[0])
    assert np.all(np.abs(pooled.mean(axis=0) - target) <= 3.0 * stderr)


def test_subsample_count_validation():
    m = DiscreteMeasure([[0.0]])
    with pytest.raises(ValidationError):
        subsample_measure(m, 0, RngStream(0))
