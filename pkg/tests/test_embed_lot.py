import numpy as np
import pytest

from measure_embed import (
    DiscreteMeasure,
    LotEmbedding,
    RngStream,
    ValidationError,
    lot_distance,
    lot_embed,
    lot_gram,
    lot_inner,
    make_reference,
)
from measure_embed.embed_lot import (
    embed_family,
    load_lot_embeddings,
    load_reference,
    save_lot_embeddings,
    save_reference,
)

from oracles import random_measure


# ---------------------------------------------------------------- reference

def test_uniform_cube_support():
    ref = make_reference("uniform-cube", d=3, m0=200, rng=RngStream(0))
    assert ref.points.shape == (200, 3)
    assert ref.points.min() >= 0.0
    assert ref.points.max() <= 1.0


def test_unit_ball_norms():
    ref = make_reference("unit-ball-radial", d=4, m0=500, rng=RngStream(1))
    norms = np.linalg.norm(ref.points, axis=1)
    assert norms.max() <= 1.0 + 1e-12


def test_unit_ball_covariance_matches_closed_form():
    # sample covariance of the radial construction approaches I/(3d)
    d = 3
    m0 = 100_000
    ref = make_reference("unit-ball-radial", d=d, m0=m0, rng=RngStream(2))
    x = ref.points
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / m0
    target = np.eye(d) / (3.0 * d)
    for i in range(d):
        for j in range(d):
            prods = centered[:, i] * centered[:, j]
            se = prods.std() / np.sqrt(m0)
            assert abs(cov[i, j] - target[i, j]) <= 3.0 * se + 1e-12


def test_reference_deterministic():
    a = make_reference("uniform-cube", d=2, m0=50, rng=RngStream(7, 3))
    b = make_reference("uniform-cube", d=2, m0=50, rng=RngStream(7, 3))
    assert np.array_equal(a.points, b.points)
    assert a.reference_id == b.reference_id


def test_reference_id_changes_with_sample():
    a = make_reference("uniform-cube", d=2, m0=50, rng=RngStream(7, 3))
    b = make_reference("uniform-cube", d=2, m0=50, rng=RngStream(7, 4))
    assert a.reference_id != b.reference_id


def test_reference_external_file(tmp_path):
    from measure_embed import save_matrix
    pts = np.array([[0.1, 0.2], [0.3, 0.4]])
    save_matrix(pts, tmp_path / "pts.csv")
    ref = make_reference("external-file", path=tmp_path / "pts.csv")
    assert np.array_equal(ref.points, pts)
    assert ref.kind == "external-file"


def test_reference_bad_kind():
    with pytest.raises(ValidationError):
        make_reference("gaussian", d=2, m0=10, rng=RngStream(0))


# ---------------------------------------------------------------- embedding

def test_embed_reference_itself_is_zero():
    ref = make_reference("uniform-cube", d=2, m0=40, rng=RngStream(3))
    emb = lot_embed(ref.measure(), ref)
    assert np.allclose(emb.values, 0.0, atol=1e-12)


def test_embed_translation_is_constant():
    ref = make_reference("uniform-cube", d=2, m0=60, rng=RngStream(4))
    b = np.array([0.7, -0.3])
    shifted = DiscreteMeasure(ref.points + b)
    emb = lot_embed(shifted, ref)
    assert np.allclose(emb.values, b, atol=1e-9)


def test_embed_single_atom():
    ref = make_reference("uniform-cube", d=2, m0=25, rng=RngStream(5))
    c = np.array([2.0, 3.0])
    emb = lot_embed(DiscreteMeasure([c]), ref)
    assert np.allclose(emb.values, c - ref.points, atol=1e-12)


def test_embed_affine_pushforward_rows():
    # y -> b + S y with S positive diagonal keeps the identity coupling
    # optimal, so the embedding rows are b + (S - I) y exactly
    ref = make_reference("unit-ball-radial", d=2, m0=80, rng=RngStream(6))
    b = np.array([0.2, -0.1])
    s = np.array([1.4, 0.6])
    pushed = DiscreteMeasure(b + ref.points * s)
    emb = lot_embed(pushed, ref)
    expected = b + ref.points * (s - 1.0)
    assert np.allclose(emb.values, expected, atol=1e-9)


def test_embed_dim_mismatch():
    ref = make_reference("uniform-cube", d=2, m0=10, rng=RngStream(0))
    with pytest.raises(ValidationError):
        lot_embed(DiscreteMeasure([[1.0, 2.0, 3.0]]), ref)


def test_embed_family_matches_loop():
    ref = make_reference("uniform-cube", d=2, m0=30, rng=RngStream(8))
    gen = np.random.default_rng(9)
    ms = [random_measure(gen, 12, 2) for _ in range(4)]
    fam = embed_family(ms, ref, threads=3)
    for m, e in zip(ms, fam):
        assert np.array_equal(e.values, lot_embed(m, ref).values)


# ---------------------------------------------------------------- geometry

def _const_embedding(ref, vec):
    return LotEmbedding(np.tile(np.asarray(vec, dtype=float), (ref.m0, 1)),
                        ref.reference_id)


def test_inner_zero_embedding():
    ref = make_reference("uniform-cube", d=2, m0=20, rng=RngStream(10))
    zero = _const_embedding(ref, [0.0, 0.0])
    other = lot_embed(DiscreteMeasure([[5.0, 5.0]]), ref)
    assert lot_inner(zero, other) == 0.0


def test_inner_constant_embeddings():
    ref = make_reference("uniform-cube", d=3, m0=15, rng=RngStream(11))
    u = _const_embedding(ref, [1.0, 2.0, 0.0])
    v = _const_embedding(ref, [3.0, -1.0, 4.0])
    assert lot_inner(u, v) == pytest.approx(1.0, abs=1e-12)
    assert lot_inner(u, u) == pytest.approx(5.0, abs=1e-12)


def test_inner_reference_mismatch():
    ra = make_reference("uniform-cube", d=2, m0=10, rng=RngStream(12))
    rb = make_reference("uniform-cube", d=2, m0=10, rng=RngStream(13))
    u = _const_embedding(ra, [1.0, 0.0])
    v = _const_embedding(rb, [1.0, 0.0])
    with pytest.raises(ValidationError):
        lot_inner(u, v)


def test_inner_matches_closed_form_for_affine_family():
    # translations + diagonal scalings of the radial reference have a
    # closed-form Gram: b_i . b_j + tr((S_i - I)(S_j - I)) / (3 d).
    # The solver route is checked at small m0; the Monte-Carlo comparison
    # then uses the same (exact) displacement rows at large m0, where a
    # dense transport solve would be prohibitive.
    d = 2
    params = [(np.array([0.3, -0.2]), np.array([1.5, 0.8])),
              (np.array([-0.1, 0.4]), np.array([0.7, 1.2]))]

    small = make_reference("unit-ball-radial", d=d, m0=300, rng=RngStream(14))
    for b, s in params:
        emb = lot_embed(DiscreteMeasure(b + small.points * s), small)
        assert np.allclose(emb.values, b + small.points * (s - 1.0), atol=1e-9)

    ref = make_reference("unit-ball-radial", d=d, m0=40_000, rng=RngStream(14))
    embs = [LotEmbedding(b + ref.points * (s - 1.0), ref.reference_id)
            for b, s in params]
    for i in range(2):
        for j in range(2):
            bi, si = params[i]
            bj, sj = params[j]
            closed = bi @ bj + np.sum((si - 1.0) * (sj - 1.0)) / (3.0 * d)
            assert lot_inner(embs[i], embs[j]) == pytest.approx(closed, abs=0.01)


def test_gram_single_zero():
    ref = make_reference("uniform-cube", d=2, m0=10, rng=RngStream(15))
    gram = lot_gram([_const_embedding(ref, [0.0, 0.0])])
    assert gram.shape == (1, 1)
    assert gram[0, 0] == 0.0


def test_gram_orthonormal_constants():
    ref = make_reference("uniform-cube", d=2, m0=10, rng=RngStream(16))
    fam = [_const_embedding(ref, [1.0, 0.0]), _const_embedding(ref, [0.0, 1.0])]
    assert np.allclose(lot_gram(fam), np.eye(2), atol=1e-12)


def test_gram_matches_entrywise_inner():
    ref = make_reference("uniform-cube", d=2, m0=30, rng=RngStream(17))
    gen = np.random.default_rng(18)
    fam = embed_family([random_measure(gen, 10, 2) for _ in range(5)], ref)
    gram = lot_gram(fam)
    for i in range(5):
        for j in range(5):
            assert gram[i, j] == pytest.approx(lot_inner(fam[i], fam[j]), abs=1e-12)
    assert np.array_equal(gram, gram.T)


def test_gram_psd():
    ref = make_reference("uniform-cube", d=3, m0=25, rng=RngStream(19))
    gen = np.random.default_rng(20)
    fam = embed_family([random_measure(gen, 8, 3) for _ in range(6)], ref)
    gram = lot_gram(fam)
    eig = np.linalg.eigvalsh(gram)
    assert eig.min() >= -1e-8 * np.trace(gram)


def test_gram_thread_invariant():
    ref = make_reference("uniform-cube", d=2, m0=20, rng=RngStream(21))
    gen = np.random.default_rng(22)
    fam = embed_family([random_measure(gen, 9, 2) for _ in range(5)], ref)
    a = lot_gram(fam, threads=1)
    b = lot_gram(fam, threads=4)
    assert np.array_equal(a, b)


def test_distance_axioms():
    ref = make_reference("uniform-cube", d=2, m0=30, rng=RngStream(23))
    gen = np.random.default_rng(24)
    u, v = embed_family([random_measure(gen, 7, 2) for _ in range(2)], ref)
    assert lot_distance(u, u) == 0.0
    d2 = lot_inner(u, u) - 2.0 * lot_inner(u, v) + lot_inner(v, v)
    assert lot_distance(u, v) ** 2 == pytest.approx(d2, abs=1e-10)


def test_distance_constants():
    ref = make_reference("uniform-cube", d=2, m0=12, rng=RngStream(25))
    u = _const_embedding(ref, [1.0, 0.0])
    v = _const_embedding(ref, [0.0, 1.0])
    assert lot_distance(u, v) == pytest.approx(np.sqrt(2.0), abs=1e-12)


# ---------------------------------------------------------------- files

def test_reference_round_trip(tmp_path):
    ref = make_reference("unit-ball-radial", d=2, m0=35, rng=RngStream(26))
    save_reference(ref, tmp_path / "ref")
    back = load_reference(tmp_path / "ref")
    assert np.array_equal(back.points, ref.points)
    assert back.kind == ref.kind
    assert back.seed == ref.seed
    assert back.reference_id == ref.reference_id


def test_reference_tamper_detected(tmp_path):
    ref = make_reference("uniform-cube", d=2, m0=5, rng=RngStream(27))
    save_reference(ref, tmp_path / "ref")
    csv = tmp_path / "ref" / "reference.csv"
    lines = csv.read_text().splitlines()
    lines[0] = "0.5,0.5"
    csv.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError):
        load_reference(tmp_path / "ref")


def test_embeddings_round_trip(tmp_path):
    ref = make_reference("uniform-cube", d=2, m0=15, rng=RngStream(28))
    gen = np.random.default_rng(29)
    fam = embed_family([random_measure(gen, 6, 2) for _ in range(3)], ref)
    save_lot_embeddings(fam, ref, tmp_path / "emb")
    back, ref2 = load_lot_embeddings(tmp_path / "emb")
    assert ref2.reference_id == ref.reference_id
    assert len(back) == 3
    for e0, e1 in zip(fam, back):
        assert np.array_equal(e0.values, e1.values)
