import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bundlepop.catalog import Bundle, Catalog, Game, UserLibrary
from bundlepop.embeddings import (META_PREFIX, EmbeddingConfig, EmbeddingError, EmbeddingMatrix, WordVectorTable,
                                  build_embedding, build_metaprod2vec, build_prod2vec, bundle_centroid, compose_text,
                                  content_embedding, cosine, load_word_vectors, pca_reduce, purchase_sentences,
                                  save_word_vectors, train_skipgram)

FAST = EmbeddingConfig(dimension=16, epochs=5, seed=3)


def game(gid, title, tags=(), genres=(), specs=()):
    return Game(gid, title, tuple(tags), tuple(genres), tuple(specs))


# --------------------------------------------------------------------- text

def test_compose_title_only():
    assert compose_text(game("g", "Dead Rain"), {"title"}) == ["dead", "rain"]


def test_compose_multiword_tag():
    g = game("g", "X", tags=["Zombies", "Open World"])
    assert compose_text(g, {"title", "tags"}) == ["x", "zombies", "open", "world", "open_world"]


def test_compose_empty_fields():
    assert compose_text(game("g", "A"), {"title", "tags", "genres", "specs"}) == ["a"]


def test_compose_requires_title():
    with pytest.raises(EmbeddingError):
        compose_text(game("g", "A"), {"tags"})
    with pytest.raises(EmbeddingError):
        EmbeddingConfig(content_fields=("tags",))


# ------------------------------------------------------------------ content

def _catalog(games):
    return Catalog({g.game_id: g for g in games}, [], {})


def test_content_single_token():
    table = WordVectorTable(2, {"dead": np.array([3.0, 4.0])})
    m = content_embedding(_catalog([game("g", "Dead")]), table, ("title",))
    assert np.allclose(m.vector("g"), [0.6, 0.8])


def test_content_two_tokens_by_hand():
    v1, v2 = np.array([1.0, 0.0, 2.0]), np.array([0.0, 3.0, 2.0])
    table = WordVectorTable(3, {"dead": v1, "rain": v2})
    m = content_embedding(_catalog([game("g", "Dead Rain")]), table, ("title",))
    expected = np.array([0.5, 1.5, 2.0]) / math.sqrt(0.25 + 2.25 + 4.0)
    assert np.allclose(m.vector("g"), expected, atol=1e-15)


def test_content_oov_flagged():
    table = WordVectorTable(2, {"dead": np.array([1.0, 1.0])})
    cat = _catalog([game("g", "Dead Zzz"), game("h", "Zzz")])
    m = content_embedding(cat, table, ("title",))
    assert np.allclose(m.vector("g"), np.array([1, 1]) / math.sqrt(2))
    assert m.flagged == {"h"} and not m.usable("h")
    assert np.all(m.vector("h") == 0)


def test_content_all_oov_is_error():
    table = WordVectorTable(2, {"dead": np.array([1.0, 1.0])})
    with pytest.raises(EmbeddingError):
        content_embedding(_catalog([game("h", "Zzz")]), table, ("title",))


def test_content_rows_unit_or_zero(matrix):
    norms = np.linalg.norm(matrix.array, axis=1)
    assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))


def test_word_vector_file_round_trip(tmp_path):
    table = WordVectorTable(3, {"a": np.array([0.1, -2.5, 1e-7]), "b_c": np.array([1.0, 2.0, 3.0])})
    save_word_vectors(table, tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().splitlines()[0] == "2 3"
    back = load_word_vectors(tmp_path / "v.txt")
    assert set(back.vectors) == {"a", "b_c"}
    assert np.array_equal(back.vectors["a"], table.vectors["a"])


def test_word_vector_file_bad_width(tmp_path):
    (tmp_path / "v.txt").write_text("1 3\na 1 2\n")
    with pytest.raises(EmbeddingError):
        load_word_vectors(tmp_path / "v.txt")


def test_matrix_save_load(tmp_path, matrix):
    matrix.save(tmp_path / "m.emb")
    back = EmbeddingMatrix.load(tmp_path / "m.emb")
    assert back.ids == matrix.ids and np.array_equal(back.array, matrix.array)
    assert back.config == matrix.config


# ---------------------------------------------------------------- skip-gram

def test_skipgram_planted_pairs():
    corpus = [["a", "b"]] * 500 + [["c", "d"]] * 500
    t = train_skipgram(corpus, FAST)
    v = t.vectors
    assert cosine(v["a"], v["b"]) > cosine(v["a"], v["c"])
    assert cosine(v["c"], v["d"]) > cosine(v["c"], v["b"])
    assert t.loss_history[-1] < t.loss_history[0]
    assert all(isinstance(x, float) for x in t.loss_history)


def test_skipgram_deterministic():
    corpus = [["a", "b", "c"], ["b", "c", "d"]] * 50
    a, b = train_skipgram(corpus, FAST), train_skipgram(corpus, FAST)
    assert all(a.vectors[k].tobytes() == b.vectors[k].tobytes() for k in a.vectors)
    c = train_skipgram(corpus, EmbeddingConfig(dimension=16, epochs=5, seed=4))
    assert not np.array_equal(a.vectors["a"], c.vectors["a"])


def test_skipgram_needs_pairs():
    with pytest.raises(EmbeddingError):
        train_skipgram([["a"]], FAST)


# ---------------------------------------------------------- context models

def _two_groups(extra_users=()):
    set_a = [f"a{i}" for i in range(4)]
    set_b = [f"b{i}" for i in range(4)]
    games = [game(g, g.upper(), tags=["Alpha"] if g[0] == "a" else ["Beta"]) for g in set_a + set_b]
    users = [UserLibrary(f"ua{i}", {g: 10 + j for j, g in enumerate(set_a)}) for i in range(30)]
    users += [UserLibrary(f"ub{i}", {g: 10 + j for j, g in enumerate(set_b)}) for i in range(30)]
    return Catalog({g.game_id: g for g in games}, users + list(extra_users), {}), set_a, set_b


def _mean_cos(m, xs, ys):
    vals = [cosine(m.vector(x), m.vector(y)) for x in xs for y in ys if x != y]
    return sum(vals) / len(vals)


def test_prod2vec_planted_groups():
    cat, a, b = _two_groups()
    m = build_prod2vec(cat, FAST)
    assert _mean_cos(m, a, a) > _mean_cos(m, a, b)
    assert _mean_cos(m, b, b) > _mean_cos(m, a, b)


def test_purchase_sentence_order():
    cat = Catalog({g: game(g, g) for g in "xyz"}, [UserLibrary("u", {"x": 5, "y": 9, "z": 5})], {})
    assert purchase_sentences(cat, exclude_unplayed=False) == [["y", "x", "z"]]


def test_prod2vec_ignores_single_game_users():
    cat, _, _ = _two_groups()
    more, _, _ = _two_groups([UserLibrary("solo", {"a0": 100})])
    m1, m2 = build_prod2vec(cat, FAST), build_prod2vec(more, FAST)
    assert m1.ids == m2.ids and np.array_equal(m1.array, m2.array)


def test_prod2vec_deterministic(catalog):
    cfg = EmbeddingConfig(source="prod2vec", dimension=16, epochs=2, seed=5)
    assert np.array_equal(build_prod2vec(catalog, cfg).array, build_prod2vec(catalog, cfg).array)


def test_metaprod2vec_empty_meta_equals_prod2vec():
    cat, _, _ = _two_groups()
    p = build_prod2vec(cat, FAST)
    mp = build_metaprod2vec(cat, FAST, meta_fields=())
    assert p.ids == mp.ids and np.array_equal(p.array, mp.array)


def test_metaprod2vec_metadata_bridge():
    # x0 and y0 are never co-purchased but share the rare tags
    cat, a, b = _two_groups()
    games = dict(cat.games)
    games["x0"] = game("x0", "X0", tags=["Roguelike", "Pixel Art"])
    games["y0"] = game("y0", "Y0", tags=["Roguelike", "Pixel Art"])
    users = [UserLibrary(u.user_id, {**u.holdings, ("x0" if u.user_id.startswith("ua") else "y0"): 1})
             for u in cat.large_users]
    cat = Catalog(games, users, {})
    p = build_prod2vec(cat, FAST)
    mp = build_metaprod2vec(cat, FAST, meta_fields=("tags",))
    assert cosine(mp.vector("x0"), mp.vector("y0")) > cosine(p.vector("x0"), p.vector("y0"))
    assert not any(g.startswith(META_PREFIX) for g in mp.ids)


def test_build_embedding_dispatch(catalog):
    m = build_embedding(catalog, EmbeddingConfig(source="metaprod2vec", dimension=8, epochs=1))
    assert set(m.ids) <= set(catalog.games)
    assert m.dimension == 8


# ---------------------------------------------------------------------- PCA

def _matrix(x):
    return EmbeddingMatrix(EmbeddingConfig(), ids=[f"g{i}" for i in range(len(x))], array=x)


def test_pca_plane_in_10d():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0].T
    x = rng.normal(size=(30, 2)) @ basis + rng.normal(size=10)
    r = pca_reduce(_matrix(x))
    recon = r.coords @ r.projection + r.mean
    assert np.max(np.abs(recon - x)) < 1e-9


def test_pca_matches_svd_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 5)) * np.array([5, 3, 1, 0.5, 0.1])
    r = pca_reduce(_matrix(x))
    c = x - x.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    lam = s ** 2 / (len(x) - 1)
    assert r.explained_variance_ratio == pytest.approx((lam[0] + lam[1]) / lam.sum(), abs=1e-12)
    assert np.allclose(r.eigenvalues, lam, atol=1e-10)
    # same subspace as the SVD's top-2 right singular vectors
    vt = np.linalg.svd(c)[2][:2]
    assert np.allclose(np.abs(r.projection @ vt.T), np.eye(2), atol=1e-9)


def test_pca_mean_projects_to_origin(matrix):
    r = pca_reduce(matrix)
    assert np.max(np.abs(r.transform(r.mean))) < 1e-12
    assert np.allclose(r.projection @ r.projection.T, np.eye(2), atol=1e-9)


def test_pca_skips_flagged():
    x = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [0, 0, 0], [1.0, 1.0, 0]])
    r = pca_reduce(_matrix(x))
    assert "g3" not in r.index and len(r.ids) == 4


# ------------------------------------------------------------------ kernels

def test_cosine_examples():
    assert cosine([1, 0], [0, 1]) == 0
    assert cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert cosine([0, 0], [1, 0]) == 0.0
    with pytest.raises(ValueError):
        cosine([1, 2], [1, 2, 3])


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=200)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_cosine_properties(a, b):
    assert cosine(a, b) == cosine(b, a)
    assert abs(cosine(a, b)) <= 1 + 1e-12
    if np.linalg.norm(a) > 1e-3:
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-12)


def test_centroid_examples():
    m = EmbeddingMatrix(EmbeddingConfig(), rows={"x": np.array([0.0, 2.0]), "y": np.array([2.0, 0.0]),
                                                 "z": np.array([0.0, 0.0])})
    assert np.array_equal(bundle_centroid(["x"], m), [0, 2])
    assert np.array_equal(bundle_centroid(Bundle("b", "b", ("x", "y")), m), [1, 1])
    assert np.array_equal(bundle_centroid(["y", "z", "x"], m), [1, 1])
    with pytest.raises(EmbeddingError):
        bundle_centroid(["z"], m)


@settings(max_examples=50)
@given(st.permutations(["a", "b", "c", "d"]))
def test_centroid_permutation_invariant(order):
    rng = np.random.default_rng(2)
    m = EmbeddingMatrix(EmbeddingConfig(), rows={k: rng.normal(size=3) for k in "abcd"})
    assert np.allclose(bundle_centroid(order, m), bundle_centroid(list("abcd"), m), atol=1e-15)
