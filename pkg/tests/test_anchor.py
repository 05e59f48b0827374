import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hintdrive.anchor import (
    EMBED_DIM,
    KnowledgeDoc,
    build_query,
    default_corpus,
    embed,
    load_corpus,
    make_context,
    retrieve_top3,
    validate_weights,
    validate_weights_detail,
)
from hintdrive.semantics import SnapshotDigest


def digest_for(category: str, *, ped=False, ttc=1e9, nearest=None):
    from hintdrive.semantics import SCENARIO_CATEGORIES

    sv = np.zeros(4)
    sv[SCENARIO_CATEGORIES.index(category)] = 1.0
    ov = np.ones(9)
    ov[0] = 0.0
    if nearest is not None:
        ov[1] = nearest
    return SnapshotDigest(sv, ov, ped, ttc)


# -- embedding -------------------------------------------------------------------


def test_embed_deterministic():
    text = "Yield to pedestrians at crossings"
    assert np.array_equal(embed(text), embed(text))


def test_embed_empty_maps_to_basis():
    e1 = np.zeros(EMBED_DIM)
    e1[0] = 1.0
    assert np.array_equal(embed(""), e1)
    assert np.array_equal(embed("..!  ??"), e1)


def test_embed_unit_norm():
    rng = np.random.default_rng(0)
    words = ["merge", "yield", "lane", "speed", "gap", "brake", "stop", "pedestrian"]
    for _ in range(50):
        text = " ".join(rng.choice(words, size=rng.integers(1, 12)))
        assert abs(np.linalg.norm(embed(text)) - 1.0) <= 1e-9


def test_embed_matches_independent_reimplementation():
    texts = [
        "yield to pedestrian",
        "maximum highway speed",
        "Merge with care; match speeds!",
        "a a a b",
        "",
    ]
    for text in texts:
        assert np.allclose(embed(text), oracles.embed_oracle(text), atol=1e-12)


def test_embed_similarity_ordering():
    base = embed("yield to pedestrian")
    close = embed("yield to pedestrian crossing")
    far = embed("maximum highway speed")
    assert float(base @ close) > float(base @ far)


@given(st.text(max_size=80))
@settings(max_examples=60, deadline=None)
def test_embed_always_unit_norm(text):
    assert abs(np.linalg.norm(embed(text)) - 1.0) <= 1e-9


# -- retrieval ---------------------------------------------------------------------


def _random_corpus(rng, n):
    docs = []
    for i in range(n):
        vec = rng.normal(size=EMBED_DIM)
        vec /= np.linalg.norm(vec)
        docs.append(KnowledgeDoc(f"{i:04d}", f"doc {i}", vec))
    return docs


def test_retrieve_degenerate_single_doc():
    rng = np.random.default_rng(1)
    corpus = _random_corpus(rng, 1)
    query = rng.normal(size=EMBED_DIM)
    query /= np.linalg.norm(query)
    result = retrieve_top3(query, corpus)
    assert len(result) == 1
    assert result[0][0] == "0000"


def test_retrieve_exact_match_ranks_first():
    rng = np.random.default_rng(2)
    corpus = _random_corpus(rng, 20)
    result = retrieve_top3(corpus[7].embedding, corpus)
    assert result[0][0] == "0007"
    assert result[0][1] == pytest.approx(1.0, abs=1e-12)


def test_retrieve_matches_sort_oracle():
    rng = np.random.default_rng(3)
    corpus = _random_corpus(rng, 100)
    for _ in range(20):
        query = rng.normal(size=EMBED_DIM)
        query /= np.linalg.norm(query)
        got = [doc_id for doc_id, _ in retrieve_top3(query, corpus)]
        want = oracles.topk_oracle(query, [(d.doc_id, d.embedding) for d in corpus], 3)
        assert got == want


def test_retrieve_tie_breaks_ascending_id():
    rng = np.random.default_rng(4)
    vec = rng.normal(size=EMBED_DIM)
    vec /= np.linalg.norm(vec)
    other = rng.normal(size=EMBED_DIM)
    other /= np.linalg.norm(other)
    corpus = [
        KnowledgeDoc("0003", "dup", vec.copy()),
        KnowledgeDoc("0001", "dup", vec.copy()),
        KnowledgeDoc("0002", "other", other),
    ]
    result = retrieve_top3(vec, corpus)
    assert [doc_id for doc_id, _ in result][:2] == ["0001", "0003"]


def test_retrieve_empty_corpus_is_config_error():
    with pytest.raises(ValueError):
        retrieve_top3(np.ones(EMBED_DIM) / math.sqrt(EMBED_DIM), [])


# -- corpus loading -------------------------------------------------------------------


def test_default_corpus_loads():
    corpus = default_corpus()
    assert len(corpus) == 40
    assert all(d.text for d in corpus)
    assert all(abs(np.linalg.norm(d.embedding) - 1.0) <= 1e-9 for d in corpus)
    assert any("pedestrian" in d.text.lower() for d in corpus)


def test_load_corpus_line_numbers_and_blanks(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("first rule\n\nsecond rule\n   \nthird rule\n")
    docs = load_corpus(path)
    assert [d.doc_id for d in docs] == ["0001", "0003", "0005"]


def test_load_corpus_empty_raises(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("\n\n")
    with pytest.raises(ValueError):
        load_corpus(path)


# -- weight validation -----------------------------------------------------------------


def _is_simplex(w):
    return w.shape == (3,) and np.all(w >= 0) and np.all(w <= 1) and abs(w.sum() - 1.0) <= 1e-9


def test_validate_passthrough():
    w, reason = validate_weights_detail((0.5, 0.3, 0.2))
    assert reason is None
    assert np.array_equal(w, [0.5, 0.3, 0.2])


def test_validate_non_finite_to_uniform():
    for bad in [(float("nan"), 0.5, 0.5), (float("inf"), 0.1, 0.1), (0.2, float("-inf"), 0.2)]:
        w, reason = validate_weights_detail(bad)
        assert reason == "non-finite"
        assert np.array_equal(w, np.full(3, 1.0 / 3.0))


def test_validate_clamp_precedes_normalize():
    w = validate_weights((2.0, 1.0, 1.0))  # clamp -> (1,1,1) -> uniform
    assert np.allclose(w, np.full(3, 1.0 / 3.0), atol=1e-15)


def test_validate_degenerate_sum():
    w, reason = validate_weights_detail((0.0, 0.0, 0.0))
    assert reason == "degenerate-sum"
    assert np.array_equal(w, np.full(3, 1.0 / 3.0))


def test_validate_negative_clamped():
    w = validate_weights((-0.25, 0.55, 0.20))
    assert _is_simplex(w)
    assert w[0] == 0.0


def test_validate_fuzz_and_idempotence():
    rng = np.random.default_rng(99)
    specials = np.array([math.nan, math.inf, -math.inf, -1e300, 1e300, -0.5, 0.0, 1.0, 10.0])
    for i in range(20_000):
        if i % 4 == 0:
            raw = rng.choice(specials, size=3)
        else:
            raw = rng.normal(scale=10.0 ** rng.integers(0, 6), size=3)
        w = validate_weights(raw)
        assert _is_simplex(w)
        again, reason = validate_weights_detail(w)
        assert reason is None
        assert np.array_equal(again, w)


@given(st.lists(st.floats(allow_nan=True, allow_infinity=True, width=64), min_size=3, max_size=3))
@settings(max_examples=200, deadline=None)
def test_validate_property(raw):
    w = validate_weights(raw)
    assert _is_simplex(w)
    assert np.array_equal(validate_weights(w), w)


def test_validate_rejects_wrong_arity():
    with pytest.raises(ValueError):
        validate_weights((0.5, 0.5))


# -- query building ----------------------------------------------------------------------


def test_build_query_cruise_empty():
    q = build_query(digest_for("cruise"), "cruise", "low")
    assert q == "scenario=cruise density=low hazard=none nearest=inf"


def test_build_query_pedestrian_token():
    q = build_query(digest_for("hazard", ped=True, nearest=0.5), "hazard", "medium")
    assert "pedestrian" in q
    assert "nearest=25.0" in q


def test_build_query_low_ttc():
    q = build_query(digest_for("hazard", ttc=1.0), "hazard", "high")
    assert "hazard=low-ttc" in q


def test_build_query_deterministic():
    d = digest_for("lead_vehicle", nearest=0.25)
    assert build_query(d, "lead_vehicle", "low") == build_query(d, "lead_vehicle", "low")


def test_make_context_retrieves_sorted():
    corpus = default_corpus()
    ctx, query_vec = make_context(digest_for("hazard", ped=True, nearest=0.3), "hazard", "medium", corpus)
    assert len(ctx.retrieved) == 3
    sims = [s for _, s in ctx.retrieved]
    assert sims == sorted(sims, reverse=True)
    assert len(ctx.fragments) == 3
    assert abs(np.linalg.norm(query_vec) - 1.0) <= 1e-9
    assert ctx.query_text == build_query(ctx.digest, "hazard", "medium")
