import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tksg import tensor as T
from tksg.gradcheck import check_grads
from tksg.retrieval import (HashEmbedder, ReportProjector, RetrievalIndex, build_index,
                            project_reports, query_topk)
from tksg.tensor import Tensor


def scan_oracle(emb, query, k, exclude_rows=()):
    """Row-by-row cosine scan, sorted by (-sim, row)."""
    qn = math.sqrt(sum(v * v for v in query))
    scored = []
    for r, row in enumerate(emb):
        if r in exclude_rows:
            continue
        sim = float(np.dot(row, query)) / (float(np.linalg.norm(row)) * qn)
        scored.append((-sim, r))
    scored.sort()
    return [r for _, r in scored[:k]]


def test_hand_case():
    idx = build_index([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], ["a", "b", "c"])
    res = query_topk(idx, [1.0, 0.0], 2)
    assert res.rows == (0, 2)
    assert res.ids == ("a", "c")
    np.testing.assert_allclose(res.sims, [1.0, 0.70711], atol=1e-5)


def test_k_equals_m_returns_all_sorted():
    rng = np.random.default_rng(0)
    idx = build_index(rng.normal(size=(6, 3)), list("abcdef"))
    res = query_topk(idx, rng.normal(size=3), 6)
    assert sorted(res.ids) == list("abcdef")
    assert all(a >= b for a, b in zip(res.sims, res.sims[1:]))
    assert not res.truncated


def test_k_larger_than_m_is_flagged():
    idx = build_index(np.eye(3), ["x", "y", "z"])
    res = query_topk(idx, [1.0, 1.0, 0.0], 10)
    assert len(res) == 3 and res.truncated


def test_single_row_and_errors():
    idx = build_index([[3.0, 4.0]], ["only"])
    assert len(idx) == 1
    np.testing.assert_allclose(np.linalg.norm(idx.embeddings, axis=1), 1.0, atol=1e-6)
    with pytest.raises(ValueError, match="duplicate"):
        build_index(np.eye(2), ["a", "a"])
    with pytest.raises(ValueError, match="zero"):
        build_index([[1.0, 0.0], [0.0, 0.0]], ["a", "b"])
    with pytest.raises(ValueError, match="zero query"):
        query_topk(idx, [0.0, 0.0], 1)
    with pytest.raises(ValueError, match="dim"):
        query_topk(idx, [1.0, 0.0, 0.0], 1)


def test_index_is_immutable():
    idx = build_index(np.eye(2), ["a", "b"])
    with pytest.raises(ValueError):
        idx.embeddings[0, 0] = 5.0


def test_ties_go_to_lower_index():
    row = [0.6, 0.8]
    idx = build_index([[0.0, 1.0], row, [1.0, 0.0], row, row], list("abcde"))
    res = query_topk(idx, row, 3)
    assert res.rows == (1, 3, 4)


def test_self_exclusion():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(5, 4))
    idx = build_index(emb, list("abcde"))
    assert query_topk(idx, emb[2], 1).ids == ("c",)
    assert query_topk(idx, emb[2], 1).sims[0] == pytest.approx(1.0, abs=1e-12)
    res = query_topk(idx, emb[2], 4, exclude=["c"])
    assert "c" not in res.ids and len(res) == 4


def test_random_queries_match_scan():
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(300, 16))
    idx = build_index(emb, [f"r{i}" for i in range(300)])
    for _ in range(50):
        q = rng.normal(size=16)
        assert list(query_topk(idx, q, 10).rows) == scan_oracle(emb, q, 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100.0))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    idx = build_index(rng.normal(size=(40, 5)), [str(i) for i in range(40)])
    q = rng.normal(size=5)
    assert query_topk(idx, q, 7).ids == query_topk(idx, scale * q, 7).ids


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    idx = build_index(rng.normal(size=(20, 6)), [f"id{i}" for i in range(20)])
    idx.save(tmp_path / "a")
    back = RetrievalIndex.load(tmp_path / "a")
    assert back.ids == idx.ids
    np.testing.assert_allclose(back.embeddings, idx.embeddings, atol=1e-6)
    back.save(tmp_path / "b")
    again = RetrievalIndex.load(tmp_path / "b")
    assert again.embeddings.tobytes() == back.embeddings.tobytes()
    q = rng.normal(size=6)
    assert query_topk(back, q, 5).ids == query_topk(idx, q, 5).ids


def test_concurrent_queries_match_serial():
    from concurrent.futures import ThreadPoolExecutor
    rng = np.random.default_rng(4)
    idx = build_index(rng.normal(size=(200, 8)), [str(i) for i in range(200)])
    qs = rng.normal(size=(40, 8))
    serial = [query_topk(idx, q, 5) for q in qs]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda q: query_topk(idx, q, 5), qs))
    assert serial == parallel


def test_projector_zero_weights_give_beta_rows():
    proj = ReportProjector(5, 4, np.random.default_rng(5))
    proj.linear.weight.data[...] = 0.0
    proj.norm.beta.data[...] = [0.1, 0.2, 0.3, 0.4]
    out = project_reports(proj, np.random.default_rng(6).normal(size=(3, 5))).data
    assert out.shape == (3, 4)
    np.testing.assert_allclose(out, np.tile([0.1, 0.2, 0.3, 0.4], (3, 1)), atol=1e-6)
    with pytest.raises(ValueError):
        proj(np.zeros((3, 6)))


def test_projector_gradients():
    with T.default_dtype(np.float64):
        proj = ReportProjector(5, 4, np.random.default_rng(7))
        raw = Tensor(np.random.default_rng(8).normal(size=(3, 5)))
        wts = Tensor(np.random.default_rng(9).normal(size=(3, 4)))
        errs = check_grads(lambda: T.sum_(proj(raw) * wts), proj.parameters())
    assert max(errs) <= 1e-5


def test_hash_embedder_deterministic_and_similarity():
    emb = HashEmbedder(32)
    a = emb.embed(["pleural", "effusion", "left"])
    np.testing.assert_array_equal(a, HashEmbedder(32).embed(["pleural", "effusion", "left"]))
    assert np.linalg.norm(a) == pytest.approx(1.0)
    near = emb.embed(["pleural", "effusion", "right"])
    far = emb.embed(["heart", "size", "normal"])
    assert a @ near > a @ far
