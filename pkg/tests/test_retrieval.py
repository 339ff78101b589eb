"""Exact nearest-descriptor search vs a brute-force oracle."""

import numpy as np
import pytest

from visloc.retrieval import DescriptorIndex


def _basis_index(dim=4):
    index = DescriptorIndex(dim)
    for i in range(dim):
        v = np.zeros(dim, dtype=np.float32)
        v[i] = 1.0
        index.add(f"e{i}", v)
    return index


class TestAdd:
    def test_self_query_scores_one(self):
        index = _basis_index()
        got = index.topk(np.array([1.0, 0, 0, 0]), 2)
        assert got[0] == ("e0", pytest.approx(1.0))
        assert got[1][1] == pytest.approx(0.0)

    def test_vectors_are_normalized_on_add(self):
        index = DescriptorIndex(3)
        index.add("a", np.array([2.0, 0.0, 0.0]))
        got = index.topk(np.array([1.0, 0.0, 0.0]), 1)
        assert got[0][1] == pytest.approx(1.0)

    def test_duplicate_id_rejected(self):
        index = _basis_index()
        with pytest.raises(ValueError, match="duplicate"):
            index.add("e0", np.array([1.0, 1.0, 0.0, 0.0]))

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            DescriptorIndex(3).add("a", np.zeros(3))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            DescriptorIndex(3).add("a", np.ones(4))


class TestTopK:
    def test_k_larger_than_index_returns_all(self):
        index = _basis_index(3)
        assert len(index.topk(np.ones(3), 50)) == 3

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        index = DescriptorIndex(8)
        for i in range(40):
            index.add(f"v{i}", rng.normal(size=8))
        q = rng.normal(size=8)
        a = index.topk(q, 10)
        b = index.topk(q * 37.5, 10)
        assert [x[0] for x in a] == [x[0] for x in b]

    def test_ties_break_by_ascending_id(self):
        index = DescriptorIndex(2)
        v = np.array([1.0, 0.0])
        for name in ["zz", "aa", "mm"]:
            index.add(name, v)
        got = index.topk(v, 3)
        assert [g[0] for g in got] == ["aa", "mm", "zz"]

    def test_query_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            _basis_index(4).topk(np.ones(3), 1)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        dim = 16
        index = DescriptorIndex(dim)
        stored = {}
        for i in range(2000):
            vid = f"d{i:04d}"
            vec = rng.normal(size=dim).astype(np.float32)
            if i % 37 == 5:
                vec = stored[f"d{i - 1:04d}"].copy()  # exact duplicates -> ties
            index.add(vid, vec)
            stored[vid] = vec
        norm = {
            k: (v.astype(np.float64) / np.linalg.norm(v.astype(np.float64))).astype(np.float32)
            for k, v in stored.items()
        }
        ids = sorted(norm)
        mat = np.stack([norm[i].astype(np.float64) for i in ids])
        for _ in range(40):
            q = rng.normal(size=dim)
            k = int(rng.integers(1, 25))
            got = index.topk(q, k)
            sims = mat @ (q / np.linalg.norm(q))
            oracle = sorted(zip(ids, sims), key=lambda p: (-p[1], p[0]))[:k]
            assert [g[0] for g in got] == [o[0] for o in oracle]

    def test_from_entries_builder(self):
        pairs = [("a", np.array([1.0, 0.0])), ("b", np.array([0.0, 1.0]))]
        index = DescriptorIndex.from_entries(pairs)
        assert index.size == 2
        assert index.topk(np.array([1.0, 0.1]), 1)[0][0] == "a"

    def test_half_precision_entries_upconvert(self):
        index = DescriptorIndex.from_entries(
            [("h", np.array([0.5, 0.5], dtype=np.float16))]
        )
        got = index.topk(np.array([1.0, 1.0]), 1)
        assert got[0][1] == pytest.approx(1.0, abs=1e-3)
