"""Greedy diversity re-ranking of retrieved candidate pools."""

import numpy as np
import pytest

from capgap import CaptionRecord, MmrConfig, cosine_similarity, mmr_rerank
from capgap.errors import DimMismatch, EmptyCandidates

from conftest import make_store
from oracles import greedy_mmr


def pool_from(vectors, ids=None):
    ids = ids if ids is not None else range(len(vectors))
    return [(CaptionRecord(id=i, text=f"caption {i}"), np.asarray(v, dtype=np.float64))
            for i, v in zip(ids, vectors)]


class TestCosine:
    def test_known_values(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == 1.0
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([-3.0, 0.0])) == -1.0

    def test_zero_norm_is_zero(self):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0
        assert cosine_similarity(np.ones(3), np.zeros(3)) == 0.0


class TestMmr:
    def test_lambda_zero_is_similarity_ranking(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            n = int(rng.integers(2, 12))
            dim = int(rng.integers(2, 6))
            vecs = rng.normal(size=(n, dim))
            q = rng.normal(size=dim)
            pool = pool_from(vecs)
            cfg = MmrConfig(lam=0.0, pool_size=n, select_count=n)
            got = [r.id for r in mmr_rerank(q, pool, cfg)]
            sims = [(-cosine_similarity(v, q), i) for i, v in enumerate(vecs)]
            expected = [i for _, i in sorted(sims)]
            assert got == expected, f"trial {trial}"

    def test_matches_greedy_oracle(self):
        # integer-lattice vectors keep every cosine exactly representable, so
        # the engine and the oracle compute bit-identical greedy scores and
        # near-tie argmax flips cannot blur the comparison
        rng = np.random.default_rng(1)
        lambdas = [0.7, 0.5, 0.2, 0.0, -0.2, -0.5]
        for trial in range(60):
            n = int(rng.integers(2, 10))
            dim = int(rng.integers(2, 5))
            vecs = rng.integers(-8, 9, size=(n, dim)).astype(np.float64)
            q = rng.integers(-8, 9, size=dim).astype(np.float64)
            lam = lambdas[trial % len(lambdas)]
            select = int(rng.integers(1, n + 1))
            pool = pool_from(vecs)
            cfg = MmrConfig(lam=lam, pool_size=n, select_count=select)
            got = [r.id for r in mmr_rerank(q, pool, cfg)]
            expected = greedy_mmr(q.tolist(), vecs.tolist(), list(range(n)), lam, select)
            assert got == expected, f"trial {trial} lam={lam}"

    def test_hand_case_penalizes_duplicate(self):
        # all three candidates are equally similar to the query (rel 2/sqrt 5);
        # c1 duplicates c0's direction (pair sim 1), c2 mirrors it (pair sim
        # (4-1)/5 = 0.6). Second-pick scores at lambda 0.5:
        #   c1: 0.894 - 0.5 * 1.0 = 0.394    c2: 0.894 - 0.5 * 0.6 = 0.594
        q = np.array([1.0, 0.0])
        vecs = [[2.0, 1.0], [4.0, 2.0], [2.0, -1.0]]
        pool = pool_from(vecs)
        picks = mmr_rerank(q, pool, MmrConfig(lam=0.5, pool_size=3, select_count=2))
        assert [r.id for r in picks] == [0, 2]
        # at lambda 0 all relevances tie exactly and ids decide
        picks = mmr_rerank(q, pool, MmrConfig(lam=0.0, pool_size=3, select_count=2))
        assert [r.id for r in picks] == [0, 1]

    def test_negative_lambda_rewards_redundancy(self):
        # two tight clusters: negative lambda keeps picks inside one cluster,
        # positive lambda spreads them across both
        rng = np.random.default_rng(8)
        a = rng.normal(loc=[5.0, 0.0, 0.0], scale=0.01, size=(6, 3))
        b = rng.normal(loc=[0.0, 5.0, 0.0], scale=0.01, size=(6, 3))
        q = np.array([1.0, 0.9, 0.0])
        pool = pool_from(np.vstack([a, b]))
        by_id = {rec.id: v for rec, v in pool}

        def mean_pairwise(records):
            vs = [by_id[r.id] for r in records]
            sims = [cosine_similarity(vs[i], vs[j])
                    for i in range(len(vs)) for j in range(i + 1, len(vs))]
            return float(np.mean(sims))

        hugging = mmr_rerank(q, pool, MmrConfig(lam=-0.5, pool_size=12, select_count=4))
        spread = mmr_rerank(q, pool, MmrConfig(lam=0.5, pool_size=12, select_count=4))
        assert mean_pairwise(hugging) > mean_pairwise(spread)

    def test_first_pick_has_no_penalty(self):
        # even with a huge lambda the first pick is the most similar candidate
        q = np.array([1.0, 0.0])
        pool = pool_from([[1.0, 0.0], [0.5, 0.5]])
        picks = mmr_rerank(q, pool, MmrConfig(lam=100.0, pool_size=2, select_count=1))
        assert [r.id for r in picks] == [0]

    def test_tie_breaks_by_id(self):
        q = np.array([1.0, 0.0])
        vecs = [[2.0, 0.0], [5.0, 0.0], [1.0, 0.0]]
        pool = pool_from(vecs, ids=[9, 4, 6])
        picks = mmr_rerank(q, pool, MmrConfig(lam=0.0, pool_size=3, select_count=3))
        assert [r.id for r in picks] == [4, 6, 9]

    def test_diversity_increases_with_lambda(self):
        # two tight clusters; lambda > 0 should pull picks from both
        rng = np.random.default_rng(2)
        a = rng.normal(loc=[5.0, 0.0, 0.0], scale=0.01, size=(8, 3))
        b = rng.normal(loc=[0.0, 5.0, 0.0], scale=0.01, size=(8, 3))
        q = np.array([1.0, 0.8, 0.0])
        pool = pool_from(np.vstack([a, b]))

        by_id = {rec.id: v for rec, v in pool}

        def mean_pairwise_sim(records):
            vs = [by_id[r.id] for r in records]
            sims = [cosine_similarity(vs[i], vs[j])
                    for i in range(len(vs)) for j in range(i + 1, len(vs))]
            return float(np.mean(sims))

        plain = mmr_rerank(q, pool, MmrConfig(lam=0.0, pool_size=16, select_count=4))
        diverse = mmr_rerank(q, pool, MmrConfig(lam=0.6, pool_size=16, select_count=4))
        assert mean_pairwise_sim(diverse) < mean_pairwise_sim(plain)

    def test_fewer_candidates_than_select_returns_all(self):
        pool = pool_from([[1.0, 0.0], [0.0, 1.0]])
        picks = mmr_rerank(np.ones(2), pool, MmrConfig(lam=0.2, pool_size=4, select_count=4))
        assert len(picks) == 2

    def test_empty_pool(self):
        with pytest.raises(EmptyCandidates):
            mmr_rerank(np.ones(2), [], MmrConfig(lam=0.0))

    def test_dim_mismatch(self):
        pool = pool_from([[1.0, 0.0, 0.0]])
        with pytest.raises(DimMismatch):
            mmr_rerank(np.ones(2), pool, MmrConfig(lam=0.0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MmrConfig(lam=0.0, pool_size=0)
        with pytest.raises(ValueError):
            MmrConfig(lam=0.0, select_count=0)
        with pytest.raises(ValueError):
            MmrConfig(lam=0.0, pool_size=4, select_count=5)

    def test_pool_from_store_search(self):
        # typical wiring: search results feed the pool
        store = make_store(20, 4, "l2", seed=3)
        q = store.embeddings[0].astype(np.float64)
        results = store.knn_search(q, 16)
        pool = [(store.record_for(r.id), store.embedding_for(r.id)) for r in results]
        picks = mmr_rerank(q, pool, MmrConfig(lam=0.3, pool_size=16, select_count=4))
        assert len(picks) == 4
        assert len({r.id for r in picks}) == 4
