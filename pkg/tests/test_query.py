import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from segsplat.bank import BankProvenance, SemanticBank
from segsplat.query import (
    FeatureMap,
    QueryConfig,
    blend_features,
    recover_features,
    relevancy_map,
    segment,
)


def make_bank(rows):
    rows = np.asarray(rows, dtype=float)
    return SemanticBank(centroids=rows, provenance=BankProvenance(0, 1.2, 0))


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def feature_map_from_rows(rows):
    rows = np.asarray(rows, dtype=float)
    values = rows[None, :, :]
    norms = np.linalg.norm(values, axis=2)
    return FeatureMap(values=values, background_mask=norms < 1e-8)


class TestRecoverFeatures:
    def test_one_hot_recovers_bank_row(self):
        bank = make_bank(np.eye(3, 5))
        semantic = np.zeros((2, 2, 3))
        semantic[0, 0, 1] = 1.0
        fm = recover_features(semantic, bank)
        assert np.array_equal(fm.values[0, 0], bank.centroids[1])
        assert not fm.background_mask[0, 0]

    def test_zero_blend_is_background(self):
        bank = make_bank(np.eye(2, 4))
        fm = recover_features(np.zeros((3, 3, 2)), bank)
        assert fm.background_mask.all()
        assert np.all(fm.values == 0.0)

    def test_mixed_weights_normalized(self):
        # E = (0.5, 0.25) with orthonormal rows:
        # F = (0.5 b1 + 0.25 b2)/||.|| = 0.89443 b1 + 0.44721 b2
        bank = make_bank(np.eye(2, 6))
        semantic = np.zeros((1, 1, 2))
        semantic[0, 0] = [0.5, 0.25]
        fm = recover_features(semantic, bank)
        norm = np.sqrt(0.5**2 + 0.25**2)
        assert fm.values[0, 0, 0] == pytest.approx(0.5 / norm, abs=1e-12)
        assert fm.values[0, 0, 1] == pytest.approx(0.25 / norm, abs=1e-12)
        assert fm.values[0, 0, 0] == pytest.approx(0.894427, abs=1e-6)
        assert fm.values[0, 0, 1] == pytest.approx(0.447214, abs=1e-6)

    def test_unit_norm_invariant(self):
        rng = np.random.default_rng(0)
        bank = make_bank(unit_rows(rng, 5, 8))
        semantic = rng.uniform(0, 0.5, (6, 7, 5))
        fm = recover_features(semantic, bank)
        fg = ~fm.background_mask
        norms = np.linalg.norm(fm.values[fg], axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)

    def test_dimension_mismatch(self):
        bank = make_bank(np.eye(3, 5))
        with pytest.raises(ValueError):
            recover_features(np.zeros((2, 2, 4)), bank)

    def test_blend_linearity_pre_normalization(self):
        rng = np.random.default_rng(1)
        bank = make_bank(unit_rows(rng, 4, 6))
        e1 = rng.uniform(0, 1, (3, 3, 4))
        e2 = rng.uniform(0, 1, (3, 3, 4))
        a, b = 0.3, 1.7
        lhs = blend_features(a * e1 + b * e2, bank)
        rhs = a * blend_features(e1, bank) + b * blend_features(e2, bank)
        assert np.abs(lhs - rhs).max() <= 1e-9


class TestRelevancy:
    def test_aligned_case_is_sigmoid_tau(self):
        d = 6
        query = np.eye(d)[0]
        canonicals = np.eye(d)[1:4]  # orthogonal to the feature
        fm = feature_map_from_rows([query])
        cfg = QueryConfig(query, canonicals, temperature=10.0)
        r = relevancy_map(fm, cfg)
        assert r[0, 0] == pytest.approx(expit(10.0), abs=1e-9)
        assert r[0, 0] == pytest.approx(0.9999546, abs=1e-7)

    def test_antialigned_case_floors_to_zero(self):
        d = 6
        query = np.eye(d)[0]
        canonical = np.eye(d)[1]
        fm = feature_map_from_rows([canonical])  # feature equals a canonical
        cfg = QueryConfig(query, canonical[None], temperature=10.0)
        r = relevancy_map(fm, cfg)
        assert r[0, 0] == 0.0  # sigmoid(-10) ~ 4.5e-5 < 0.5 floor

    def test_background_pixels_are_zero(self):
        d = 4
        fm = feature_map_from_rows([np.zeros(d)])
        cfg = QueryConfig(np.eye(d)[0], np.eye(d)[1:2])
        assert relevancy_map(fm, cfg)[0, 0] == 0.0

    def test_exp_form_equals_sigmoid_form(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            f = unit_rows(rng, 1, 8)[0]
            q = unit_rows(rng, 1, 8)[0]
            canon = unit_rows(rng, 3, 8)
            tau = rng.uniform(0.5, 30.0)
            s_q = f @ q
            per_canon_exp = []
            for c in canon:
                s_c = f @ c
                per_canon_exp.append(
                    np.exp(tau * s_q) / (np.exp(tau * s_q) + np.exp(tau * s_c))
                )
            expected = min(per_canon_exp)
            got = float(expit(tau * (s_q - (f @ canon.T))).min())
            assert got == pytest.approx(expected, abs=1e-12)

    def test_monotonicity_in_similarities(self):
        # raising s_q raises r; raising any s_c (the active one) lowers r
        rng = np.random.default_rng(5)
        for _ in range(1000):
            tau = rng.uniform(1.0, 20.0)
            s_q = rng.uniform(-1, 1)
            s_c = rng.uniform(-1, 1, 3)
            base = expit(tau * (s_q - s_c)).min()
            up = expit(tau * ((s_q + 1e-3) - s_c)).min()
            down = expit(tau * (s_q - (s_c + 1e-3))).min()
            assert up > base
            assert down < base

    def test_adding_canonical_never_increases(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            d = 8
            f = unit_rows(rng, 1, d)[0]
            q = unit_rows(rng, 1, d)[0]
            canon = unit_rows(rng, 4, d)
            fm = feature_map_from_rows([f])
            r3 = relevancy_map(fm, QueryConfig(q, canon[:3], temperature=10.0))[0, 0]
            r4 = relevancy_map(fm, QueryConfig(q, canon, temperature=10.0))[0, 0]
            assert r4 <= r3

    def test_empty_canonicals_rejected(self):
        with pytest.raises(ValueError):
            QueryConfig(np.eye(4)[0], np.zeros((0, 4)))

    def test_non_unit_embeddings_rejected(self):
        with pytest.raises(ValueError):
            QueryConfig(np.eye(4)[0] * 2.0, np.eye(4)[1:2])

    def test_feature_dim_mismatch(self):
        fm = feature_map_from_rows([np.eye(6)[0]])
        cfg = QueryConfig(np.eye(4)[0], np.eye(4)[1:2])
        with pytest.raises(ValueError):
            relevancy_map(fm, cfg)


class TestSegment:
    def test_full_and_empty(self):
        assert segment(np.ones((4, 4)), 0.5).all()
        assert not segment(np.zeros((4, 4)), 0.5).any()

    def test_boundary_score_included(self):
        assert segment(np.array([[0.5]]), 0.5)[0, 0]
        assert not segment(np.array([[0.4999]]), 0.5)[0, 0]

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            segment(np.zeros((2, 2)), 1.5)


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_floor_then_threshold_composes_to_single_test(seed):
    rng = np.random.default_rng(seed)
    d = 6
    f = unit_rows(rng, 9, d)
    fm = FeatureMap(values=f.reshape(3, 3, d), background_mask=np.zeros((3, 3), bool))
    cfg = QueryConfig(unit_rows(rng, 1, d)[0], unit_rows(rng, 3, d), temperature=10.0)
    scores = relevancy_map(fm, cfg)
    raw = expit(
        cfg.temperature
        * (
            fm.values @ cfg.query_embedding[:, None]
            - fm.values @ cfg.canonical_embeddings.T
        )
    ).min(axis=2)
    assert np.array_equal(segment(scores, 0.5), raw.squeeze() >= 0.5)
