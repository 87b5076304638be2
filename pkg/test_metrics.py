#!/usr/bin/env python3
"""
Tests for exposure metrics, the metrics report and the greedy re-ranker
"""

import sys
import os
from itertools import combinations

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.config import config_from_dict
from src.errors import InvalidArgumentError
from src.metrics import (compute_discounted_exposure, compute_intersection_exposure,
                         compute_protected_exposure, compute_report, format_report_table,
                         greedy_fair_rerank, rerank_all)
from src.models import RecommendationList, ScoredItem
from src.pipeline import run_pipeline


def make_list(user_id, item_ids, flags, scores=None, has_candidates=False, list_size=None, regime_id=0):
    scores = scores if scores is not None else [float(len(item_ids) - i) for i in range(len(item_ids))]
    entries = [ScoredItem(item_id=i, raw_score=sc, bias_penalty_total=0.0, biased_score=sc,
                          protected_flags=tuple(int(f) for f in np.atleast_1d(flags[i])),
                          normalized_score=sc, rank=r + 1)
               for r, (i, sc) in enumerate(zip(item_ids, scores))]
    return RecommendationList(user_id=user_id, regime_id=regime_id, entries=entries,
                              list_size=list_size or len(entries), has_candidates=has_candidates)


def test_exposure_all_and_none_protected():
    ones = np.ones((4, 1), dtype=np.int8)
    zeros = np.zeros((4, 1), dtype=np.int8)
    lists = [make_list(0, [0, 1], ones), make_list(1, [2, 3], ones)]
    assert compute_protected_exposure(lists, ones, 0) == 1.0
    lists = [make_list(0, [0, 1], zeros), make_list(1, [2, 3], zeros)]
    assert compute_protected_exposure(lists, zeros, 0) == 0.0


def test_exposure_hand_count():
    flags = np.array([[1], [0], [0], [1], [0], [0]])
    lists = [make_list(0, [0, 1, 2], flags), make_list(1, [3, 4, 5], flags)]
    assert abs(compute_protected_exposure(lists, flags, 0) - 2 / 6) < 1e-12


def test_exposure_counts_only_top_slots():
    flags = np.array([[0], [0], [1], [1]])
    lst = make_list(0, [0, 1, 2, 3], flags, has_candidates=True, list_size=2)
    assert compute_protected_exposure([lst], flags, 0) == 0.0


def test_exposure_feature_out_of_range():
    flags = np.ones((3, 2))
    lists = [make_list(0, [0, 1, 2], flags)]
    for bad in (-1, 2):
        try:
            compute_protected_exposure(lists, flags, bad)
        except InvalidArgumentError:
            continue
        raise AssertionError(f"feature {bad} should be rejected")


def test_discounted_exposure_weights_by_rank():
    flags = np.array([[1], [0], [0]])
    lists = [make_list(0, [0, 1, 2], flags)]
    weights = 1.0 / np.log2(1.0 + np.arange(1, 4))
    expected = weights[0] / weights.sum()
    assert abs(compute_discounted_exposure(lists, flags, 0) - expected) < 1e-12
    assert compute_discounted_exposure(lists, flags, 0) > compute_protected_exposure(lists, flags, 0)


def test_intersection_exposure():
    flags = np.array([[1, 1], [1, 0], [0, 1], [1, 1]])
    lists = [make_list(0, [0, 1], flags), make_list(1, [2, 3], flags)]
    assert compute_intersection_exposure(lists, flags, [0, 1]) == 0.5
    assert compute_intersection_exposure(lists, flags, [0]) == 0.75


def test_report_hand_example():
    cfg = config_from_dict({
        'n_items': 10, 'k_factors': 1, 's_sensitive': 1, 'item_feature_probs': [0.1],
        'regimes': [{'user_count': 1, 'default': [0.0, 1.0]}],
        'candidate_size': 3, 'list_size': 3,
    })
    flags = np.zeros((10, 1), dtype=np.int8)
    flags[4, 0] = 1
    lst = make_list(0, [4, 1, 7], flags, scores=[5.0, 3.0, 1.0])
    report = compute_report([lst], flags, cfg)
    assert report.protected_item_fraction == [0.1]
    assert abs(report.protected_exposure[0] - 1 / 3) < 1e-12
    assert abs(report.per_regime_exposure[0][0] - 1 / 3) < 1e-12
    assert report.score_summary['normalized'].max == 5.0
    assert report.score_summary['normalized'].min == 1.0
    assert report.mean_list_relevance == 3.0
    assert report.n_lists == 1 and report.n_slots == 3


def test_report_rejects_empty_input():
    cfg = config_from_dict({'n_items': 5, 'k_factors': 1, 'regimes': [{'user_count': 1, 'default': [0, 1]}]})
    try:
        compute_report([], np.zeros((5, 1)), cfg)
    except InvalidArgumentError:
        return
    raise AssertionError("expected an empty-input error")


def test_report_round_trips_through_dict():
    cfg = config_from_dict({
        'n_items': 40, 'k_factors': 2, 's_sensitive': 1, 'item_feature_probs': [0.3, 0.5],
        'regimes': [{'user_count': 5, 'default': [0.0, 1.0]}], 'candidate_size': 10, 'list_size': 4,
    })
    result = run_pipeline(cfg, workers=1)
    report = result.report
    assert type(report).from_dict(report.to_dict()) == report


def test_greedy_hand_example():
    flags = {1: [0], 2: [1], 3: [0]}
    entries = [ScoredItem(item_id=i, raw_score=s, bias_penalty_total=0.0, biased_score=s,
                          protected_flags=tuple(flags[i]), normalized_score=s)
               for i, s in ((1, 0.9), (3, 0.8), (2, 0.7))]
    lst = RecommendationList(user_id=0, regime_id=0, entries=entries, list_size=2, has_candidates=True)
    reranked = greedy_fair_rerank(lst, 0.15, 0)
    assert reranked.item_ids() == [1, 2]
    assert [e.rank for e in reranked.entries] == [1, 2]
    assert reranked.has_candidates is False


def test_greedy_without_candidates_rejected():
    flags = np.zeros((3, 1))
    lst = make_list(0, [0, 1, 2], flags)
    try:
        greedy_fair_rerank(lst, 0.1, 0)
    except InvalidArgumentError:
        return
    raise AssertionError("expected a missing-candidates error")


def test_greedy_negative_lambda_rejected():
    flags = np.zeros((3, 1))
    lst = make_list(0, [0, 1, 2], flags, has_candidates=True, list_size=2)
    try:
        greedy_fair_rerank(lst, -0.5, 0)
    except InvalidArgumentError:
        return
    raise AssertionError("expected a negative-lambda error")


CATALOG_FLAGS = (np.random.default_rng(0).random((1000, 1)) < 0.4).astype(np.int8)


def random_pool(rng, size, list_size, lo=1.0, hi=5.0):
    scores = np.sort(rng.uniform(lo, hi, size))[::-1]
    ids = rng.permutation(1000)[:size]
    flags = CATALOG_FLAGS[ids, 0]
    entries = [ScoredItem(item_id=int(i), raw_score=float(s), bias_penalty_total=0.0, biased_score=float(s),
                          protected_flags=(int(f),), normalized_score=float(s))
               for i, s, f in zip(ids, scores, flags)]
    return RecommendationList(user_id=0, regime_id=0, entries=entries, list_size=list_size,
                              has_candidates=True)


def test_greedy_matches_exhaustive_search():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        size = int(rng.integers(2, 9))
        list_size = int(rng.integers(1, min(size, 4) + 1))
        lam = float(rng.uniform(0, 3))
        pool = random_pool(rng, size, list_size)

        def gain(entry):
            return entry.normalized_score + (lam if entry.protected_flags[0] else 0.0)

        best = max(combinations(pool.entries, list_size), key=lambda combo: sum(gain(e) for e in combo))
        reranked = greedy_fair_rerank(pool, lam, 0)
        assert sorted(reranked.item_ids()) == sorted(e.item_id for e in best)
        assert abs(sum(gain(e) for e in reranked.entries) - sum(gain(e) for e in best)) < 1e-9
        gains = [gain(e) for e in reranked.entries]
        assert gains == sorted(gains, reverse=True)


def test_lambda_zero_keeps_the_generator_order():
    rng = np.random.default_rng(5)
    for _ in range(200):
        pool = random_pool(rng, 8, 3)
        assert greedy_fair_rerank(pool, 0.0, 0).item_ids() == pool.top_item_ids()


def test_large_lambda_puts_protected_first():
    rng = np.random.default_rng(6)
    for _ in range(200):
        pool = random_pool(rng, 8, 8)
        reranked = greedy_fair_rerank(pool, 4.5, 0)
        flags = [e.protected_flags[0] for e in reranked.entries]
        assert flags == sorted(flags, reverse=True)


def test_exposure_grows_and_relevance_falls_with_lambda():
    rng = np.random.default_rng(8)
    pools = [random_pool(rng, 8, 4) for _ in range(200)]
    exposures, relevances = [], []
    for lam in (0.0, 0.1, 0.5, 2 * (5.0 - 1.0)):
        reranked = rerank_all(pools, lam, 0)
        exposures.append(compute_protected_exposure(reranked, CATALOG_FLAGS, 0))
        relevances.append(float(np.mean([e.normalized_score for lst in reranked for e in lst.entries])))
    assert all(a <= b for a, b in zip(exposures, exposures[1:]))
    assert all(a >= b - 1e-12 for a, b in zip(relevances, relevances[1:]))


def test_each_list_moves_monotonically_with_lambda():
    rng = np.random.default_rng(18)
    lambdas = (0.0, 0.1, 0.5, 2 * (5.0 - 1.0))
    for _ in range(300):
        pool = random_pool(rng, 10, 4)
        exposures, relevances = [], []
        for lam in lambdas:
            reranked = greedy_fair_rerank(pool, lam, 0)
            exposures.append(sum(e.protected_flags[0] for e in reranked.entries))
            relevances.append(sum(e.normalized_score for e in reranked.entries))
        assert all(a <= b for a, b in zip(exposures, exposures[1:])), exposures
        assert all(a >= b - 1e-9 for a, b in zip(relevances, relevances[1:])), relevances


def test_rerank_all_keeps_user_order():
    rng = np.random.default_rng(9)
    pools = []
    for u in range(5):
        pool = random_pool(rng, 6, 2)
        pool.user_id = u
        pools.append(pool)
    assert [lst.user_id for lst in rerank_all(pools, 0.3, 0)] == list(range(5))


def test_report_table_mentions_every_section():
    cfg = config_from_dict({
        'n_items': 30, 'k_factors': 2, 's_sensitive': 1, 'item_feature_probs': [0.3, 0.5],
        'regimes': [{'user_count': 3, 'default': [0.0, 1.0]}, {'user_count': 3, 'default': [1.0, 1.0]}],
        'candidate_size': 10, 'list_size': 3,
    })
    table = format_report_table(run_pipeline(cfg, workers=1).report)
    assert "Protected features" in table
    assert "Exposure per regime" in table
    assert "Score summary" in table
    assert "exposure_discounted" in table


if __name__ == "__main__":
    print("Metrics Tests")
    print("=" * 50)
    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith('test_') and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except Exception as e:
                failures += 1
                print(f"✗ {name}: {e}")
    sys.exit(1 if failures else 0)
