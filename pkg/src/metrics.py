"""
Provider-side fairness metrics over generated lists, plus a greedy
score-plus-bonus re-ranker used as the downstream baseline.
"""

import logging
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.config import ExperimentConfig
from src.errors import InvalidArgumentError
from src.models import ItemPropensityMatrix, MetricsReport, RecommendationList, ScoreSummary

metrics_logger = logging.getLogger('lafs.metrics')

FlagSource = Union[ItemPropensityMatrix, np.ndarray]


def _flag_matrix(pi_I: FlagSource) -> np.ndarray:
    values = pi_I.values if isinstance(pi_I, ItemPropensityMatrix) else np.asarray(pi_I)
    if values.ndim != 2:
        raise InvalidArgumentError(f"item flags must be a 2-d matrix, got shape {values.shape}")
    return values


def _check_feature(feature: int, s: int):
    if not 0 <= feature < s:
        raise InvalidArgumentError(f"feature {feature} out of range [0, {s})")


def _top_item_ids(lists: Sequence[RecommendationList]) -> np.ndarray:
    ids = [entry.item_id for lst in lists for entry in lst.top()]
    return np.asarray(ids, dtype=np.int64)


def _discount_weights(lists: Sequence[RecommendationList]) -> np.ndarray:
    ranks = [position + 1 for lst in lists for position in range(len(lst.top()))]
    return 1.0 / np.log2(1.0 + np.asarray(ranks, dtype=np.float64))


def compute_protected_exposure(lists: Sequence[RecommendationList], pi_I: FlagSource, feature: int,
                               s: Optional[int] = None) -> float:
    """
    Fraction of top-l slots holding items protected on ``feature``

    Args:
        lists: Recommendation lists (only their top-l prefixes count)
        pi_I: Item propensities or a flag matrix (first s columns are flags)
        feature: Sensitive feature index
        s: Number of sensitive features, defaults to the matrix width

    Returns:
        Protected slots / total slots
    """
    flags = _flag_matrix(pi_I)
    _check_feature(feature, flags.shape[1] if s is None else s)
    ids = _top_item_ids(lists)
    if ids.size == 0:
        raise InvalidArgumentError("no recommendation slots to measure")
    return float(flags[ids, feature].sum()) / float(ids.size)


def compute_discounted_exposure(lists: Sequence[RecommendationList], pi_I: FlagSource, feature: int,
                                s: Optional[int] = None) -> float:
    """Like compute_protected_exposure but slots weigh 1/log2(1 + rank)"""
    flags = _flag_matrix(pi_I)
    _check_feature(feature, flags.shape[1] if s is None else s)
    ids = _top_item_ids(lists)
    if ids.size == 0:
        raise InvalidArgumentError("no recommendation slots to measure")
    weights = _discount_weights(lists)
    return float(np.dot(weights, flags[ids, feature])) / float(weights.sum())


def compute_intersection_exposure(lists: Sequence[RecommendationList], pi_I: FlagSource,
                                  features: Iterable[int], s: Optional[int] = None) -> float:
    """Fraction of top-l slots holding items protected on every one of ``features``"""
    flags = _flag_matrix(pi_I)
    features = list(features)
    if not features:
        raise InvalidArgumentError("need at least one feature")
    for feature in features:
        _check_feature(feature, flags.shape[1] if s is None else s)
    ids = _top_item_ids(lists)
    if ids.size == 0:
        raise InvalidArgumentError("no recommendation slots to measure")
    joint = np.all(flags[np.ix_(ids, features)] == 1, axis=1)
    return float(joint.sum()) / float(ids.size)


def _summarize(values: List[float]) -> ScoreSummary:
    array = np.asarray(values, dtype=np.float64)
    return ScoreSummary(min=float(array.min()), max=float(array.max()),
                        mean=float(array.mean()), stddev=float(array.std()))


def compute_report(lists: Sequence[RecommendationList], pi_I: FlagSource,
                   cfg: ExperimentConfig) -> MetricsReport:
    """
    Summarize normalized lists

    Args:
        lists: Normalized recommendation lists
        pi_I: Item propensities or flag matrix
        cfg: Config the lists were generated with

    Returns:
        MetricsReport over the top-l prefixes of all lists
    """
    if not lists:
        raise InvalidArgumentError("cannot report on an empty set of lists")
    metrics_logger.info("=== COMPUTING METRICS REPORT ===")
    flags = _flag_matrix(pi_I)
    s = cfg.s_sensitive

    catalog = [float(flags[:, j].mean()) for j in range(s)]
    exposure = [compute_protected_exposure(lists, flags, j, s) for j in range(s)]
    discounted = [compute_discounted_exposure(lists, flags, j, s) for j in range(s)]

    per_regime = []
    for r in range(cfg.n_regimes):
        members = [lst for lst in lists if lst.regime_id == r]
        if members:
            per_regime.append([compute_protected_exposure(members, flags, j, s) for j in range(s)])
        else:
            metrics_logger.warning(f"⚠️ Regime {r} has no lists")
            per_regime.append([0.0] * s)

    top = [entry for lst in lists for entry in lst.top()]
    if any(entry.normalized_score is None for entry in top):
        raise InvalidArgumentError("lists must be normalized before reporting")
    summary = {
        'raw': _summarize([entry.raw_score for entry in top]),
        'biased': _summarize([entry.biased_score for entry in top]),
        'normalized': _summarize([entry.normalized_score for entry in top]),
    }

    report = MetricsReport(
        protected_item_fraction=catalog,
        protected_exposure=exposure,
        protected_exposure_discounted=discounted,
        per_regime_exposure=per_regime,
        score_summary=summary,
        mean_list_relevance=summary['normalized'].mean,
        n_lists=len(lists),
        n_slots=len(top),
    )
    metrics_logger.info(f"📊 Protected exposure {np.round(exposure, 4).tolist()} "
                        f"vs catalog {np.round(catalog, 4).tolist()}")
    return report


def greedy_fair_rerank(lst: RecommendationList, lam: float, feature: int,
                       list_size: Optional[int] = None) -> RecommendationList:
    """
    Re-rank a candidate pool by normalized score plus a protected-item bonus

    Repeatedly takes the remaining candidate with the largest
    ``normalized_score + lam * flag[feature]``; ties go to the higher biased
    score, then the lower item id.

    Args:
        lst: List carrying its full candidate pool
        lam: Bonus for items protected on ``feature`` (≥ 0)
        feature: Sensitive feature index
        list_size: Output length, defaults to the list's own l

    Returns:
        A new RecommendationList of length l in selection order
    """
    if not lst.has_candidates:
        raise InvalidArgumentError(f"user {lst.user_id}: list has no candidate pool to re-rank")
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be ≥ 0, got {lam}")
    size = lst.list_size if list_size is None else list_size
    if size < 1:
        raise InvalidArgumentError(f"list size must be ≥ 1, got {size}")
    if lst.entries:
        _check_feature(feature, len(lst.entries[0].protected_flags))
    if any(entry.normalized_score is None for entry in lst.entries):
        raise InvalidArgumentError(f"user {lst.user_id}: candidates are not normalized")

    def objective(entry):
        bonus = lam if entry.protected_flags[feature] else 0.0
        return (entry.normalized_score + bonus, entry.biased_score, -entry.item_id)

    pool = list(lst.entries)
    selected = []
    while pool and len(selected) < size:
        best = max(pool, key=objective)
        pool.remove(best)
        selected.append(replace(best, rank=len(selected) + 1, in_top_l=True))

    return RecommendationList(user_id=lst.user_id, regime_id=lst.regime_id, entries=selected,
                              list_size=len(selected), has_candidates=False)


def rerank_all(lists: Sequence[RecommendationList], lam: float, feature: int,
               list_size: Optional[int] = None) -> List[RecommendationList]:
    """Apply greedy_fair_rerank to every list"""
    metrics_logger.info(f"=== RE-RANKING {len(lists)} LISTS (lambda={lam}, feature={feature}) ===")
    return [greedy_fair_rerank(lst, lam, feature, list_size) for lst in lists]


def format_report_table(report: MetricsReport) -> str:
    """Human-readable rendering of a report for the terminal"""
    sections = []

    if report.protected_item_fraction:
        features = pd.DataFrame({
            'catalog_fraction': report.protected_item_fraction,
            'exposure': report.protected_exposure,
            'exposure_discounted': report.protected_exposure_discounted,
        })
        features.index.name = 'feature'
        sections.append("Protected features\n" + features.to_string(float_format=lambda v: f"{v:.4f}"))

        regimes = pd.DataFrame(report.per_regime_exposure,
                               columns=[f"feature_{j}" for j in range(len(report.protected_exposure))])
        regimes.index.name = 'regime'
        sections.append("Exposure per regime\n" + regimes.to_string(float_format=lambda v: f"{v:.4f}"))
    else:
        sections.append("Protected features\n(no sensitive features configured)")

    scores = pd.DataFrame({name: summary.to_dict() for name, summary in report.score_summary.items()}).T
    scores.index.name = 'score'
    sections.append("Score summary (top-l entries)\n" + scores.to_string(float_format=lambda v: f"{v:.4f}"))

    sections.append(f"Lists: {report.n_lists}   Slots: {report.n_slots}   "
                    f"Mean list relevance: {report.mean_list_relevance:.4f}")
    return "\n\n".join(sections) + "\n"
