"""
Per-user recommendation lists: candidate sampling, dot-product scoring,
sensitive-feature bias penalties, top-l truncation and global min-max
normalization.
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import ExperimentConfig
from src.errors import InvalidArgumentError
from src.models import ItemPropensityMatrix, RecommendationList, ScoredItem
from src.randomness import RandomRoot, RandomStream, Seedish, as_root, draw_normal, draw_uniform_subset
from src.workers import map_rows

reclist_logger = logging.getLogger('lafs.reclist')


def score_pair(user_vector: Sequence[float], item_vector: Sequence[float]) -> float:
    """
    Predicted rating of one user-item pair

    Args:
        user_vector: k latent factors of the user
        item_vector: k latent factors of the item

    Returns:
        Their dot product
    """
    user_vector = np.asarray(user_vector, dtype=np.float64)
    item_vector = np.asarray(item_vector, dtype=np.float64)
    if user_vector.shape != item_vector.shape or user_vector.ndim != 1:
        raise InvalidArgumentError(
            f"factor vectors must be equal-length 1-d, got {user_vector.shape} and {item_vector.shape}")
    return float(np.dot(user_vector, item_vector))


def apply_bias(raw: float, protected_flags: Sequence[int], bias_specs: Sequence[Tuple[float, float]],
               stream: Optional[RandomStream], clamp: bool = True) -> Tuple[float, float]:
    """
    Penalize a rating once per sensitive feature the item carries

    For every flagged feature j a penalty is drawn from Normal(bias_specs[j])
    and, when ``clamp`` is set, floored at 0 so it never boosts. The stream
    is only touched for flagged features.

    Args:
        raw: Unbiased rating
        protected_flags: s binary flags of the item
        bias_specs: s (mean, stddev) penalty generators
        stream: Substream for this (user, item) occurrence
        clamp: Floor each penalty draw at zero

    Returns:
        (biased_score, bias_penalty_total)
    """
    if len(protected_flags) != len(bias_specs):
        raise InvalidArgumentError(
            f"{len(protected_flags)} protected flags but {len(bias_specs)} bias specs")
    total = 0.0
    for flag, (mu, sigma) in zip(protected_flags, bias_specs):
        if not flag:
            continue
        penalty = draw_normal(stream, mu, sigma)
        if clamp and penalty < 0:
            penalty = 0.0
        total += penalty
    if total == 0.0:
        return float(raw), 0.0
    return float(raw) - total, total


def _bias_stream(root: RandomRoot, cfg: ExperimentConfig, user_id: int, item_id: int) -> RandomStream:
    if cfg.bias_draw_scope == 'item':
        return root.stream(("bias_item", item_id))
    return root.stream(("bias", user_id), ("item", item_id))


def rank_entries(entries: List[ScoredItem], list_size: int) -> List[ScoredItem]:
    """Sort descending by biased score, ties by ascending item id, and stamp ranks"""
    ordered = sorted(entries, key=lambda entry: (-entry.biased_score, entry.item_id))
    for position, entry in enumerate(ordered):
        entry.rank = position + 1
        entry.in_top_l = position < list_size
    return ordered


def build_user_list(user_id: int, U: np.ndarray, V: np.ndarray,
                    pi_I: Union[ItemPropensityMatrix, np.ndarray], cfg: ExperimentConfig,
                    rng: Seedish, regime_id: int = 0) -> RecommendationList:
    """
    Generate one user's recommendation list

    Samples l' distinct candidates from ("cand", user_id), scores them against
    the user's factors, applies bias penalties, sorts and keeps the top l (or
    every candidate, top l flagged, when emit_candidates is set).

    Args:
        user_id: Global user index
        U: User factor matrix
        V: Item factor matrix
        pi_I: Item propensities (first s columns are the protected flags)
        cfg: Validated experiment config
        rng: Master seed or RandomRoot
        regime_id: Regime the user belongs to

    Returns:
        RecommendationList for the user
    """
    root = as_root(rng)
    flags_matrix = pi_I.values if isinstance(pi_I, ItemPropensityMatrix) else np.asarray(pi_I)
    s = cfg.s_sensitive

    candidates = draw_uniform_subset(root.stream(("cand", user_id)), V.shape[0], cfg.candidate_size)
    user_vector = U[user_id]
    raw_scores = V[candidates] @ user_vector

    entries = []
    for item_id, raw in zip(candidates.tolist(), raw_scores.tolist()):
        flags = tuple(int(f) for f in flags_matrix[item_id, :s])
        if any(flags):
            biased, penalty = apply_bias(raw, flags, cfg.bias_specs,
                                         _bias_stream(root, cfg, user_id, item_id), cfg.bias_clamp)
        else:
            biased, penalty = raw, 0.0
        entries.append(ScoredItem(item_id=item_id, raw_score=raw, bias_penalty_total=penalty,
                                  biased_score=biased, protected_flags=flags))

    ordered = rank_entries(entries, cfg.list_size)
    if not cfg.emit_candidates:
        ordered = ordered[:cfg.list_size]

    reclist_logger.debug(f"📋 User {user_id}: top items {[e.item_id for e in ordered[:cfg.list_size]]}")
    return RecommendationList(user_id=user_id, regime_id=int(regime_id), entries=ordered,
                              list_size=cfg.list_size, has_candidates=cfg.emit_candidates)


def build_all_lists(U: np.ndarray, V: np.ndarray, pi_I: Union[ItemPropensityMatrix, np.ndarray],
                    regime_of_user: Sequence[int], cfg: ExperimentConfig, rng: Seedish,
                    workers: Optional[int] = None) -> List[RecommendationList]:
    """Build every user's list, in user order"""
    reclist_logger.info("=== BUILDING RECOMMENDATION LISTS ===")
    root = as_root(rng)
    regimes = np.asarray(regime_of_user)

    def user_list(u: int) -> RecommendationList:
        return build_user_list(u, U, V, pi_I, cfg, root, regime_id=int(regimes[u]))

    lists = map_rows(user_list, U.shape[0], workers)
    reclist_logger.info(f"✅ Built {len(lists)} lists (l'={cfg.candidate_size}, l={cfg.list_size})")
    return lists


def normalize_all(lists: List[RecommendationList],
                  norm_range: Tuple[float, float]) -> List[RecommendationList]:
    """
    Min-max normalize biased scores over every entry of every list

    Sets ``normalized_score`` in place (retained candidates included) and
    returns the same lists. When all scores are equal every entry gets the
    midpoint of the range.

    Raises:
        InvalidArgumentError: no scored entry exists
    """
    lo, hi = float(norm_range[0]), float(norm_range[1])
    scores = [entry.biased_score for lst in lists for entry in lst.entries]
    if not scores:
        raise InvalidArgumentError("cannot normalize: no scored entries")

    low, high = min(scores), max(scores)
    reclist_logger.info(f"📏 Normalizing {len(scores)} scores from [{low:.6g}, {high:.6g}] "
                        f"to [{lo:g}, {hi:g}]")

    for lst in lists:
        for entry in lst.entries:
            entry.normalized_score = normalize_score(entry.biased_score, low, high, lo, hi)
    return lists


def normalize_score(score: float, low: float, high: float, lo: float, hi: float) -> float:
    """Affine map of [low, high] onto [lo, hi] with exact endpoints"""
    if high == low:
        return (lo + hi) / 2.0
    if score == high:
        return hi
    if score == low:
        return lo
    value = lo + (score - low) / (high - low) * (hi - lo)
    # rounding may land one ulp outside the range
    return min(max(value, lo), hi)
