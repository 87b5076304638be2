from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np


@dataclass
class ItemPropensityMatrix:
    """Binary item-feature associations (n_items × k)"""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)

    @property
    def n_items(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def protected_flags(self, s: int) -> np.ndarray:
        """The first s columns: item i is protected on feature j iff flags[i, j] == 1"""
        return self.values[:, :s]

    def __eq__(self, other):
        return isinstance(other, ItemPropensityMatrix) and np.array_equal(self.values, other.values)


@dataclass
class UserPropensityMatrix:
    """Real user-feature associations plus the regime each user was drawn from"""
    values: np.ndarray
    regime_of_user: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.regime_of_user = np.asarray(self.regime_of_user, dtype=np.int64)

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        return (isinstance(other, UserPropensityMatrix)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.regime_of_user, other.regime_of_user))


@dataclass
class FactorMatrices:
    """Latent factors: U (users × k) and V (items × k)"""
    user_factors: np.ndarray
    item_factors: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, FactorMatrices)
                and np.array_equal(self.user_factors, other.user_factors)
                and np.array_equal(self.item_factors, other.item_factors))


@dataclass
class ScoredItem:
    """One scored candidate in a user's list"""
    item_id: int
    raw_score: float
    bias_penalty_total: float
    biased_score: float
    protected_flags: Tuple[int, ...]
    normalized_score: Optional[float] = None
    rank: int = 0
    in_top_l: bool = True

    def is_protected(self, feature: int) -> bool:
        return self.protected_flags[feature] == 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'item_id': self.item_id,
            'rank': self.rank,
            'raw_score': self.raw_score,
            'bias_penalty_total': self.bias_penalty_total,
            'biased_score': self.biased_score,
            'normalized_score': self.normalized_score,
            'in_top_l': self.in_top_l,
            'protected_flags': list(self.protected_flags),
        }


@dataclass
class RecommendationList:
    """
    A user's ranked list.

    ``entries`` is sorted descending by biased score. When the candidate pool
    was retained it holds all l' candidates and the first ``list_size`` are
    flagged ``in_top_l``; otherwise it holds exactly the top ``list_size``.
    """
    user_id: int
    regime_id: int
    entries: List[ScoredItem]
    list_size: int
    has_candidates: bool = False

    def top(self) -> List[ScoredItem]:
        return self.entries[:self.list_size]

    def item_ids(self) -> List[int]:
        return [entry.item_id for entry in self.entries]

    def top_item_ids(self) -> List[int]:
        return [entry.item_id for entry in self.top()]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'user_id': self.user_id,
            'regime_id': self.regime_id,
            'list_size': self.list_size,
            'has_candidates': self.has_candidates,
            'entries': [entry.to_dict() for entry in self.entries],
        }


@dataclass
class ScoreSummary:
    """Distribution summary of one score column"""
    min: float
    max: float
    mean: float
    stddev: float

    def to_dict(self) -> Dict[str, float]:
        return {'min': self.min, 'max': self.max, 'mean': self.mean, 'stddev': self.stddev}


@dataclass
class MetricsReport:
    """Fairness-relevant summary of generated (or re-ranked) output"""
    protected_item_fraction: List[float]
    protected_exposure: List[float]
    protected_exposure_discounted: List[float]
    per_regime_exposure: List[List[float]]
    score_summary: Dict[str, ScoreSummary]
    mean_list_relevance: float
    n_lists: int = 0
    n_slots: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'protected_item_fraction': list(self.protected_item_fraction),
            'protected_exposure': list(self.protected_exposure),
            'protected_exposure_discounted': list(self.protected_exposure_discounted),
            'per_regime_exposure': [list(row) for row in self.per_regime_exposure],
            'score_summary': {name: summary.to_dict() for name, summary in self.score_summary.items()},
            'mean_list_relevance': self.mean_list_relevance,
            'n_lists': self.n_lists,
            'n_slots': self.n_slots,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MetricsReport':
        return cls(
            protected_item_fraction=[float(v) for v in data['protected_item_fraction']],
            protected_exposure=[float(v) for v in data['protected_exposure']],
            protected_exposure_discounted=[float(v) for v in data['protected_exposure_discounted']],
            per_regime_exposure=[[float(v) for v in row] for row in data['per_regime_exposure']],
            score_summary={name: ScoreSummary(**summary) for name, summary in data['score_summary'].items()},
            mean_list_relevance=float(data['mean_list_relevance']),
            n_lists=int(data.get('n_lists', 0)),
            n_slots=int(data.get('n_slots', 0)),
        )


@dataclass
class RegimeShiftResult:
    """Exposure per regime and the shift between the first and last regime"""
    per_regime_exposure: List[List[float]]
    exposure_delta: List[float]
    regime_user_counts: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'per_regime_exposure': [list(row) for row in self.per_regime_exposure],
            'exposure_delta': list(self.exposure_delta),
            'regime_user_counts': list(self.regime_user_counts),
        }


@dataclass
class GenerationResult:
    """
    Everything one pipeline run produces (or one bundle holds).

    A bundle read from disk always has the item flags and user regimes; the
    full propensity and factor matrices are present only when they were
    emitted.
    """
    config: Any
    item_flags: np.ndarray
    regime_of_user: np.ndarray
    lists: List[RecommendationList]
    item_propensities: Optional[ItemPropensityMatrix] = None
    user_propensities: Optional[UserPropensityMatrix] = None
    factors: Optional[FactorMatrices] = None
    report: Optional[MetricsReport] = None
    rerank: Optional[Dict[str, Any]] = None

    @property
    def has_candidates(self) -> bool:
        return bool(self.lists) and all(lst.has_candidates for lst in self.lists)
