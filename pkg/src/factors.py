"""Second generation stage: latent factors drawn around the propensities."""

import logging
from typing import Optional, Union

import numpy as np

from src.errors import InvalidArgumentError
from src.models import ItemPropensityMatrix, UserPropensityMatrix
from src.randomness import Seedish, as_root
from src.workers import map_rows

factors_logger = logging.getLogger('lafs.factors')


def _materialize(propensities: np.ndarray, sigma_f: float, rng: Seedish, label: str,
                 workers: Optional[int]) -> np.ndarray:
    if sigma_f < 0:
        raise InvalidArgumentError(f"sigma_f must be ≥ 0, got {sigma_f}")
    root = as_root(rng)
    centres = np.asarray(propensities, dtype=np.float64)

    def factor_row(row: int) -> np.ndarray:
        return root.stream((label, row)).normals(centres[row], sigma_f)

    rows = map_rows(factor_row, centres.shape[0], workers)
    if not rows:
        return np.zeros_like(centres)
    return np.vstack(rows)


def materialize_item_factors(pi: Union[ItemPropensityMatrix, np.ndarray], sigma_f: float,
                             rng: Seedish, workers: Optional[int] = None) -> np.ndarray:
    """
    V: entry (i, j) ~ Normal(pi_ij, sigma_f) from substream ("item_factor", i)

    sigma_f == 0 returns the propensities themselves as floats.
    """
    factors_logger.info(f"=== MATERIALIZING ITEM FACTORS (sigma_f={sigma_f}) ===")
    values = pi.values if isinstance(pi, ItemPropensityMatrix) else pi
    v = _materialize(values, sigma_f, rng, "item_factor", workers)
    factors_logger.info(f"✅ Item factors ready: {v.shape[0]}×{v.shape[1] if v.ndim == 2 else 0}")
    return v


def materialize_user_factors(pi: Union[UserPropensityMatrix, np.ndarray], sigma_f: float,
                             rng: Seedish, workers: Optional[int] = None) -> np.ndarray:
    """U: entry (u, j) ~ Normal(pi_uj, sigma_f) from substream ("user_factor", u)"""
    factors_logger.info(f"=== MATERIALIZING USER FACTORS (sigma_f={sigma_f}) ===")
    values = pi.values if isinstance(pi, UserPropensityMatrix) else pi
    u = _materialize(values, sigma_f, rng, "user_factor", workers)
    factors_logger.info(f"✅ User factors ready: {u.shape[0]}×{u.shape[1] if u.ndim == 2 else 0}")
    return u
