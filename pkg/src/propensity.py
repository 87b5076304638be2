"""First generation stage: item and user propensity matrices."""

import logging
from typing import Optional

import numpy as np

from src.config import ExperimentConfig
from src.models import ItemPropensityMatrix, UserPropensityMatrix
from src.randomness import Seedish, as_root
from src.workers import map_rows

propensity_logger = logging.getLogger('lafs.propensity')


def generate_item_propensities(cfg: ExperimentConfig, rng: Seedish,
                               workers: Optional[int] = None) -> ItemPropensityMatrix:
    """
    Draw the binary item-feature matrix

    Entry (i, j) is a Bernoulli trial with probability item_feature_probs[j],
    drawn from the item's own substream ("item_prop", i).

    Args:
        cfg: Validated experiment config
        rng: Master seed or RandomRoot
        workers: Thread count (output does not depend on it)

    Returns:
        ItemPropensityMatrix of shape (n_items, k_factors)
    """
    propensity_logger.info("=== GENERATING ITEM PROPENSITIES ===")
    root = as_root(rng)
    probs = np.asarray(cfg.item_feature_probs, dtype=np.float64)

    def item_row(i: int) -> np.ndarray:
        return root.stream(("item_prop", i)).bernoullis(probs)

    rows = map_rows(item_row, cfg.n_items, workers)
    values = np.vstack(rows) if rows else np.zeros((0, cfg.k_factors), dtype=np.int8)
    matrix = ItemPropensityMatrix(values)

    if cfg.s_sensitive:
        fractions = matrix.protected_flags(cfg.s_sensitive).mean(axis=0)
        propensity_logger.info(f"🛡️ Protected item fractions: {np.round(fractions, 4).tolist()}")
    propensity_logger.info(f"✅ Item propensities ready: {values.shape[0]}×{values.shape[1]}")
    return matrix


def regime_index_per_user(cfg: ExperimentConfig) -> np.ndarray:
    """Regime index of every user, users numbered globally in regime order"""
    counts = [regime.user_count for regime in cfg.regimes]
    return np.repeat(np.arange(len(counts), dtype=np.int64), counts)


def generate_user_propensities(cfg: ExperimentConfig, rng: Seedish,
                               workers: Optional[int] = None) -> UserPropensityMatrix:
    """
    Draw the real user-feature matrix regime by regime

    User u in regime r gets entry (u, j) ~ Normal(mu_j^r, sigma_j^r) from
    substream ("user_prop", u). User indices are global across regimes.

    Args:
        cfg: Validated experiment config
        rng: Master seed or RandomRoot
        workers: Thread count (output does not depend on it)

    Returns:
        UserPropensityMatrix with regime labels
    """
    propensity_logger.info("=== GENERATING USER PROPENSITIES ===")
    root = as_root(rng)
    regime_of_user = regime_index_per_user(cfg)
    means = np.array([[mu for mu, _ in regime.user_factor_dists] for regime in cfg.regimes],
                     dtype=np.float64)
    stddevs = np.array([[sd for _, sd in regime.user_factor_dists] for regime in cfg.regimes],
                       dtype=np.float64)

    for r, regime in enumerate(cfg.regimes):
        propensity_logger.debug(f"👥 Regime {r}: {regime.user_count} users")

    def user_row(u: int) -> np.ndarray:
        r = regime_of_user[u]
        return root.stream(("user_prop", u)).normals(means[r], stddevs[r])

    rows = map_rows(user_row, len(regime_of_user), workers)
    values = np.vstack(rows) if rows else np.zeros((0, cfg.k_factors), dtype=np.float64)
    propensity_logger.info(f"✅ User propensities ready: {values.shape[0]} users "
                           f"in {cfg.n_regimes} regime(s)")
    return UserPropensityMatrix(values=values, regime_of_user=regime_of_user)
