import logging
from datetime import datetime
from typing import Optional, Union

import numpy as np

from src.config import ExperimentConfig, validate_config
from src.errors import InvalidArgumentError
from src.factors import materialize_item_factors, materialize_user_factors
from src.metrics import compute_report
from src.models import FactorMatrices, GenerationResult, ItemPropensityMatrix
from src.propensity import generate_item_propensities, generate_user_propensities
from src.randomness import RandomRoot
from src.reclist import build_all_lists, normalize_all
from src.workers import resolve_workers

pipeline_logger = logging.getLogger('lafs.pipeline')


def _fixed_catalog(cfg: ExperimentConfig,
                   item_propensities: Union[ItemPropensityMatrix, np.ndarray]) -> ItemPropensityMatrix:
    matrix = item_propensities if isinstance(item_propensities, ItemPropensityMatrix) \
        else ItemPropensityMatrix(np.asarray(item_propensities))
    expected = (cfg.n_items, cfg.k_factors)
    if matrix.values.shape != expected:
        raise InvalidArgumentError(f"item propensities must have shape {expected}, got {matrix.values.shape}")
    if not np.isin(matrix.values, (0, 1)).all():
        raise InvalidArgumentError("item propensities must be binary")
    return matrix


def run_pipeline(cfg: ExperimentConfig, workers: Optional[int] = None,
                 item_propensities: Optional[Union[ItemPropensityMatrix, np.ndarray]] = None
                 ) -> GenerationResult:
    """
    Run every generation stage for one config

    Args:
        cfg: Experiment config (validated again here)
        workers: Thread count for per-entity stages; output does not depend on it
        item_propensities: Optional fixed binary catalog (n_items × k) used
            instead of drawing one

    Returns:
        GenerationResult with matrices, normalized lists and the metrics report
    """
    cfg = validate_config(cfg)
    workers = resolve_workers(workers)
    pipeline_logger.info(f"=== RUNNING LAFS PIPELINE '{cfg.name}' ===")
    pipeline_logger.info(f"🎲 Seed {cfg.seed}, {workers} worker(s)")
    started = datetime.now()
    root = RandomRoot(cfg.seed)

    if item_propensities is None:
        pi_items = generate_item_propensities(cfg, root, workers)
    else:
        pipeline_logger.info("📦 Using caller-supplied item catalog")
        pi_items = _fixed_catalog(cfg, item_propensities)
    pi_users = generate_user_propensities(cfg, root, workers)

    item_factors = materialize_item_factors(pi_items, cfg.item_sigma, root, workers)
    user_factors = materialize_user_factors(pi_users, cfg.user_sigma, root, workers)
    factors = FactorMatrices(user_factors=user_factors, item_factors=item_factors)

    lists = build_all_lists(user_factors, item_factors, pi_items, pi_users.regime_of_user,
                            cfg, root, workers)
    normalize_all(lists, cfg.norm_range)
    report = compute_report(lists, pi_items, cfg)

    elapsed = (datetime.now() - started).total_seconds()
    pipeline_logger.info(f"✅ Pipeline finished in {elapsed:.2f}s")
    return GenerationResult(
        config=cfg,
        item_flags=pi_items.protected_flags(cfg.s_sensitive).copy(),
        regime_of_user=pi_users.regime_of_user.copy(),
        lists=lists,
        item_propensities=pi_items,
        user_propensities=pi_users,
        factors=factors,
        report=report,
    )
