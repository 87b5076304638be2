"""
Reading and writing output bundles.

A bundle is a directory holding ``recommendations.csv``, ``items.csv``,
``users.csv``, optional ``user_factors.csv`` / ``item_factors.csv``,
``metrics.json`` and ``manifest.json``. Every file is written to a temporary
name and renamed into place; the manifest goes last and records row counts
and SHA-256 checksums of the others.
"""

import io
import os
import json
import hashlib
import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src import __version__
from src.config import get_runtime_config, parse_config
from src.errors import BundleError, LafsError
from src.models import (FactorMatrices, GenerationResult, ItemPropensityMatrix, MetricsReport,
                        RecommendationList, ScoredItem, UserPropensityMatrix)

bundle_logger = logging.getLogger('lafs.bundle')

RECOMMENDATIONS_FILE = 'recommendations.csv'
ITEMS_FILE = 'items.csv'
USERS_FILE = 'users.csv'
USER_FACTORS_FILE = 'user_factors.csv'
ITEM_FACTORS_FILE = 'item_factors.csv'
METRICS_FILE = 'metrics.json'
MANIFEST_FILE = 'manifest.json'

REQUIRED_FILES = (RECOMMENDATIONS_FILE, ITEMS_FILE, USERS_FILE)
OPTIONAL_FILES = (USER_FACTORS_FILE, ITEM_FACTORS_FILE, METRICS_FILE)

RECOMMENDATION_COLUMNS = ['user_id', 'regime_id', 'item_id', 'rank', 'raw_score', 'biased_score',
                          'normalized_score', 'in_top_l', 'bias_penalty']

# 17 significant digits round-trip every float64
FLOAT_FORMAT = '%.17g'


@dataclass
class OutputBundle:
    """A bundle on disk: its directory, file paths and manifest"""
    directory: Path
    files: Dict[str, Path] = field(default_factory=dict)
    manifest: Dict[str, Any] = field(default_factory=dict)


def _atomic_write(path: Path, data: bytes):
    """Write bytes to a sibling temp file, then rename over ``path``"""
    handle, temp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(handle, 'wb') as temp:
            temp.write(data)
            temp.flush()
            os.fsync(temp.fileno())
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise


def _csv_bytes(frame: pd.DataFrame) -> bytes:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return buffer.getvalue().encode('utf-8')


def _json_bytes(payload: Dict[str, Any]) -> bytes:
    return (json.dumps(payload, indent=2, ensure_ascii=False) + "\n").encode('utf-8')


def _recommendations_frame(lists: Sequence[RecommendationList]) -> pd.DataFrame:
    rows = [(lst.user_id, lst.regime_id, entry.item_id, entry.rank, entry.raw_score,
             entry.biased_score, entry.normalized_score, int(entry.in_top_l), entry.bias_penalty_total)
            for lst in lists for entry in lst.entries]
    frame = pd.DataFrame(rows, columns=RECOMMENDATION_COLUMNS)
    for column in ('raw_score', 'biased_score', 'normalized_score', 'bias_penalty'):
        frame[column] = frame[column].astype(np.float64)
    return frame


def _matrix_frame(id_column: str, matrix: np.ndarray, prefix: str,
                  leading: Optional[Dict[str, Any]] = None) -> pd.DataFrame:
    data = {id_column: np.arange(matrix.shape[0], dtype=np.int64)}
    data.update(leading or {})
    for j in range(matrix.shape[1]):
        data[f"{prefix}{j}"] = matrix[:, j]
    return pd.DataFrame(data)


def _remove_stale(path: Path):
    try:
        path.unlink()
    except FileNotFoundError:
        return
    bundle_logger.info(f"🗑️ Removed {path.name} left by an earlier bundle")


def write_bundle(result: GenerationResult, out_dir) -> OutputBundle:
    """
    Persist a generation result

    Writing into a directory that already holds a bundle replaces it: the old
    manifest goes first, and optional files this result does not emit are
    deleted before the new manifest is written.

    Args:
        result: Pipeline products with normalized lists
        out_dir: Target directory (created if missing)

    Returns:
        OutputBundle describing the written files

    Raises:
        BundleError: lists are not normalized
        OSError: directory cannot be created or written
    """
    cfg = result.config
    out = Path(out_dir)
    bundle_logger.info(f"=== WRITING BUNDLE TO {out} ===")

    if not result.lists:
        raise BundleError("nothing to write: no recommendation lists", path=str(out))
    if any(entry.normalized_score is None for lst in result.lists for entry in lst.entries):
        raise BundleError("lists must be normalized before writing", path=str(out))

    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        bundle_logger.error(f"❌ Cannot create bundle directory {out}: {e}")
        raise

    payloads: Dict[str, bytes] = {}
    rows: Dict[str, int] = {}

    recommendations = _recommendations_frame(result.lists)
    payloads[RECOMMENDATIONS_FILE] = _csv_bytes(recommendations)
    rows[RECOMMENDATIONS_FILE] = len(recommendations)

    include_props = cfg.emit_propensities and result.item_propensities is not None
    flags = np.asarray(result.item_flags, dtype=np.int64).reshape(cfg.n_items, cfg.s_sensitive)
    items = _matrix_frame('item_id', flags, 'flag_')
    if include_props:
        for j in range(cfg.k_factors):
            items[f"prop_{j}"] = result.item_propensities.values[:, j].astype(np.int64)
    payloads[ITEMS_FILE] = _csv_bytes(items)
    rows[ITEMS_FILE] = len(items)

    users = pd.DataFrame({'user_id': np.arange(len(result.regime_of_user), dtype=np.int64),
                          'regime_id': np.asarray(result.regime_of_user, dtype=np.int64)})
    if cfg.emit_propensities and result.user_propensities is not None:
        for j in range(cfg.k_factors):
            users[f"prop_{j}"] = result.user_propensities.values[:, j]
    payloads[USERS_FILE] = _csv_bytes(users)
    rows[USERS_FILE] = len(users)

    if cfg.emit_factors and result.factors is not None:
        user_factors = _matrix_frame('id', result.factors.user_factors, 'f_')
        item_factors = _matrix_frame('id', result.factors.item_factors, 'f_')
        payloads[USER_FACTORS_FILE] = _csv_bytes(user_factors)
        payloads[ITEM_FACTORS_FILE] = _csv_bytes(item_factors)
        rows[USER_FACTORS_FILE] = len(user_factors)
        rows[ITEM_FACTORS_FILE] = len(item_factors)

    if result.report is not None:
        payloads[METRICS_FILE] = _json_bytes(result.report.to_dict())
        rows[METRICS_FILE] = 0

    _remove_stale(out / MANIFEST_FILE)
    files: Dict[str, Path] = {}
    for name, data in payloads.items():
        path = out / name
        try:
            _atomic_write(path, data)
        except OSError as e:
            bundle_logger.error(f"❌ Failed to write {path}: {e}")
            raise
        files[name] = path
        bundle_logger.info(f"💾 {name}: {rows[name]} rows")
    for name in OPTIONAL_FILES:
        if name not in payloads:
            _remove_stale(out / name)

    manifest = {
        'format_version': get_runtime_config().FORMAT_VERSION,
        'tool_version': __version__,
        'numpy_version': np.__version__,
        'name': cfg.name,
        'seed': cfg.seed,
        'has_candidates': result.has_candidates,
        'rerank': result.rerank,
        'float_format': FLOAT_FORMAT,
        'config': cfg.to_dict(),
        'files': {name: {'rows': rows[name], 'sha256': hashlib.sha256(data).hexdigest()}
                  for name, data in payloads.items()},
    }
    manifest_path = out / MANIFEST_FILE
    _atomic_write(manifest_path, _json_bytes(manifest))
    files[MANIFEST_FILE] = manifest_path
    bundle_logger.info(f"✅ Bundle written: {len(files)} files in {out}")
    return OutputBundle(directory=out, files=files, manifest=manifest)


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def _require_str(value: Any) -> str:
    if not isinstance(value, str) or value == '':
        raise ValueError("missing value")
    return value


def _as_int(value: Any) -> int:
    return int(_require_str(value))


def _as_float(value: Any) -> float:
    return float(_require_str(value))


def _as_flag(value: Any) -> int:
    flag = int(_require_str(value))
    if flag not in (0, 1):
        raise ValueError(f"expected 0 or 1, got {flag}")
    return flag


def _read_table(path: Path, expected_prefix: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise BundleError("missing bundle file", path=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError as e:
        raise BundleError("file is empty", path=str(path)) from e
    except pd.errors.ParserError as e:
        raise BundleError(f"malformed CSV: {e}", path=str(path)) from e
    header = list(frame.columns)
    if header[:len(expected_prefix)] != list(expected_prefix):
        raise BundleError(f"unexpected header {header}, expected to start with {list(expected_prefix)}",
                          path=str(path), line=1)
    return frame


def _convert(frame: pd.DataFrame, column: str, converter: Callable[[Any], Any], path: Path) -> List[Any]:
    converted = []
    for offset, value in enumerate(frame[column].tolist()):
        try:
            converted.append(converter(value))
        except (TypeError, ValueError) as e:
            # header is line 1
            raise BundleError(f"malformed value in column '{column}': {e}",
                              path=str(path), line=offset + 2) from e
    return converted


def _check_rows(name: str, actual: int, expected: int, path: Path):
    if actual != expected:
        raise BundleError(f"{name} has {actual} rows, expected {expected}", path=str(path))


def _verify_checksums(directory: Path, manifest: Dict[str, Any]):
    for name, meta in manifest.get('files', {}).items():
        path = directory / name
        if not path.exists():
            raise BundleError("file listed in manifest is missing", path=str(path))
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != meta.get('sha256'):
            raise BundleError("checksum does not match manifest", path=str(path))


def read_manifest(directory) -> Dict[str, Any]:
    """Load and sanity-check a bundle's manifest"""
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise BundleError("bundle has no manifest", path=str(path))
    try:
        manifest = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise BundleError(f"manifest is not valid JSON: {e.msg}", path=str(path), line=e.lineno) from e
    for key in ('format_version', 'seed', 'config', 'files', 'has_candidates'):
        if key not in manifest:
            raise BundleError(f"manifest lacks '{key}'", path=str(path))
    if manifest['format_version'] != get_runtime_config().FORMAT_VERSION:
        raise BundleError(f"unsupported format_version {manifest['format_version']}", path=str(path))
    if not isinstance(manifest['files'], dict):
        raise BundleError("manifest 'files' must be an object", path=str(path))
    return manifest


def numpy_version_matches(manifest: Dict[str, Any]) -> bool:
    """
    Compare the NumPy version that wrote a bundle with the running one

    Stored values read back exactly under any version; regenerating the same
    config is only guaranteed to give the same bytes under the recorded one.
    """
    recorded = manifest.get('numpy_version')
    if recorded == np.__version__:
        return True
    bundle_logger.warning(f"⚠️ Bundle was written with numpy {recorded}, running {np.__version__}; "
                          f"regenerating its config may not reproduce it")
    return False


def _check_listed_files(directory: Path, manifest: Dict[str, Any]):
    listed = set(manifest['files'])
    for name in REQUIRED_FILES:
        if name not in listed:
            raise BundleError("required file is not listed in the manifest", path=str(directory / name))
    for name in OPTIONAL_FILES:
        if name not in listed and (directory / name).exists():
            raise BundleError("file is present but not listed in the manifest", path=str(directory / name))
    if (USER_FACTORS_FILE in listed) != (ITEM_FACTORS_FILE in listed):
        raise BundleError("manifest lists only one of the factor files", path=str(directory / MANIFEST_FILE))


def read_bundle(directory, expect_seed: Optional[int] = None) -> GenerationResult:
    """
    Load a bundle back into memory

    Args:
        directory: Bundle directory
        expect_seed: When given, the manifest seed must match it

    Returns:
        GenerationResult with lists, flags, regimes, the stored report, and
        propensity and factor matrices when the bundle carries them

    Raises:
        BundleError: missing or unlisted file, malformed row (with line), row-count,
            checksum, score-range or seed inconsistency
    """
    directory = Path(directory)
    bundle_logger.info(f"=== READING BUNDLE FROM {directory} ===")
    manifest = read_manifest(directory)
    _check_listed_files(directory, manifest)
    numpy_version_matches(manifest)
    manifest_path = directory / MANIFEST_FILE

    try:
        cfg = parse_config(json.dumps(manifest['config']))
    except LafsError as e:
        raise BundleError(f"manifest config is invalid: {e}", path=str(manifest_path)) from e
    if cfg.seed != manifest['seed']:
        raise BundleError("manifest seed disagrees with its config", path=str(manifest_path))
    if expect_seed is not None and int(expect_seed) != cfg.seed:
        bundle_logger.error(f"❌ Expected seed {expect_seed}, bundle has {cfg.seed}")
        raise BundleError(f"bundle seed {cfg.seed} does not match expected seed {expect_seed}",
                          path=str(manifest_path))

    s, k = cfg.s_sensitive, cfg.k_factors
    has_candidates = bool(manifest['has_candidates'])
    n_users = cfg.n_users_total

    # items
    items_path = directory / ITEMS_FILE
    flag_columns = [f"flag_{j}" for j in range(s)]
    items = _read_table(items_path, ['item_id'] + flag_columns)
    _check_rows(ITEMS_FILE, len(items), cfg.n_items, items_path)
    if _convert(items, 'item_id', _as_int, items_path) != list(range(cfg.n_items)):
        raise BundleError("item ids must run 0..n_items-1 in order", path=str(items_path))
    flags = np.array([_convert(items, column, _as_flag, items_path) for column in flag_columns],
                     dtype=np.int64).T.reshape(cfg.n_items, s)
    item_propensities = None
    prop_columns = [f"prop_{j}" for j in range(k)]
    if all(column in items.columns for column in prop_columns):
        values = np.array([_convert(items, column, _as_flag, items_path) for column in prop_columns],
                          dtype=np.int8).T
        item_propensities = ItemPropensityMatrix(values)

    # users
    users_path = directory / USERS_FILE
    users = _read_table(users_path, ['user_id', 'regime_id'])
    _check_rows(USERS_FILE, len(users), n_users, users_path)
    if _convert(users, 'user_id', _as_int, users_path) != list(range(n_users)):
        raise BundleError("user ids must run 0..n_users-1 in order", path=str(users_path))
    regime_of_user = np.array(_convert(users, 'regime_id', _as_int, users_path), dtype=np.int64)
    if regime_of_user.size and (regime_of_user.min() < 0 or regime_of_user.max() >= cfg.n_regimes):
        raise BundleError("regime id out of range", path=str(users_path))
    user_propensities = None
    if all(column in users.columns for column in prop_columns):
        values = np.array([_convert(users, column, _as_float, users_path) for column in prop_columns],
                          dtype=np.float64).T.reshape(n_users, k)
        user_propensities = UserPropensityMatrix(values=values, regime_of_user=regime_of_user)

    # recommendations
    recs_path = directory / RECOMMENDATIONS_FILE
    recs = _read_table(recs_path, RECOMMENDATION_COLUMNS)
    columns = {
        'user_id': _convert(recs, 'user_id', _as_int, recs_path),
        'regime_id': _convert(recs, 'regime_id', _as_int, recs_path),
        'item_id': _convert(recs, 'item_id', _as_int, recs_path),
        'rank': _convert(recs, 'rank', _as_int, recs_path),
        'raw_score': _convert(recs, 'raw_score', _as_float, recs_path),
        'biased_score': _convert(recs, 'biased_score', _as_float, recs_path),
        'normalized_score': _convert(recs, 'normalized_score', _as_float, recs_path),
        'in_top_l': _convert(recs, 'in_top_l', _as_flag, recs_path),
        'bias_penalty': _convert(recs, 'bias_penalty', _as_float, recs_path),
    }
    per_list = cfg.candidate_size if has_candidates else cfg.list_size
    _check_rows(RECOMMENDATIONS_FILE, len(recs), n_users * per_list, recs_path)

    lo, hi = cfg.norm_range
    lists: List[RecommendationList] = []
    by_user: Dict[int, RecommendationList] = {}
    for offset in range(len(recs)):
        line = offset + 2
        user_id = columns['user_id'][offset]
        item_id = columns['item_id'][offset]
        if not 0 <= user_id < n_users:
            raise BundleError(f"user id {user_id} out of range", path=str(recs_path), line=line)
        if not 0 <= item_id < cfg.n_items:
            raise BundleError(f"item id {item_id} out of range", path=str(recs_path), line=line)
        normalized = columns['normalized_score'][offset]
        if not lo <= normalized <= hi:
            raise BundleError(f"normalized score {normalized} outside [{lo}, {hi}]",
                              path=str(recs_path), line=line)
        if columns['regime_id'][offset] != regime_of_user[user_id]:
            raise BundleError("regime id disagrees with users file", path=str(recs_path), line=line)

        lst = by_user.get(user_id)
        if lst is None:
            lst = RecommendationList(user_id=user_id, regime_id=int(regime_of_user[user_id]), entries=[],
                                     list_size=cfg.list_size, has_candidates=has_candidates)
            by_user[user_id] = lst
            lists.append(lst)
        lst.entries.append(ScoredItem(
            item_id=item_id,
            raw_score=columns['raw_score'][offset],
            bias_penalty_total=columns['bias_penalty'][offset],
            biased_score=columns['biased_score'][offset],
            protected_flags=tuple(int(f) for f in flags[item_id]),
            normalized_score=normalized,
            rank=columns['rank'][offset],
            in_top_l=bool(columns['in_top_l'][offset]),
        ))

    if len(lists) != n_users:
        raise BundleError(f"recommendations cover {len(lists)} users, expected {n_users}", path=str(recs_path))
    for lst in lists:
        if len(lst.entries) != per_list:
            raise BundleError(f"user {lst.user_id} has {len(lst.entries)} rows, expected {per_list}",
                              path=str(recs_path))

    factors = None
    uf_path, if_path = directory / USER_FACTORS_FILE, directory / ITEM_FACTORS_FILE
    if USER_FACTORS_FILE in manifest['files']:
        factor_columns = [f"f_{j}" for j in range(k)]
        uf = _read_table(uf_path, ['id'] + factor_columns)
        itf = _read_table(if_path, ['id'] + factor_columns)
        _check_rows(USER_FACTORS_FILE, len(uf), n_users, uf_path)
        _check_rows(ITEM_FACTORS_FILE, len(itf), cfg.n_items, if_path)
        factors = FactorMatrices(
            user_factors=np.array([_convert(uf, c, _as_float, uf_path) for c in factor_columns],
                                  dtype=np.float64).T.reshape(n_users, k),
            item_factors=np.array([_convert(itf, c, _as_float, if_path) for c in factor_columns],
                                  dtype=np.float64).T.reshape(cfg.n_items, k),
        )

    for name, meta in manifest['files'].items():
        if name.endswith('.csv'):
            path = directory / name
            if path.exists():
                with path.open('r', encoding='utf-8') as handle:
                    rows = sum(1 for _ in handle) - 1
                _check_rows(name, rows, meta.get('rows'), path)
    _verify_checksums(directory, manifest)

    report = None
    metrics_path = directory / METRICS_FILE
    if METRICS_FILE in manifest['files']:
        try:
            report = MetricsReport.from_dict(json.loads(metrics_path.read_text(encoding='utf-8')))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise BundleError(f"metrics file is malformed: {e}", path=str(metrics_path)) from e

    bundle_logger.info(f"✅ Read {len(lists)} lists for {n_users} users "
                       f"({'with' if has_candidates else 'without'} candidate pools)")
    return GenerationResult(
        config=cfg,
        item_flags=flags,
        regime_of_user=regime_of_user,
        lists=lists,
        item_propensities=item_propensities,
        user_propensities=user_propensities,
        factors=factors,
        report=report,
        rerank=manifest.get('rerank'),
    )
