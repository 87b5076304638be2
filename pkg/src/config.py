import os
import json
import math
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from src.errors import ConfigParseError, ConfigValidationError

load_dotenv()

config_logger = logging.getLogger('lafs.config')


class Config:
    """Base runtime configuration (never influences generated values)"""
    LOG_LEVEL = os.environ.get('LAFS_LOG_LEVEL') or 'INFO'
    LOG_FILE = os.environ.get('LAFS_LOG_FILE') or ''

    # Raw LAFS_WORKERS value, parsed by resolve_workers
    WORKERS = os.environ.get('LAFS_WORKERS') or '1'

    FORMAT_VERSION = 1


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.environ.get('LAFS_LOG_LEVEL') or 'DEBUG'


class ProductionConfig(Config):
    """Production configuration"""


class TestingConfig(Config):
    """Testing configuration"""
    LOG_LEVEL = 'WARNING'
    WORKERS = '1'


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': ProductionConfig
}


def get_runtime_config(name: Optional[str] = None):
    """Resolve a runtime config class by name, falling back to LAFS_ENV then 'default'"""
    key = name or os.environ.get('LAFS_ENV') or 'default'
    if key not in config:
        config_logger.warning(f"⚠️ Unknown runtime config '{key}', using default")
        key = 'default'
    return config[key]


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

DEFAULT_K_FACTORS = 100
DEFAULT_SIGMA_FACTOR = 0.1
DEFAULT_NORM_RANGE = (1.0, 5.0)
DEFAULT_SEED = 42
DEFAULT_ITEM_PROB = 0.5
DEFAULT_CANDIDATE_CAP = 100
DEFAULT_LIST_CAP = 10
BIAS_DRAW_SCOPES = ('occurrence', 'item')
SEED_LIMIT = 2 ** 64

Pair = Tuple[float, float]


@dataclass(frozen=True)
class RegimeSpec:
    """One block of users sharing a user-propensity distribution"""
    user_count: int
    user_factor_dists: Tuple[Pair, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'user_count': self.user_count,
            'user_factor_dists': [list(pair) for pair in self.user_factor_dists],
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Every experimenter knob for one generation run.

    The first ``s_sensitive`` of the ``k_factors`` factors are the sensitive
    ones. ``sigma_factor_user`` / ``sigma_factor_item`` override the shared
    ``sigma_factor`` for one side when set.
    """
    n_items: int
    k_factors: int
    s_sensitive: int
    sigma_factor: float
    item_feature_probs: Tuple[float, ...]
    regimes: Tuple[RegimeSpec, ...]
    bias_specs: Tuple[Pair, ...]
    candidate_size: int
    list_size: int
    norm_range: Pair
    seed: int = DEFAULT_SEED
    emit_candidates: bool = False
    sigma_factor_user: Optional[float] = None
    sigma_factor_item: Optional[float] = None
    bias_draw_scope: str = 'occurrence'
    bias_clamp: bool = True
    emit_factors: bool = False
    emit_propensities: bool = False
    name: str = 'lafs'

    @property
    def n_users_total(self) -> int:
        return sum(regime.user_count for regime in self.regimes)

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def user_sigma(self) -> float:
        return self.sigma_factor if self.sigma_factor_user is None else self.sigma_factor_user

    @property
    def item_sigma(self) -> float:
        return self.sigma_factor if self.sigma_factor_item is None else self.sigma_factor_item

    def regime_starts(self) -> List[int]:
        """Global index of each regime's first user"""
        starts, total = [], 0
        for regime in self.regimes:
            starts.append(total)
            total += regime.user_count
        return starts

    def to_dict(self) -> Dict[str, Any]:
        """Fully expanded, JSON-ready view; field order is the document order"""
        return {
            'name': self.name,
            'n_items': self.n_items,
            'k_factors': self.k_factors,
            's_sensitive': self.s_sensitive,
            'sigma_factor': self.sigma_factor,
            'sigma_factor_user': self.sigma_factor_user,
            'sigma_factor_item': self.sigma_factor_item,
            'item_feature_probs': list(self.item_feature_probs),
            'regimes': [regime.to_dict() for regime in self.regimes],
            'bias_specs': [list(pair) for pair in self.bias_specs],
            'bias_draw_scope': self.bias_draw_scope,
            'bias_clamp': self.bias_clamp,
            'candidate_size': self.candidate_size,
            'list_size': self.list_size,
            'norm_range': list(self.norm_range),
            'seed': self.seed,
            'emit_candidates': self.emit_candidates,
            'emit_factors': self.emit_factors,
            'emit_propensities': self.emit_propensities,
        }


KNOWN_FIELDS = frozenset(ExperimentConfig.__dataclass_fields__)
REGIME_FIELDS = frozenset({'user_count', 'user_factor_dists', 'default', 'overrides'})


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value: Any) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool)
            and math.isfinite(value))


class _DocumentReader:
    """Pulls typed fields out of a decoded JSON object, recording type violations"""

    def __init__(self):
        self.violations: List[Tuple[str, str]] = []

    def fail(self, path: str, rule: str):
        self.violations.append((path, rule))

    def integer(self, value: Any, path: str, default: Optional[int] = None) -> Optional[int]:
        if value is None:
            return default
        if not _is_int(value):
            self.fail(path, "must be an integer")
            return default
        return value

    def real(self, value: Any, path: str, default: Optional[float] = None) -> Optional[float]:
        if value is None:
            return default
        if not _is_real(value):
            self.fail(path, "must be a finite number")
            return default
        return float(value)

    def boolean(self, value: Any, path: str, default: bool) -> bool:
        if value is None:
            return default
        if not isinstance(value, bool):
            self.fail(path, "must be true or false")
            return default
        return value

    def pair(self, value: Any, path: str) -> Optional[Pair]:
        if not isinstance(value, (list, tuple)) or len(value) != 2 \
                or not all(_is_real(v) for v in value):
            self.fail(path, "must be a [mean, stddev] pair of finite numbers")
            return None
        return (float(value[0]), float(value[1]))

    def pairs(self, value: Any, path: str) -> Optional[Tuple[Pair, ...]]:
        if not isinstance(value, list):
            self.fail(path, "must be a list of [mean, stddev] pairs")
            return None
        parsed = [self.pair(item, f"{path}[{i}]") for i, item in enumerate(value)]
        if any(p is None for p in parsed):
            return None
        return tuple(parsed)

    def regime(self, value: Any, path: str, k: int) -> Optional[RegimeSpec]:
        if not isinstance(value, dict):
            self.fail(path, "must be an object")
            return None
        for key in value:
            if key not in REGIME_FIELDS:
                self.fail(f"{path}.{key}", "unknown field")
        if 'user_count' not in value:
            self.fail(f"{path}.user_count", "required field is missing")
        count = self.integer(value.get('user_count'), f"{path}.user_count")

        if 'user_factor_dists' in value:
            if 'default' in value or 'overrides' in value:
                self.fail(path, "use either user_factor_dists or default/overrides, not both")
            dists = self.pairs(value['user_factor_dists'], f"{path}.user_factor_dists")
        elif 'default' in value:
            base = self.pair(value['default'], f"{path}.default")
            dists = None
            if base is not None:
                expanded = [base] * k
                overrides = value.get('overrides') or {}
                if not isinstance(overrides, dict):
                    self.fail(f"{path}.overrides", "must be an object keyed by factor index")
                    overrides = {}
                for key, raw in overrides.items():
                    opath = f"{path}.overrides[{key}]"
                    try:
                        index = int(key)
                    except (TypeError, ValueError):
                        self.fail(opath, "key must be a factor index")
                        continue
                    if not 0 <= index < k:
                        self.fail(opath, f"factor index in [0, {k})")
                        continue
                    override = self.pair(raw, opath)
                    if override is not None:
                        expanded[index] = override
                dists = tuple(expanded)
        else:
            self.fail(f"{path}.user_factor_dists", "required field is missing")
            dists = None

        if count is None or dists is None:
            return None
        return RegimeSpec(user_count=count, user_factor_dists=dists)


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate a JSON configuration document

    Args:
        text: Configuration document

    Returns:
        Validated ExperimentConfig with documented defaults filled in

    Raises:
        ConfigParseError: document is not well-formed JSON or not an object
        ConfigValidationError: a field has the wrong type or an invariant fails
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        config_logger.error(f"❌ Config is not valid JSON: {e}")
        raise ConfigParseError(e.msg, line=e.lineno, column=e.colno) from e

    if not isinstance(doc, dict):
        raise ConfigParseError("top-level value must be an object", line=1, column=1)

    reader = _DocumentReader()
    for key in doc:
        if key not in KNOWN_FIELDS:
            reader.fail(key, "unknown field")

    for required in ('n_items', 'regimes'):
        if required not in doc:
            reader.fail(required, "required field is missing")

    n_items = reader.integer(doc.get('n_items'), 'n_items', default=0)
    k = reader.integer(doc.get('k_factors'), 'k_factors', default=DEFAULT_K_FACTORS)
    s = reader.integer(doc.get('s_sensitive'), 's_sensitive', default=0)
    sigma = reader.real(doc.get('sigma_factor'), 'sigma_factor', default=DEFAULT_SIGMA_FACTOR)
    sigma_user = reader.real(doc.get('sigma_factor_user'), 'sigma_factor_user')
    sigma_item = reader.real(doc.get('sigma_factor_item'), 'sigma_factor_item')

    raw_probs = doc.get('item_feature_probs')
    if raw_probs is None:
        probs = tuple([DEFAULT_ITEM_PROB] * max(k, 0))
    elif not isinstance(raw_probs, list):
        reader.fail('item_feature_probs', "must be a list of probabilities")
        probs = ()
    else:
        probs = tuple(reader.real(p, f"item_feature_probs[{i}]", default=0.0)
                      for i, p in enumerate(raw_probs))

    raw_regimes = doc.get('regimes')
    regimes: List[RegimeSpec] = []
    if raw_regimes is not None:
        if not isinstance(raw_regimes, list):
            reader.fail('regimes', "must be a list of regime objects")
        else:
            for i, raw in enumerate(raw_regimes):
                regime = reader.regime(raw, f"regimes[{i}]", k)
                if regime is not None:
                    regimes.append(regime)

    raw_bias = doc.get('bias_specs')
    if raw_bias is None:
        bias = tuple([(0.0, 0.0)] * max(s, 0))
    else:
        bias = reader.pairs(raw_bias, 'bias_specs') or ()

    candidate_size = reader.integer(doc.get('candidate_size'), 'candidate_size',
                                    default=min(n_items, DEFAULT_CANDIDATE_CAP))
    list_size = reader.integer(doc.get('list_size'), 'list_size',
                               default=min(candidate_size, DEFAULT_LIST_CAP))

    raw_range = doc.get('norm_range')
    norm_range = DEFAULT_NORM_RANGE
    if raw_range is not None:
        if not isinstance(raw_range, list) or len(raw_range) != 2 \
                or not all(_is_real(v) for v in raw_range):
            reader.fail('norm_range', "must be a [lo, hi] pair of finite numbers")
        else:
            norm_range = (float(raw_range[0]), float(raw_range[1]))

    seed = reader.integer(doc.get('seed'), 'seed', default=DEFAULT_SEED)
    scope = doc.get('bias_draw_scope', 'occurrence')
    if not isinstance(scope, str):
        reader.fail('bias_draw_scope', "must be a string")
        scope = 'occurrence'
    name = doc.get('name', 'lafs')
    if not isinstance(name, str):
        reader.fail('name', "must be a string")
        name = 'lafs'

    emit_candidates = reader.boolean(doc.get('emit_candidates'), 'emit_candidates', False)
    emit_factors = reader.boolean(doc.get('emit_factors'), 'emit_factors', False)
    emit_propensities = reader.boolean(doc.get('emit_propensities'), 'emit_propensities', False)
    bias_clamp = reader.boolean(doc.get('bias_clamp'), 'bias_clamp', True)

    if reader.violations:
        config_logger.error(f"❌ Config has {len(reader.violations)} malformed field(s)")
        raise ConfigValidationError(reader.violations)

    cfg = ExperimentConfig(
        n_items=n_items,
        k_factors=k,
        s_sensitive=s,
        sigma_factor=sigma,
        item_feature_probs=probs,
        regimes=tuple(regimes),
        bias_specs=bias,
        candidate_size=candidate_size,
        list_size=list_size,
        norm_range=norm_range,
        seed=seed,
        emit_candidates=emit_candidates,
        sigma_factor_user=sigma_user,
        sigma_factor_item=sigma_item,
        bias_draw_scope=scope,
        bias_clamp=bias_clamp,
        emit_factors=emit_factors,
        emit_propensities=emit_propensities,
        name=name,
    )
    return validate_config(cfg)


def _collect_violations(cfg: ExperimentConfig) -> List[Tuple[str, str]]:
    violations: List[Tuple[str, str]] = []

    def check(ok: bool, path: str, rule: str):
        if not ok:
            violations.append((path, rule))

    check(_is_int(cfg.n_items) and cfg.n_items >= 1, 'n_items', "n_items ≥ 1")
    check(_is_int(cfg.k_factors) and cfg.k_factors >= 1, 'k_factors', "k_factors ≥ 1")
    check(_is_int(cfg.s_sensitive) and cfg.s_sensitive >= 0, 's_sensitive', "s_sensitive ≥ 0")
    check(cfg.s_sensitive <= cfg.k_factors, 's_sensitive', "s_sensitive ≤ k_factors")

    for path, sigma in (('sigma_factor', cfg.sigma_factor),
                        ('sigma_factor_user', cfg.sigma_factor_user),
                        ('sigma_factor_item', cfg.sigma_factor_item)):
        if sigma is not None:
            check(_is_real(sigma) and sigma >= 0, path, "stddev ≥ 0")

    check(len(cfg.item_feature_probs) == cfg.k_factors, 'item_feature_probs',
          "length(item_feature_probs) = k_factors")
    for j, p in enumerate(cfg.item_feature_probs):
        check(_is_real(p) and 0.0 <= p <= 1.0, f"item_feature_probs[{j}]", "probability in [0,1]")

    check(len(cfg.regimes) >= 1, 'regimes', "at least one regime")
    for r, regime in enumerate(cfg.regimes):
        path = f"regimes[{r}]"
        check(_is_int(regime.user_count) and regime.user_count >= 1,
              f"{path}.user_count", "user_count ≥ 1")
        check(len(regime.user_factor_dists) == cfg.k_factors, f"{path}.user_factor_dists",
              "length(user_factor_dists) = k_factors")
        for j, (mu, sd) in enumerate(regime.user_factor_dists):
            check(_is_real(mu), f"{path}.user_factor_dists[{j}].mean", "finite mean")
            check(_is_real(sd) and sd >= 0, f"{path}.user_factor_dists[{j}].stddev", "stddev ≥ 0")

    check(len(cfg.bias_specs) == cfg.s_sensitive, 'bias_specs', "length(bias_specs) = s_sensitive")
    for j, (mu, sd) in enumerate(cfg.bias_specs):
        check(_is_real(mu), f"bias_specs[{j}].mean", "finite mean")
        check(_is_real(sd) and sd >= 0, f"bias_specs[{j}].stddev", "stddev ≥ 0")

    check(_is_int(cfg.candidate_size) and cfg.candidate_size >= 1, 'candidate_size',
          "candidate_size ≥ 1")
    check(_is_int(cfg.list_size) and cfg.list_size >= 1, 'list_size', "list_size ≥ 1")
    check(cfg.list_size <= cfg.candidate_size, 'list_size', "list_size ≤ candidate_size")
    check(cfg.candidate_size <= cfg.n_items, 'candidate_size', "candidate_size ≤ n_items")

    lo, hi = cfg.norm_range
    check(_is_real(lo) and _is_real(hi), 'norm_range', "finite bounds")
    check(lo < hi, 'norm_range', "lo < hi")

    check(_is_int(cfg.seed) and 0 <= cfg.seed < SEED_LIMIT, 'seed', "seed in [0, 2^64)")
    check(cfg.bias_draw_scope in BIAS_DRAW_SCOPES, 'bias_draw_scope',
          f"one of {', '.join(BIAS_DRAW_SCOPES)}")
    return violations


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """
    Check every configuration invariant

    Args:
        cfg: Configuration to check

    Returns:
        The same configuration object when every invariant holds

    Raises:
        ConfigValidationError: carrying all violations found, first one first
    """
    violations = _collect_violations(cfg)
    if violations:
        for path, rule in violations:
            config_logger.error(f"❌ {path}: {rule}")
        raise ConfigValidationError(violations)
    config_logger.debug(f"✅ Config '{cfg.name}' valid: {cfg.n_items} items, "
                        f"{cfg.n_users_total} users in {cfg.n_regimes} regime(s), k={cfg.k_factors}")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Render a config as a deterministic, fully expanded JSON document"""
    return json.dumps(cfg.to_dict(), indent=2, ensure_ascii=False) + "\n"


def load_config(path: str) -> ExperimentConfig:
    """Read and parse a configuration document from disk"""
    config_logger.info(f"📄 Loading experiment config from {path}")
    with open(path, 'r', encoding='utf-8') as handle:
        text = handle.read()
    cfg = parse_config(text)
    config_logger.info(f"✅ Loaded config '{cfg.name}' (seed={cfg.seed})")
    return cfg


def example_config_document() -> Dict[str, Any]:
    """
    A documented two-regime starting point: users who favour the protected
    feature followed by users who avoid it, with a mild bias penalty.
    """
    k = 10
    return {
        'name': 'regime-shift-example',
        'n_items': 1000,
        'k_factors': k,
        's_sensitive': 1,
        'sigma_factor': 0.1,
        'item_feature_probs': [0.2] + [0.5] * (k - 1),
        'regimes': [
            {'user_count': 200, 'default': [0.5, 0.3], 'overrides': {'0': [1.5, 0.3]}},
            {'user_count': 200, 'default': [0.5, 0.3], 'overrides': {'0': [-1.5, 0.3]}},
        ],
        'bias_specs': [[0.25, 0.1]],
        'candidate_size': 100,
        'list_size': 10,
        'norm_range': [1, 5],
        'seed': 42,
        'emit_candidates': True,
    }


def config_from_dict(doc: Dict[str, Any]) -> ExperimentConfig:
    """Build a config from an in-memory document, with the same rules as parse_config"""
    return parse_config(json.dumps(doc))
