#!/usr/bin/env python3
"""
Tests for writing and reading output bundles
"""

import sys
import os
import json
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.bundle import (FLOAT_FORMAT, ITEM_FACTORS_FILE, ITEMS_FILE, MANIFEST_FILE, METRICS_FILE,
                        RECOMMENDATIONS_FILE, RECOMMENDATION_COLUMNS, USER_FACTORS_FILE, numpy_version_matches,
                        read_bundle, read_manifest, write_bundle)
from src.config import config_from_dict
from src.errors import BundleError
from src.metrics import compute_report
from src.pipeline import run_pipeline


def small_config(**extra):
    doc = {
        'name': 'bundle-test',
        'n_items': 20,
        'k_factors': 3,
        's_sensitive': 1,
        'item_feature_probs': [0.4, 0.5, 0.5],
        'regimes': [{'user_count': 1, 'default': [0.5, 0.3]},
                    {'user_count': 1, 'default': [-0.5, 0.3]}],
        'bias_specs': [[0.2, 0.1]],
        'candidate_size': 5,
        'list_size': 3,
        'seed': 7,
    }
    doc.update(extra)
    return config_from_dict(doc)


def data_lines(path):
    return Path(path).read_text(encoding='utf-8').splitlines()[1:]


def expect_bundle_error(directory, **kwargs):
    try:
        read_bundle(directory, **kwargs)
    except BundleError as e:
        return e
    raise AssertionError("expected a bundle error")


def test_top_lists_give_one_row_per_slot():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        lines = Path(tmp, RECOMMENDATIONS_FILE).read_text(encoding='utf-8').splitlines()
        assert lines[0] == ",".join(RECOMMENDATION_COLUMNS)
        assert len(lines) == 7
        assert all(line.split(',')[7] == '1' for line in lines[1:])


def test_candidate_pools_are_written_with_top_flags():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(emit_candidates=True), workers=1), tmp)
        rows = data_lines(Path(tmp, RECOMMENDATIONS_FILE))
        assert len(rows) == 10
        assert sum(int(row.split(',')[7]) for row in rows) == 6
        assert read_manifest(tmp)['has_candidates'] is True


def test_same_config_gives_identical_bytes():
    cfg = small_config(emit_candidates=True, emit_factors=True, emit_propensities=True)
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        write_bundle(run_pipeline(cfg, workers=1), a)
        write_bundle(run_pipeline(cfg, workers=1), b)
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        for name in names:
            assert Path(a, name).read_bytes() == Path(b, name).read_bytes(), name


def test_worker_count_does_not_change_bytes():
    cfg = small_config(n_items=200, candidate_size=50, list_size=10, emit_candidates=True,
                       regimes=[{'user_count': 30, 'default': [0.5, 0.3]},
                                {'user_count': 25, 'default': [-0.5, 0.3]}])
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        write_bundle(run_pipeline(cfg, workers=1), a)
        write_bundle(run_pipeline(cfg, workers=4), b)
        for name in os.listdir(a):
            assert Path(a, name).read_bytes() == Path(b, name).read_bytes(), name


def test_manifest_describes_every_file():
    with tempfile.TemporaryDirectory() as tmp:
        bundle = write_bundle(run_pipeline(small_config(emit_factors=True), workers=1), tmp)
        manifest = json.loads(Path(tmp, MANIFEST_FILE).read_text(encoding='utf-8'))
        assert manifest == bundle.manifest
        assert manifest['seed'] == 7
        assert manifest['name'] == 'bundle-test'
        assert manifest['float_format'] == '%.17g'
        assert set(manifest['files']) == {RECOMMENDATIONS_FILE, ITEMS_FILE, 'users.csv', METRICS_FILE,
                                          USER_FACTORS_FILE, ITEM_FACTORS_FILE}
        assert manifest['files'][RECOMMENDATIONS_FILE]['rows'] == 6


def test_round_trip_preserves_lists_and_report():
    cfg = small_config(emit_candidates=True, emit_factors=True, emit_propensities=True)
    result = run_pipeline(cfg, workers=1)
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(result, tmp)
        loaded = read_bundle(tmp)
    assert loaded.config == cfg
    assert loaded.lists == result.lists
    assert np.array_equal(loaded.item_flags, result.item_flags)
    assert np.array_equal(loaded.regime_of_user, result.regime_of_user)
    assert loaded.item_propensities == result.item_propensities
    assert loaded.user_propensities == result.user_propensities
    assert loaded.factors == result.factors
    assert loaded.report == result.report
    assert compute_report(loaded.lists, loaded.item_flags, loaded.config) == result.report


def test_truncated_row_names_its_line():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        path = Path(tmp, RECOMMENDATIONS_FILE)
        lines = path.read_text(encoding='utf-8').splitlines()
        lines[-1] = ",".join(lines[-1].split(',')[:5])
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        error = expect_bundle_error(tmp)
        assert error.line == len(lines)
        assert f"line {len(lines)}" in str(error)


def test_non_numeric_score_names_its_line():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        path = Path(tmp, RECOMMENDATIONS_FILE)
        lines = path.read_text(encoding='utf-8').splitlines()
        fields = lines[2].split(',')
        fields[4] = 'abc'
        lines[2] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        assert expect_bundle_error(tmp).line == 3


def test_seed_mismatch_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        assert read_bundle(tmp, expect_seed=7).config.seed == 7
        assert "seed" in str(expect_bundle_error(tmp, expect_seed=8))


def test_missing_file_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        os.remove(Path(tmp, ITEMS_FILE))
        error = expect_bundle_error(tmp)
        assert error.path.endswith(ITEMS_FILE)


def test_missing_manifest_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        expect_bundle_error(tmp)


def test_tampered_file_fails_checksum():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        path = Path(tmp, METRICS_FILE)
        metrics = json.loads(path.read_text(encoding='utf-8'))
        metrics['n_lists'] = 99
        path.write_text(json.dumps(metrics, indent=2) + "\n", encoding='utf-8')
        assert "checksum" in str(expect_bundle_error(tmp))


def test_score_outside_range_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        path = Path(tmp, RECOMMENDATIONS_FILE)
        lines = path.read_text(encoding='utf-8').splitlines()
        fields = lines[1].split(',')
        fields[6] = '9.5'
        lines[1] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        assert expect_bundle_error(tmp).line == 2


def test_rewriting_a_directory_drops_earlier_factor_files():
    first = run_pipeline(small_config(seed=1, emit_factors=True), workers=1)
    second = run_pipeline(small_config(seed=2), workers=1)
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(first, tmp)
        assert Path(tmp, USER_FACTORS_FILE).exists()
        write_bundle(second, tmp)
        assert not Path(tmp, USER_FACTORS_FILE).exists()
        assert not Path(tmp, ITEM_FACTORS_FILE).exists()
        loaded = read_bundle(tmp)
    assert loaded.config.seed == 2
    assert loaded.factors is None
    assert loaded.lists == second.lists


def test_unlisted_factor_file_rejected():
    donor = run_pipeline(small_config(emit_factors=True), workers=1)
    with tempfile.TemporaryDirectory() as with_factors, tempfile.TemporaryDirectory() as tmp:
        write_bundle(donor, with_factors)
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        for name in (USER_FACTORS_FILE, ITEM_FACTORS_FILE):
            Path(tmp, name).write_bytes(Path(with_factors, name).read_bytes())
        error = expect_bundle_error(tmp)
        assert "not listed in the manifest" in str(error)
        assert error.path.endswith(USER_FACTORS_FILE)


def test_unlisted_metrics_file_rejected():
    result = run_pipeline(small_config(), workers=1)
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(result, tmp)
        manifest = read_manifest(tmp)
        del manifest['files'][METRICS_FILE]
        Path(tmp, MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding='utf-8')
        assert "not listed in the manifest" in str(expect_bundle_error(tmp))


def test_manifest_row_count_mismatch_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        manifest = read_manifest(tmp)
        manifest['files']['users.csv']['rows'] = 5
        Path(tmp, MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding='utf-8')
        error = expect_bundle_error(tmp)
        assert "users.csv has 2 rows, expected 5" in str(error)


def test_float_rendering_ignores_the_environment():
    result = run_pipeline(small_config(emit_factors=True), workers=1)
    previous = os.environ.get('LAFS_FLOAT_FORMAT')
    with tempfile.TemporaryDirectory() as plain, tempfile.TemporaryDirectory() as lossy:
        write_bundle(result, plain)
        os.environ['LAFS_FLOAT_FORMAT'] = '%.6g'
        try:
            write_bundle(result, lossy)
        finally:
            if previous is None:
                del os.environ['LAFS_FLOAT_FORMAT']
            else:
                os.environ['LAFS_FLOAT_FORMAT'] = previous
        for name in os.listdir(plain):
            assert Path(plain, name).read_bytes() == Path(lossy, name).read_bytes(), name
        assert read_manifest(lossy)['float_format'] == FLOAT_FORMAT
        assert compute_report(read_bundle(lossy).lists, result.item_flags, result.config) == result.report


def test_manifest_records_numpy_version():
    with tempfile.TemporaryDirectory() as tmp:
        write_bundle(run_pipeline(small_config(), workers=1), tmp)
        manifest = read_manifest(tmp)
    assert manifest['numpy_version'] == np.__version__
    assert numpy_version_matches(manifest)
    manifest['numpy_version'] = '0.0.0'
    assert not numpy_version_matches(manifest)


if __name__ == "__main__":
    print("Bundle Tests")
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
