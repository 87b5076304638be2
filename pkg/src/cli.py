import sys
import json
import logging
import argparse
from pathlib import Path
from typing import List, Optional

from src import __version__
from src.bundle import METRICS_FILE, read_bundle, write_bundle
from src.config import example_config_document, get_runtime_config, load_config
from src.errors import BundleError, LafsError
from src.metrics import compute_report, format_report_table, rerank_all
from src.models import GenerationResult
from src.pipeline import run_pipeline
from src.regimes_experiment import format_regime_table, regime_shift_from_result

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'

cli_logger = logging.getLogger('lafs.cli')


def configure_logging(level: Optional[str] = None):
    """Log to stderr (stdout carries reports), plus LAFS_LOG_FILE when set"""
    runtime = get_runtime_config()
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if runtime.LOG_FILE:
        handlers.append(logging.FileHandler(runtime.LOG_FILE, mode='a'))
    logging.basicConfig(
        level=getattr(logging, (level or runtime.LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    result = run_pipeline(cfg, workers=args.workers)
    bundle = write_bundle(result, args.out)
    print(f"Bundle written to {bundle.directory} "
          f"({len(result.lists)} lists, seed {cfg.seed})")
    return 0


def cmd_metrics(args) -> int:
    bundle = read_bundle(args.input, expect_seed=args.expect_seed)
    report = compute_report(bundle.lists, bundle.item_flags, bundle.config)
    if bundle.report is not None and bundle.report != report:
        raise BundleError("recomputed metrics differ from the report stored in the bundle",
                          path=str(Path(args.input) / METRICS_FILE))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(format_report_table(report), end='')
    return 0


def cmd_rerank(args) -> int:
    bundle = read_bundle(args.input, expect_seed=args.expect_seed)
    cfg = bundle.config
    if not bundle.has_candidates:
        raise BundleError("rerank needs a bundle generated with emit_candidates=true",
                          path=str(args.input))
    if not 0 <= args.feature < cfg.s_sensitive:
        raise LafsError(f"--feature must lie in [0, {cfg.s_sensitive}), got {args.feature}")

    reranked = rerank_all(bundle.lists, args.lam, args.feature)
    result = GenerationResult(
        config=cfg,
        item_flags=bundle.item_flags,
        regime_of_user=bundle.regime_of_user,
        lists=reranked,
        item_propensities=bundle.item_propensities,
        user_propensities=bundle.user_propensities,
        factors=bundle.factors,
        report=compute_report(reranked, bundle.item_flags, cfg),
        rerank={'lambda': args.lam, 'feature': args.feature},
    )
    out = write_bundle(result, args.out)
    print(f"Re-ranked bundle written to {out.directory} (lambda={args.lam}, feature={args.feature})")
    return 0


def cmd_regime_report(args) -> int:
    bundle = read_bundle(args.input, expect_seed=args.expect_seed)
    shift = regime_shift_from_result(bundle)
    if args.json:
        print(json.dumps(shift.to_dict(), indent=2))
    else:
        print(format_regime_table(shift), end='')
    return 0


def cmd_init_config(args) -> int:
    path = Path(args.out)
    if path.exists() and not args.force:
        raise LafsError(f"{path} already exists (use --force to overwrite)")
    path.write_text(json.dumps(example_config_document(), indent=2) + "\n", encoding='utf-8')
    print(f"Example config written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    version = f"%(prog)s {__version__}"
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--version', action='version', version=version)
    common.add_argument('--log-level', default=argparse.SUPPRESS,
                        help="DEBUG, INFO, WARNING or ERROR (default: LAFS_LOG_LEVEL or INFO)")

    parser = argparse.ArgumentParser(
        prog='lafs',
        description="Latent factor simulation of recommender outputs for fairness-aware re-ranking",
        parents=[common],
    )
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    generate = sub.add_parser('generate', parents=[common], help="generate a bundle from a config")
    generate.add_argument('--config', required=True, help="JSON experiment config")
    generate.add_argument('--out', required=True, help="output bundle directory")
    generate.add_argument('--workers', type=int, default=None,
                          help="worker threads (default: LAFS_WORKERS or 1); output is identical")
    generate.set_defaults(handler=cmd_generate)

    metrics = sub.add_parser('metrics', parents=[common], help="report fairness metrics of a bundle")
    metrics.add_argument('--in', dest='input', required=True, help="bundle directory")
    metrics.add_argument('--json', action='store_true', help="print the report as JSON")
    metrics.add_argument('--expect-seed', type=int, default=None, help="fail unless the bundle seed matches")
    metrics.set_defaults(handler=cmd_metrics)

    rerank = sub.add_parser('rerank', parents=[common], help="greedy fairness-aware re-ranking of a bundle")
    rerank.add_argument('--in', dest='input', required=True, help="bundle generated with emit_candidates")
    rerank.add_argument('--lambda', dest='lam', type=float, required=True, help="protected-item bonus (≥ 0)")
    rerank.add_argument('--feature', type=int, required=True, help="sensitive feature index")
    rerank.add_argument('--out', required=True, help="output bundle directory")
    rerank.add_argument('--expect-seed', type=int, default=None, help="fail unless the bundle seed matches")
    rerank.set_defaults(handler=cmd_rerank)

    regime = sub.add_parser('regime-report', parents=[common], help="protected exposure per user regime")
    regime.add_argument('--in', dest='input', required=True, help="bundle directory")
    regime.add_argument('--json', action='store_true', help="print the result as JSON")
    regime.add_argument('--expect-seed', type=int, default=None, help="fail unless the bundle seed matches")
    regime.set_defaults(handler=cmd_regime_report)

    init = sub.add_parser('init-config', parents=[common], help="write an example two-regime config")
    init.add_argument('--out', required=True, help="path of the config to write")
    init.add_argument('--force', action='store_true', help="overwrite an existing file")
    init.set_defaults(handler=cmd_init_config)
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    Run one CLI command

    Returns:
        0 on success, 1 on validation / data / I/O errors, 2 on usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    configure_logging(getattr(args, 'log_level', None))
    cli_logger.debug(f"Command: {args.command}")
    try:
        return args.handler(args)
    except (LafsError, ValueError) as e:
        cli_logger.error(f"❌ {e}")
        print(f"lafs {args.command}: error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        where = e.filename or ''
        cli_logger.error(f"❌ I/O error {where}: {e.strerror or e}")
        print(f"lafs {args.command}: I/O error: {where}: {e.strerror or e}", file=sys.stderr)
        return 1


def main():
    """Console entry point"""
    sys.exit(cli_main())


if __name__ == '__main__':
    main()
