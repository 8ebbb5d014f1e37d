from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import save_checkpoint
from .config import ExperimentConfig, load_experiment_config
from .datagen import (
    DatasetBundle,
    bundle_hash,
    export_features,
    generate,
    ingest_features,
    load_bundle,
    save_bundle,
)
from .errors import ConfigError, IngestionError, MetricsError, ModrobeError
from .pipeline import CheckpointStore, SweepPlan, default_run_id, read_manifest, run_sweep, runs_root
from .report import parse_sections, write_report
from .robustness import build_report
from .scorematrix import read_score_csv
from .trainer import check_loss_trend, pretrain

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON 설정 파일 경로")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="설정 덮어쓰기 (반복 가능)")


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bundle", help="데이터 bundle 디렉터리 (없으면 설정으로 생성)")
    parser.add_argument("--run-id", help="run 식별자 (기본: 설정+데이터 해시)")
    parser.add_argument("--runs-dir", help="출력 루트 (기본: $MODROBE_RUNS_DIR 또는 runs)")
    parser.add_argument("--force", action="store_true", help="기존 run 결과 덮어쓰기")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modrobe", description="멀티모달 모달리티 견고성 실험 도구")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="합성 데이터 bundle 생성 또는 feature 파일 적재")
    _add_config_args(gen)
    gen.add_argument("--out", required=True, help="bundle 출력 디렉터리")
    gen.add_argument("--features", help="외부 feature 파일/디렉터리 (지정하면 생성 대신 적재)")
    gen.add_argument("--manifest", help="feature manifest.json (--features 와 함께)")
    gen.add_argument("--export", help="pooled feature 파일 내보내기 디렉터리")
    gen.add_argument("--format", dest="fmt", default="csv", choices=["csv", "binary"], help="--export 형식")

    pre = sub.add_parser("pretrain", help="전체 모달리티로 사전학습")
    _add_config_args(pre)
    _add_run_args(pre)

    sweep = sub.add_parser("sweep", help="모든 M_T x 방법 학습 후 모든 M_E 평가")
    _add_config_args(sweep)
    _add_run_args(sweep)
    sweep.add_argument("--methods", help="쉼표로 구분한 방법 (probe,finetune,masd,wiseft,wiseft-ft)")
    sweep.add_argument("--parallel", type=int, help="작업자 프로세스 수")
    sweep.add_argument("--strict", action="store_true", help="실패한 작업이 있으면 exit 1")

    metrics = sub.add_parser("metrics", help="점수 행렬 CSV 로 P/R 보고서 작성")
    metrics.add_argument("matrix", nargs="+", help="점수 행렬 CSV 경로")
    metrics.add_argument("--strata", help="보고서 섹션: summary,overlap,matched,best-eval,points 또는 all")
    metrics.add_argument("--percent", action="store_true", help="백분율(소수 1자리)로 표시")
    metrics.add_argument("--kind", choices=["map", "accuracy"], help="점수 종류 (CSV 지시문보다 우선)")
    metrics.add_argument("--out", help="보고서 경로 prefix (기본: 첫 CSV 옆 <stem>.report)")

    report = sub.add_parser("report", help="끝난 run 의 모든 점수 행렬로 보고서 작성")
    report.add_argument("--run-id", required=True)
    report.add_argument("--runs-dir")
    report.add_argument("--strata", default="all")
    report.add_argument("--percent", action="store_true")
    return parser


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _resolve_bundle(args: argparse.Namespace, config: ExperimentConfig) -> DatasetBundle:
    path = args.bundle or config.bundle
    if path:
        return load_bundle(path)
    logger.info("bundle 경로가 없어 설정으로 데이터 생성")
    return generate(config.data, config.data.seed)


def _store(args: argparse.Namespace, config: ExperimentConfig, bundle: DatasetBundle) -> CheckpointStore:
    run_id = args.run_id or config.run_id or default_run_id(config, bundle_hash(bundle))
    return CheckpointStore(runs_root(args.runs_dir) / run_id)


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, args.overrides)
    if args.features:
        if not args.manifest:
            raise ConfigError("--features 에는 --manifest 가 필요합니다")
        bundle = ingest_features(args.features, args.manifest)
    else:
        bundle = generate(config.data, config.data.seed)
    digest = save_bundle(bundle, args.out)
    print(f"{args.out} {digest}")
    if args.export:
        print(export_features(bundle, args.export, args.fmt))
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, args.overrides)
    bundle = _resolve_bundle(args, config)
    store = _store(args, config, bundle)
    if store.pretrain_path.exists() and not args.force:
        raise ConfigError(f"사전학습 체크포인트가 이미 있습니다: {store.pretrain_path} (--force 로 덮어쓰기)")
    backbone = pretrain(bundle, config.phase("pretrain"), config.model)
    check_loss_trend(backbone, [], "pretrain")
    print(save_checkpoint(backbone, store.pretrain_path))
    return EXIT_OK


def _with_methods(config: ExperimentConfig, methods: Optional[str]) -> ExperimentConfig:
    if not methods:
        return config
    chosen = tuple(part.strip() for part in methods.split(",") if part.strip())
    return replace(config, plan=replace(config.plan, methods=chosen))


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _with_methods(load_experiment_config(args.config, args.overrides), args.methods)
    if args.parallel is not None:
        if args.parallel < 1:
            raise ConfigError("--parallel: 1 이상이어야 합니다")
        config = replace(config, parallel=args.parallel)
    bundle = _resolve_bundle(args, config)
    plan = SweepPlan.from_config(bundle.universe, config.plan)
    store = _store(args, config, bundle)
    result = run_sweep(plan, bundle, config, store, force=args.force)
    for method in plan.methods:
        print(store.scores_path(method))
    if result.failed:
        failed = sorted(key for key, job in result.manifest.jobs.items() if job.status != "ok")
        logger.warning("실패/건너뜀 작업 %d개: %s", len(failed), ", ".join(failed))
        if args.strict:
            return EXIT_RUNTIME
    return EXIT_OK


def _report_prefix(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    first = Path(args.matrix[0])
    return first.with_name(first.stem + ".report")


def cmd_metrics(args: argparse.Namespace) -> int:
    sections = parse_sections(args.strata)
    reports = []
    for path in args.matrix:
        for method, matrix in read_score_csv(path, kind=args.kind).items():
            reports.append(build_report(matrix, method))
    md_path, csv_path = write_report(reports, _report_prefix(args), sections, args.percent)
    print(md_path.read_text(encoding="utf-8"))
    logger.info("보고서: %s, %s", md_path, csv_path)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    sections = parse_sections(args.strata)
    root = runs_root(args.runs_dir) / args.run_id
    store = CheckpointStore(root)
    manifest = read_manifest(store.manifest_path)
    reports = []
    for key, path in sorted(manifest.outputs.items()):
        if not key.startswith("scores/"):
            continue
        for method, matrix in read_score_csv(path).items():
            reports.append(build_report(matrix, method))
    if not reports:
        raise MetricsError(f"run 에 점수 행렬이 없습니다: {root}")
    md_path, csv_path = write_report(reports, root / "report", sections, args.percent)
    print(md_path)
    print(csv_path)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "sweep": cmd_sweep,
    "metrics": cmd_metrics,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MetricsError, IngestionError) as exc:
        print(f"modrobe {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModrobeError as exc:
        print(f"modrobe {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
