"""학습 모달리티 부분집합 sweep, 체크포인트 저장소, run manifest

작업 단위는 M_T 하나이며 그 안에서 probe → finetune/masd → wiseft 순서로 진행한다.
M_T 작업들은 서로 독립이라 프로세스 풀에서 병렬로 돌릴 수 있고, 각 방법의 RNG 는
(master seed, 방법, M_T) 에서 유도하므로 실행 순서와 무관하게 결과가 같다.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, SweepPlanConfig
from .constants import (
    CHECKPOINT_FILENAME,
    DEFAULT_RUNS_DIR,
    DOWNSTREAM_METHODS,
    MANIFEST_FILENAME,
    METHOD_PREREQUISITES,
    RUNS_DIR_ENV,
)
from .datagen import DatasetBundle
from .errors import CheckpointError, ConfigError, MissingModalityError
from .metrics import evaluate, score_kind
from .modalities import ModalitySet, ModalityUniverse
from .model import check_complete
from .schema import JOB_FAILED, JOB_OK, JOB_PENDING, JOB_SKIPPED, JobRecord, RunManifest, Warning
from .scorematrix import ScoreMatrix, write_score_csv
from .trainer import (
    check_loss_trend,
    derive_seed,
    finetune,
    linear_probe,
    masd_train,
    pretrain,
    wiseft_assemble,
)
from .validator import add_warning, merge_warnings

logger = logging.getLogger(__name__)

TRAINED_METHODS = ("probe", "finetune", "masd")
# 작업 RNG 스트림 키. masd 는 fine-tune 과 같은 배치 순서를 쓴다
SEED_STREAMS = {"probe": "probe", "finetune": "finetune", "masd": "finetune", "wiseft": "wiseft", "wiseft-ft": "wiseft-ft"}


def runs_root(override: Optional[str] = None) -> Path:
    """--runs-dir > MODROBE_RUNS_DIR > runs"""
    return Path(override or os.environ.get(RUNS_DIR_ENV) or DEFAULT_RUNS_DIR)


@dataclass(frozen=True)
class SweepPlan:
    """M, M_T 목록, 방법 목록, M_E 목록"""
    universe: ModalityUniverse
    train_sets: Tuple[ModalitySet, ...]
    methods: Tuple[str, ...]
    eval_sets: Tuple[ModalitySet, ...]

    def __post_init__(self) -> None:
        for what, sets in (("train_sets", self.train_sets), ("eval_sets", self.eval_sets)):
            if not sets:
                raise ConfigError(f"plan.{what}: 최소 1개가 필요합니다")
            for m in sets:
                if m.universe != self.universe:
                    raise ConfigError(f"plan.{what}: {m.label} 가 universe 밖입니다")
                if not m:
                    raise ConfigError(f"plan.{what}: 빈 모달리티 집합은 허용되지 않습니다")
        if not self.methods:
            raise ConfigError("plan.methods: 최소 1개가 필요합니다")
        for method in self.methods:
            if method not in DOWNSTREAM_METHODS:
                raise ConfigError(f"plan.methods: 알 수 없는 방법 {method!r}")

    @classmethod
    def from_config(cls, universe: ModalityUniverse, config: SweepPlanConfig) -> "SweepPlan":
        def parse(labels: Optional[Sequence[str]], field_name: str) -> Tuple[ModalitySet, ...]:
            if labels is None:
                return tuple(universe.subsets())
            try:
                sets = {universe.parse(label) for label in labels}
            except MissingModalityError as exc:
                raise ConfigError(f"plan.{field_name}: {exc}") from exc
            return tuple(sorted(sets, key=ModalitySet.sort_key))

        return cls(
            universe=universe,
            train_sets=parse(config.train_sets, "train_sets"),
            methods=tuple(config.methods),
            eval_sets=parse(config.eval_sets, "eval_sets"),
        )

    def job_methods(self) -> Tuple[str, ...]:
        """요청한 방법과 그 선행 방법 (실행 순서)"""
        needed = set()
        for method in self.methods:
            needed.add(method)
            needed.update(METHOD_PREREQUISITES[method])
        return tuple(method for method in DOWNSTREAM_METHODS if method in needed)


@dataclass(frozen=True)
class CheckpointStore:
    """runs/<run_id>/<method>/<M_T>/model.mmrl"""
    root: Path

    def path(self, method: str, train_set: str) -> Path:
        return self.root / method / train_set / CHECKPOINT_FILENAME

    @property
    def pretrain_path(self) -> Path:
        return self.root / "pretrain" / CHECKPOINT_FILENAME

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_FILENAME

    def scores_path(self, method: str) -> Path:
        return self.root / "scores" / f"{method}.csv"

    def load(self, method: str, train_set: str) -> ModelCheckpoint:
        return load_checkpoint(self.path(method, train_set))


def write_manifest(manifest: RunManifest, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, ensure_ascii=False, indent=2)
    os.replace(tmp, path)


def read_manifest(path: Union[str, Path]) -> RunManifest:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            return RunManifest.from_dict(json.load(f))
    except FileNotFoundError as exc:
        raise ConfigError(f"run manifest 가 없습니다: {path}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"run manifest 파싱 실패: {path}") from exc


def default_run_id(config: ExperimentConfig, bundle_hash: str) -> str:
    payload = json.dumps({"config": config.to_dict(), "bundle": bundle_hash}, sort_keys=True).encode("utf-8")
    return "run-" + hashlib.sha1(payload).hexdigest()[:10]


@dataclass
class TrainSetJob:
    """M_T 하나에 대한 작업 입력 (프로세스 간 전달)"""
    train_set: str
    methods: Tuple[str, ...]
    eval_sets: Tuple[str, ...]
    bundle: DatasetBundle
    backbone: ModelCheckpoint
    config: ExperimentConfig
    store_root: str


@dataclass
class MethodOutcome:
    method: str
    status: str
    seed: int
    checkpoint: Optional[str] = None
    scores: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class TrainSetOutcome:
    train_set: str
    outcomes: List[MethodOutcome] = field(default_factory=list)
    warnings: List[Warning] = field(default_factory=list)


def _train_method(
    method: str,
    job: TrainSetJob,
    train_set: ModalitySet,
    trained: Mapping[str, ModelCheckpoint],
    warnings: List[Warning],
) -> ModelCheckpoint:
    cfg = job.config
    bundle = job.bundle
    if method == "probe":
        return linear_probe(job.backbone, bundle.train, train_set, cfg.phase("probe"))
    if method == "finetune":
        return finetune(job.backbone, trained["probe"], bundle.train, train_set, cfg.phase("finetune"))
    if method == "masd":
        return masd_train(
            job.backbone, trained["probe"], bundle.train, train_set, bundle.self_distill, cfg.phase("masd"), warnings
        )
    alpha = cfg.phase("masd").alpha
    if method == "wiseft":
        return wiseft_assemble(trained["masd"], trained["probe"], alpha, "wiseft")
    if method == "wiseft-ft":
        return wiseft_assemble(trained["finetune"], trained["probe"], alpha, "wiseft-ft")
    raise ConfigError(f"알 수 없는 방법: {method}")


def run_train_set(job: TrainSetJob) -> TrainSetOutcome:
    """한 M_T 에 대해 방법들을 순서대로 학습·저장·평가"""
    universe = job.bundle.universe
    train_set = universe.parse(job.train_set)
    eval_sets = [universe.parse(label) for label in job.eval_sets]
    store = CheckpointStore(Path(job.store_root))
    result = TrainSetOutcome(train_set=job.train_set)
    trained: Dict[str, ModelCheckpoint] = {}
    for method in job.methods:
        seed = derive_seed(job.config.seed, SEED_STREAMS[method], job.train_set)
        name = f"{method}/{job.train_set}"
        blocked = [dep for dep in METHOD_PREREQUISITES[method] if dep not in trained]
        if blocked:
            add_warning(result.warnings, "job_skipped", {"job": name, "blocked_by": ",".join(blocked)})
            result.outcomes.append(MethodOutcome(method, JOB_SKIPPED, seed, error=f"선행 작업 실패: {blocked}"))
            continue
        started = time.perf_counter()
        try:
            checkpoint = _train_method(method, job, train_set, trained, result.warnings)
            if method in TRAINED_METHODS:
                check_loss_trend(checkpoint, result.warnings, name)
            path = save_checkpoint(checkpoint, store.path(method, job.train_set))
            scores = {
                eval_set.label: evaluate(checkpoint, job.bundle.eval, eval_set, job.bundle.task, result.warnings)
                for eval_set in eval_sets
            }
        except Exception as exc:  # noqa: BLE001 - 실패는 기록하고 sweep 계속
            add_warning(result.warnings, "job_failed", {"job": name, "error": f"{type(exc).__name__}: {exc}"})
            result.outcomes.append(MethodOutcome(method, JOB_FAILED, seed, error=f"{type(exc).__name__}: {exc}"))
            logger.exception("작업 실패: %s", name)
            continue
        trained[method] = checkpoint
        result.outcomes.append(MethodOutcome(method, JOB_OK, seed, str(path), scores))
        logger.info("작업 완료: %s (%.1fs)", name, time.perf_counter() - started)
    return result


@dataclass
class SweepResult:
    matrices: Dict[str, ScoreMatrix]
    manifest: RunManifest
    store: CheckpointStore
    warnings: List[Warning]

    @property
    def failed(self) -> bool:
        return any(job.status in (JOB_FAILED, JOB_SKIPPED) for job in self.manifest.jobs.values())


def prepare_run_dir(store: CheckpointStore, force: bool, warnings: List[Warning]) -> None:
    """manifest 가 이미 있으면 --force 없이는 거부"""
    if store.manifest_path.exists():
        if not force:
            raise ConfigError(f"run 디렉터리가 이미 있습니다: {store.root} (--force 로 덮어쓰기)")
        add_warning(warnings, "run_dir_reused", {"run_id": store.root.name})
    store.root.mkdir(parents=True, exist_ok=True)


def obtain_backbone(bundle: DatasetBundle, config: ExperimentConfig, store: CheckpointStore) -> ModelCheckpoint:
    """run 디렉터리의 사전학습 체크포인트를 재사용하거나 새로 학습"""
    path = store.pretrain_path
    if path.exists():
        backbone = load_checkpoint(path)
        if backbone.metadata.get("universe") != list(bundle.universe.names):
            raise CheckpointError(f"사전학습 체크포인트 universe 가 bundle 과 다릅니다: {path}")
        check_complete(backbone, bundle.universe.names)
        logger.info("사전학습 체크포인트 재사용: %s", path)
        return backbone
    backbone = pretrain(bundle, config.phase("pretrain"), config.model)
    save_checkpoint(backbone, path)
    return backbone


def run_sweep(
    plan: SweepPlan,
    bundle: DatasetBundle,
    config: ExperimentConfig,
    store: CheckpointStore,
    backbone: Optional[ModelCheckpoint] = None,
    parallel: Optional[int] = None,
    force: bool = False,
) -> SweepResult:
    """모든 M_T x 방법을 학습하고 모든 M_E 에서 평가해 점수 행렬을 만든다"""
    warnings: List[Warning] = []
    prepare_run_dir(store, force, warnings)
    if plan.universe != bundle.universe:
        raise ConfigError(f"plan universe {plan.universe.names} 와 bundle {bundle.universe.names} 가 다릅니다")
    bundle_hash = bundle.content_hash()
    methods = plan.job_methods()
    manifest = RunManifest(run_id=store.root.name, config=config.to_dict(), bundle_hash=bundle_hash)
    for train_set in plan.train_sets:
        for method in methods:
            seed = derive_seed(config.seed, SEED_STREAMS[method], train_set.label)
            record = JobRecord(method=method, train_set=train_set.label, seed=seed, status=JOB_PENDING)
            manifest.jobs[record.key] = record
    write_manifest(manifest, store.manifest_path)

    if backbone is None:
        backbone = obtain_backbone(bundle, config, store)
    else:
        save_checkpoint(backbone, store.pretrain_path)
    manifest.outputs["pretrain"] = str(store.pretrain_path)
    check_loss_trend(backbone, warnings, "pretrain")

    jobs = [
        TrainSetJob(
            train_set=train_set.label,
            methods=methods,
            eval_sets=tuple(m.label for m in plan.eval_sets),
            bundle=bundle,
            backbone=backbone,
            config=config,
            store_root=str(store.root),
        )
        for train_set in plan.train_sets
    ]
    workers = max(1, parallel if parallel is not None else config.parallel)
    logger.info("sweep 시작: M_T %d개 x 방법 %s (workers=%d)", len(jobs), ",".join(methods), workers)
    if workers == 1 or len(jobs) == 1:
        outcomes = [run_train_set(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_train_set, jobs))

    kind = score_kind(bundle.task)
    matrices = {method: ScoreMatrix(plan.universe, kind) for method in methods}
    for outcome in outcomes:
        train_set = plan.universe.parse(outcome.train_set)
        merge_warnings(warnings, outcome.warnings)
        for result in outcome.outcomes:
            record = manifest.jobs[f"{result.method}/{outcome.train_set}"]
            record.status = result.status
            record.checkpoint = result.checkpoint
            record.error = result.error
            for eval_label, score in result.scores.items():
                matrices[result.method].set(train_set, plan.universe.parse(eval_label), score)

    for method in plan.methods:
        path = write_score_csv(store.scores_path(method), {method: matrices[method]}, with_method=False)
        manifest.outputs[f"scores/{method}"] = str(path)
    manifest.warnings = list(warnings)
    manifest.status = "finished" if all(job.status == JOB_OK for job in manifest.jobs.values()) else "finished-with-failures"
    write_manifest(manifest, store.manifest_path)
    logger.info("sweep 종료: %s (%s)", store.root, manifest.status)
    return SweepResult(
        matrices={method: matrices[method] for method in plan.methods},
        manifest=manifest,
        store=store,
        warnings=warnings,
    )
