from __future__ import annotations

import logging
import re
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence, Tuple

from .constants import SCORE_KINDS, TASK_KINDS, WARNING_CODE_MAP
from .errors import ConfigError
from .schema import Warning, WarningSeverity

if TYPE_CHECKING:
    from .config import ExperimentConfig, GenConfig, ModelConfig, TrainConfig

logger = logging.getLogger(__name__)


def _warning_key(warning: Warning) -> Tuple[str, Optional[Tuple[Tuple[str, Any], ...]]]:
    """경고 중복 제거를 위한 키 생성"""
    if warning.context is None:
        return (warning.code, None)
    return (warning.code, tuple(sorted((k, repr(v)) for k, v in warning.context.items())))


def _default_warning_info(code: str, context: Dict[str, Any]) -> Tuple[WarningSeverity, str]:
    """경고 코드에 대한 기본 심각도/메시지 제공"""
    if code == "job_failed":
        job = context.get("job", "unknown")
        return WarningSeverity.ERROR, f"작업 실패: {job} ({context.get('error', '')})"
    if code == "job_skipped":
        job = context.get("job", "unknown")
        return WarningSeverity.WARN, f"선행 작업 실패로 건너뜀: {job}"
    if code == "loss_not_decreasing":
        return WarningSeverity.WARN, f"학습 손실이 감소하지 않음: {context.get('job', '')}"
    if code == "masd_degenerate":
        return WarningSeverity.INFO, "M_T = M 또는 λ = 0: self-distillation 항 생략 (fine-tune 과 동일)"
    if code == "matrix_incomplete":
        return WarningSeverity.WARN, f"점수 행렬에 빈 셀 존재: {context.get('missing', '')}"
    if code == "empty_stratum":
        return WarningSeverity.INFO, f"stratum 이 비어 있어 값 없음: {context.get('stratum', '')}"
    if code == "classes_without_positives":
        count = context.get("count")
        return WarningSeverity.INFO, f"양성 예제가 없는 클래스 {count}개를 mAP 에서 제외"
    if code == "run_dir_reused":
        return WarningSeverity.WARN, f"--force 로 기존 run 디렉터리 재사용: {context.get('run_id', '')}"
    return WarningSeverity.WARN, code


def _standardize_warning_code(code: str) -> str:
    """경고 코드를 STAGE-CATEGORY-NNN 형태로 변환"""
    if re.match(r"^[A-Z]{3}-[A-Z]{3,4}-\d{3}$", code):
        return code
    return WARNING_CODE_MAP.get(code, code)


def add_warning(
    warnings: List[Warning],
    code: str,
    context: Optional[Dict[str, Any]] = None,
    severity: Optional[WarningSeverity] = None,
    message: Optional[str] = None,
) -> None:
    """경고를 생성하고 중복을 제거하여 추가"""
    context = context or {}
    if severity is None or message is None:
        default_severity, default_message = _default_warning_info(code, context)
        severity = severity or default_severity
        message = message or default_message
    standardized = _standardize_warning_code(code)
    if standardized != code:
        context = dict(context)
        context.setdefault("legacy_code", code)
    warning = Warning(code=standardized, severity=severity, message=message, context=context or None)
    candidate_key = _warning_key(warning)
    if all(_warning_key(existing) != candidate_key for existing in warnings):
        warnings.append(warning)
        level = logging.ERROR if severity is WarningSeverity.ERROR else logging.WARNING
        if severity is WarningSeverity.INFO:
            level = logging.INFO
        logger.log(level, "[%s] %s", standardized, message)


def merge_warnings(warnings: List[Warning], incoming: Iterable[Warning]) -> None:
    """이미 기록된 경고를 로그 없이 합친다 (작업자 프로세스 결과 병합용)"""
    keys = {_warning_key(existing) for existing in warnings}
    for warning in incoming:
        key = _warning_key(warning)
        if key not in keys:
            keys.add(key)
            warnings.append(warning)


def has_warning(warnings: Iterable[Warning], code: str) -> bool:
    """특정 코드의 경고 존재 여부 판단"""
    standardized = _standardize_warning_code(code)
    for warning in warnings:
        if warning.code == standardized:
            return True
        if warning.context and warning.context.get("legacy_code") == code:
            return True
    return False


def _require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{field}: {message}")


def _require_per_modality(values: Sequence[Any], count: int, field: str) -> None:
    _require(len(values) == count, field, f"모달리티 수({count})와 길이({len(values)})가 다릅니다")


def validate_gen_config(config: "GenConfig", prefix: str = "data") -> None:
    """데이터 생성 설정 검증"""
    n = len(config.modalities)
    _require(n >= 1, f"{prefix}.modalities", "최소 1개 이상 필요합니다")
    _require(config.latent_dim > 0, f"{prefix}.latent_dim", "양수여야 합니다")
    _require(config.num_classes > 0, f"{prefix}.num_classes", "양수여야 합니다")
    _require(config.task in TASK_KINDS, f"{prefix}.task", f"{TASK_KINDS} 중 하나여야 합니다")
    _require_per_modality(config.token_counts, n, f"{prefix}.token_counts")
    _require_per_modality(config.token_dims, n, f"{prefix}.token_dims")
    _require_per_modality(config.noise, n, f"{prefix}.noise")
    for i, count in enumerate(config.token_counts):
        _require(count > 0, f"{prefix}.token_counts[{i}]", "양수여야 합니다")
    for i, dim in enumerate(config.token_dims):
        _require(dim > 0, f"{prefix}.token_dims[{i}]", "양수여야 합니다")
    for i, sigma in enumerate(config.noise):
        _require(sigma >= 0, f"{prefix}.noise[{i}]", "0 이상이어야 합니다")
    for name in ("pretrain_size", "train_size", "eval_size", "self_distill_size"):
        _require(getattr(config, name) >= 0, f"{prefix}.{name}", "0 이상이어야 합니다")
    _require(config.train_size > 0, f"{prefix}.train_size", "양수여야 합니다")
    _require(config.eval_size > 0, f"{prefix}.eval_size", "양수여야 합니다")
    _require(
        config.self_distill_size <= config.pretrain_size,
        f"{prefix}.self_distill_size",
        f"pretrain_size({config.pretrain_size})를 초과할 수 없습니다",
    )


def validate_model_config(config: "ModelConfig", prefix: str = "model") -> None:
    for name in ("hidden", "embed_dim", "decoder_hidden"):
        _require(getattr(config, name) > 0, f"{prefix}.{name}", "양수여야 합니다")


def validate_train_config(config: "TrainConfig", prefix: str) -> None:
    """학습 설정 검증"""
    _require(config.epochs >= 0, f"{prefix}.epochs", "0 이상이어야 합니다")
    _require(config.batch_size > 0, f"{prefix}.batch_size", "양수여야 합니다")
    _require(config.warmup_steps >= 0, f"{prefix}.warmup_steps", "0 이상이어야 합니다")
    _require(0.0 <= config.alpha <= 1.0, f"{prefix}.alpha", "[0, 1] 범위여야 합니다")
    _require(config.precision in ("float32", "float64"), f"{prefix}.precision", "float32|float64")
    opt = config.optimizer
    _require(opt.lr >= 0, f"{prefix}.optimizer.lr", "0 이상이어야 합니다")
    _require(len(opt.betas) == 2 and all(0 <= b < 1 for b in opt.betas), f"{prefix}.optimizer.betas", "[0, 1) 범위 2개")
    _require(opt.eps > 0, f"{prefix}.optimizer.eps", "양수여야 합니다")
    _require(opt.weight_decay >= 0, f"{prefix}.optimizer.weight_decay", "0 이상이어야 합니다")
    for i, ratio in enumerate(config.mask_ratios):
        _require(0.0 <= ratio < 1.0, f"{prefix}.mask_ratios[{i}]", "[0, 1) 범위여야 합니다")
    _require(config.masd.weight >= 0, f"{prefix}.masd.weight", "0 이상이어야 합니다")
    _require(config.masd.temperature > 0, f"{prefix}.masd.temperature", "양수여야 합니다")
    _require(config.masd.sd_batches_per_step >= 1, f"{prefix}.masd.sd_batches_per_step", "1 이상이어야 합니다")
    _require(config.contrastive.temperature > 0, f"{prefix}.contrastive.temperature", "양수여야 합니다")


def validate_experiment_config(config: "ExperimentConfig") -> None:
    validate_gen_config(config.data)
    validate_model_config(config.model)
    validate_train_config(config.pretrain, "pretrain")
    validate_train_config(config.probe, "probe")
    validate_train_config(config.finetune, "finetune")
    _require(config.pretrain.method in ("contrastive", "mae"), "pretrain.method", "contrastive|mae")
    if config.pretrain.method == "mae":
        _require_per_modality(config.pretrain.mask_ratios, len(config.data.modalities), "pretrain.mask_ratios")
    _require(config.parallel >= 1, "parallel", "1 이상이어야 합니다")


def validate_score_kind(kind: str) -> str:
    if kind not in SCORE_KINDS:
        raise ConfigError(f"score kind: {SCORE_KINDS} 중 하나여야 합니다 (got {kind!r})")
    return kind
