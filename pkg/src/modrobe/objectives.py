from __future__ import annotations

import itertools
import math
from typing import Mapping, Optional, Sequence

import numpy as np

from . import numerics as nx
from .config import ContrastiveConfig, MasdConfig
from .constants import TASK_MULTI_LABEL, TASK_SINGLE_LABEL
from .errors import ConfigError, MissingModalityError, ShapeError
from .model import forward_logits
from .modalities import ModalitySet
from .numerics import Tensor

__all__ = [
    "ContrastiveConfig",
    "MasdConfig",
    "infonce_pair",
    "contrastive_total",
    "mae_loss",
    "task_loss",
    "distill_loss",
    "masd_loss",
]


def _identity(size: int, dtype: np.dtype) -> Tensor:
    return Tensor(np.eye(size, dtype=dtype))


def _scaled_similarity(za: Tensor, zb: Tensor, temperature: float, logit_scale: Optional[Tensor]) -> Tensor:
    logits = nx.matmul(za, nx.transpose(zb))
    if logit_scale is not None:
        return nx.scale_by(logits, nx.exp(logit_scale))
    return nx.scale(logits, 1.0 / temperature)


def infonce_pair(
    za: Tensor,
    zb: Tensor,
    temperature: float = ContrastiveConfig.temperature,
    normalize: bool = True,
    logit_scale: Optional[Tensor] = None,
) -> Tensor:
    """대칭 InfoNCE: 행 softmax(Za·Zbᵀ/τ) 의 대각 cross-entropy 를 양방향 평균"""
    if za.ndim != 2 or za.shape != zb.shape:
        raise ShapeError(f"infonce_pair: 같은 (B, d) shape 이 필요합니다 {tuple(za.shape)} vs {tuple(zb.shape)}")
    batch = za.shape[0]
    if batch == 0:
        raise ShapeError("infonce_pair: 빈 배치")
    if temperature <= 0:
        raise ConfigError(f"contrastive.temperature: 양수여야 합니다 (got {temperature})")
    if normalize:
        za, zb = nx.l2_normalize(za), nx.l2_normalize(zb)
    logits = _scaled_similarity(za, zb, temperature, logit_scale)
    eye = _identity(batch, logits.dtype)
    forward = nx.sum(nx.mul(nx.log_softmax(logits), eye))
    backward = nx.sum(nx.mul(nx.log_softmax(nx.transpose(logits)), eye))
    return nx.scale(nx.add(forward, backward), -0.5 / batch)


def contrastive_total(
    embeddings: Sequence[Tensor],
    temperature: float = ContrastiveConfig.temperature,
    normalize: bool = True,
    logit_scale: Optional[Tensor] = None,
) -> Tensor:
    """모든 비순서 모달리티 쌍 n(n-1)/2 개의 infonce_pair 합"""
    embeddings = list(embeddings)
    if len(embeddings) < 2:
        raise ConfigError(f"contrastive_total: 모달리티가 2개 이상 필요합니다 (got {len(embeddings)})")
    total: Optional[Tensor] = None
    for za, zb in itertools.combinations(embeddings, 2):
        term = infonce_pair(za, zb, temperature, normalize, logit_scale)
        total = term if total is None else nx.add(total, term)
    return total


def mae_loss(
    reconstructions: Mapping[str, Tensor],
    targets: Mapping[str, np.ndarray],
    masked_rows: Mapping[str, np.ndarray],
) -> Tensor:
    """가린 행에서만 계산한 MSE (행·차원 평균) 를 모달리티에 대해 합산"""
    total: Optional[Tensor] = None
    for name, recon in reconstructions.items():
        target = np.asarray(targets[name])
        if recon.ndim != 2 or tuple(recon.shape) != target.shape:
            raise ShapeError(f"mae_loss: {name} 복원 {tuple(recon.shape)} 과 목표 {target.shape} shape 불일치")
        rows = np.asarray(masked_rows[name], dtype=np.int64).reshape(-1)
        if rows.size == 0:
            continue
        if rows.min() < 0 or rows.max() >= target.shape[0]:
            raise ShapeError(f"mae_loss: {name} 마스크 인덱스가 범위 [0, {target.shape[0]}) 를 벗어납니다")
        diff = nx.sub(nx.gather_rows(recon, rows), Tensor(target[rows].astype(recon.dtype)))
        term = nx.mean(nx.mul(diff, diff))
        total = term if total is None else nx.add(total, term)
    if total is None:
        raise ConfigError("mae_loss: 모든 모달리티의 마스크가 비어 있어 학습할 것이 없습니다")
    return total


def _one_hot(labels: np.ndarray, num_classes: int, dtype: np.dtype) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"task_loss: single-label 레이블은 1차원이어야 합니다 (got {labels.shape})")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(f"task_loss: 레이블이 범위 [0, {num_classes}) 를 벗어납니다")
    encoded = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    encoded[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1
    return encoded


def task_loss(logits: Tensor, labels: np.ndarray, task: str) -> Tensor:
    """single-label: softmax cross-entropy, multi-label: 클래스별 sigmoid BCE 평균"""
    if logits.ndim != 2:
        raise ShapeError(f"task_loss: (N, C) logits 가 필요합니다 (got {tuple(logits.shape)})")
    n, num_classes = logits.shape
    if n == 0:
        raise ShapeError("task_loss: 빈 배치")
    if task == TASK_SINGLE_LABEL:
        target = Tensor(_one_hot(labels, num_classes, logits.dtype))
        return nx.scale(nx.sum(nx.mul(nx.log_softmax(logits), target)), -1.0 / n)
    if task == TASK_MULTI_LABEL:
        labels = np.asarray(labels)
        if labels.shape != tuple(logits.shape):
            raise ShapeError(f"task_loss: multi-label 레이블 {labels.shape} 과 logits {tuple(logits.shape)} 불일치")
        if not np.isin(labels, (0, 1)).all():
            raise ShapeError("task_loss: multi-label 레이블은 0/1 이어야 합니다")
        return _soft_bce(logits, Tensor(labels.astype(logits.dtype)))
    raise ConfigError(f"task: 알 수 없는 태스크 {task!r}")


def _soft_bce(logits: Tensor, targets: Tensor) -> Tensor:
    """mean( softplus(x) − y·x ) = BCE(sigmoid(x), y)"""
    return nx.mean(nx.sub(nx.softplus(logits), nx.mul(logits, targets)))


def distill_loss(student_logits: Tensor, teacher_logits: Tensor, task: str, temperature: float = 1.0) -> Tensor:
    """teacher 확률 분포에 대한 student 의 cross-entropy (teacher 는 상수 취급)"""
    if tuple(student_logits.shape) != tuple(teacher_logits.shape):
        raise ShapeError(
            f"distill_loss: student {tuple(student_logits.shape)} / teacher {tuple(teacher_logits.shape)} 불일치"
        )
    if temperature != 1.0:
        student_logits = nx.scale(student_logits, 1.0 / temperature)
        teacher_logits = nx.scale(teacher_logits, 1.0 / temperature)
    if task == TASK_SINGLE_LABEL:
        n = student_logits.shape[0]
        probs = nx.softmax(teacher_logits)
        return nx.scale(nx.sum(nx.mul(nx.log_softmax(student_logits), probs)), -1.0 / n)
    if task == TASK_MULTI_LABEL:
        return _soft_bce(student_logits, nx.sigmoid(teacher_logits))
    raise ConfigError(f"task: 알 수 없는 태스크 {task!r}")


def masd_loss(
    p: Mapping[str, Tensor],
    batch_t: Mapping[str, Tensor],
    labels: np.ndarray,
    batch_sd: Mapping[str, Tensor],
    train_set: ModalitySet,
    task: str,
    config: MasdConfig = MasdConfig(),
    teacher_logits: Optional[Tensor] = None,
) -> Tensor:
    """task_loss(f_θ(x|_{M_T})) + λ · distill(student = f_θ(x|_{M∖M_T}), teacher = sg[f_θ(x|_{M_T})])

    M_T = M 이거나 λ = 0 이면 task_loss 만 반환한다.
    teacher_logits 를 주면 teacher 경로 대신 그 값을 상수로 쓴다.
    """
    train_set.require_nonempty("masd M_T")
    loss = task_loss(forward_logits(p, batch_t, train_set), labels, task)
    complement = train_set.universe.full() - train_set
    if config.weight == 0 or not complement:
        return loss
    missing = [name for name in train_set.universe.names if name not in batch_sd]
    if missing:
        raise MissingModalityError(f"masd_loss: D_SD 배치에 모달리티 {missing} 가 없습니다")
    if teacher_logits is None:
        teacher_logits = nx.stop_gradient(forward_logits(p, batch_sd, train_set))
    student_logits = forward_logits(p, batch_sd, complement)
    distill = distill_loss(student_logits, teacher_logits, task, config.temperature)
    return nx.add(loss, nx.scale(distill, config.weight))


def initial_logit_scale(temperature: float) -> float:
    """학습 가능한 온도의 초기값 log(1/τ)"""
    return math.log(1.0 / temperature)
