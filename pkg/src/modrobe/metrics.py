from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from .checkpoint import ModelCheckpoint
from .constants import SCORE_ACCURACY, SCORE_MAP, TASK_MULTI_LABEL, TASK_SINGLE_LABEL
from .datagen import Split
from .errors import ConfigError, MetricsError, ShapeError
from .model import downstream_params, predict_logits
from .modalities import ModalitySet
from .schema import Warning
from .validator import add_warning

logger = logging.getLogger(__name__)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """한 클래스의 AP: 양성 순위에서의 precision@k 평균 (점수 내림차순, 동점은 원래 순서)"""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    relevant = np.asarray(labels)[order] > 0
    if not relevant.any():
        raise MetricsError("average_precision: 양성 예제가 없습니다")
    hits = np.cumsum(relevant)
    ranks = np.flatnonzero(relevant) + 1
    return float(np.mean(hits[relevant] / ranks))


def mean_average_precision(
    scores: np.ndarray,
    labels: np.ndarray,
    warnings: Optional[List[Warning]] = None,
) -> float:
    """양성이 1개 이상인 클래스들의 AP 평균"""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ShapeError(f"mean_average_precision: scores {scores.shape} 와 labels {labels.shape} 가 같은 (N, C) 여야 합니다")
    positives = (labels > 0).sum(axis=0)
    classes = np.flatnonzero(positives)
    if classes.size == 0:
        raise MetricsError("mean_average_precision: 양성 예제가 있는 클래스가 없습니다")
    excluded = labels.shape[1] - classes.size
    if excluded and warnings is not None:
        add_warning(warnings, "classes_without_positives", {"count": int(excluded)})
    return float(np.mean([average_precision(scores[:, c], labels[:, c]) for c in classes]))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """top-1 정확도 (동점이면 앞 클래스)"""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"accuracy: logits {logits.shape} / labels {labels.shape} 불일치")
    if logits.shape[0] == 0:
        raise MetricsError("accuracy: 빈 평가 데이터")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def score_kind(task: str) -> str:
    if task == TASK_MULTI_LABEL:
        return SCORE_MAP
    if task == TASK_SINGLE_LABEL:
        return SCORE_ACCURACY
    raise ConfigError(f"task: 알 수 없는 태스크 {task!r}")


def evaluate(
    checkpoint: ModelCheckpoint,
    eval_split: Split,
    eval_set: ModalitySet,
    task: Optional[str] = None,
    warnings: Optional[List[Warning]] = None,
) -> float:
    """D_E|_{M_E} 에서 encode → fuse → classify 후 mAP 또는 정확도"""
    eval_set.require_nonempty("evaluate M_E")
    if len(eval_split) == 0:
        raise MetricsError("evaluate: D_E 가 비어 있습니다")
    if not eval_split.labeled:
        raise MetricsError("evaluate: D_E 에 레이블이 없습니다")
    task = task or str(checkpoint.metadata.get("task", TASK_SINGLE_LABEL))
    logits = predict_logits(downstream_params(checkpoint.params), eval_split, eval_set)
    if score_kind(task) == SCORE_MAP:
        return mean_average_precision(logits, eval_split.labels, warnings)
    return accuracy(logits, eval_split.labels)
