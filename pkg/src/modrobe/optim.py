from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .constants import AdamWDefaults
from .errors import ConfigError, NumericOverflowError, ShapeError


@dataclass(frozen=True)
class AdamWConfig:
    """AdamW 하이퍼파라미터"""
    lr: float = AdamWDefaults.LR
    betas: Tuple[float, float] = AdamWDefaults.BETAS
    eps: float = AdamWDefaults.EPS
    weight_decay: float = AdamWDefaults.WEIGHT_DECAY

    def to_dict(self) -> Dict[str, Any]:
        return {"lr": self.lr, "betas": list(self.betas), "eps": self.eps, "weight_decay": self.weight_decay}


@dataclass(frozen=True)
class ScheduleConfig:
    """선형 warmup → cosine decay"""
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def to_dict(self) -> Dict[str, Any]:
        return {"peak_lr": self.peak_lr, "warmup_steps": self.warmup_steps, "total_steps": self.total_steps}


@dataclass
class OptimizerState:
    """파라미터별 1차/2차 모멘트와 스텝 카운터"""
    config: AdamWConfig = field(default_factory=AdamWConfig)
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def lr_at(schedule: ScheduleConfig, step: int) -> float:
    if schedule.total_steps < schedule.warmup_steps:
        raise ConfigError(
            f"schedule.total_steps({schedule.total_steps}) < schedule.warmup_steps({schedule.warmup_steps})"
        )
    if step < 0:
        raise ConfigError(f"schedule step 은 0 이상이어야 합니다: {step}")
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    if step >= schedule.total_steps:
        return 0.0 if schedule.total_steps > schedule.warmup_steps else schedule.peak_lr
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    lr: Optional[float] = None,
) -> Dict[str, np.ndarray]:
    """decoupled weight decay AdamW 한 스텝. grads 에 있는 이름만 갱신"""
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"adamw: 알 수 없는 파라미터 {name}")
        if grad.shape != params[name].shape:
            raise ShapeError(f"adamw: {name} gradient shape {grad.shape} != 파라미터 shape {params[name].shape}")
        if not np.isfinite(grad).all():
            raise NumericOverflowError(f"adamw: {name} gradient 에 NaN/Inf 가 있습니다 (step={state.step})")

    cfg = state.config
    lr = cfg.lr if lr is None else lr
    beta1, beta2 = cfg.betas
    state.step += 1
    t = state.step
    bias_correction1 = 1 - beta1 ** t
    bias_correction2 = 1 - beta2 ** t

    updated = dict(params)
    for name in sorted(grads):
        grad = grads[name]
        value = params[name]
        dtype = value.dtype.type
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = dtype(beta1) * m + dtype(1 - beta1) * grad
        v = dtype(beta2) * v + dtype(1 - beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v

        denom = np.sqrt(v) / dtype(math.sqrt(bias_correction2)) + dtype(cfg.eps)
        new_value = value * dtype(1 - lr * cfg.weight_decay) - dtype(lr / bias_correction1) * m / denom
        new_value.flags.writeable = False
        updated[name] = new_value
    return updated
