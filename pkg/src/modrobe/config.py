"""JSON 설정 로딩과 `--set` 덮어쓰기

모든 설정은 frozen dataclass 이며 from_dict 는 알 수 없는 키와 잘못된 타입을
점(.)으로 이어진 필드 경로와 함께 ConfigError 로 거부한다.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Type, TypeVar

from .constants import (
    DEFAULT_MODALITIES,
    DOWNSTREAM_METHODS,
    TASK_SINGLE_LABEL,
    Defaults,
)
from .errors import ConfigError
from .optim import AdamWConfig

T = TypeVar("T")


@dataclass(frozen=True)
class GenConfig:
    """합성 멀티모달 데이터 생성 설정"""
    modalities: Tuple[str, ...] = DEFAULT_MODALITIES
    latent_dim: int = Defaults.LATENT_DIM
    token_counts: Tuple[int, ...] = (Defaults.TOKEN_COUNT,) * len(DEFAULT_MODALITIES)
    token_dims: Tuple[int, ...] = (Defaults.TOKEN_DIM,) * len(DEFAULT_MODALITIES)
    noise: Tuple[float, ...] = Defaults.NOISE
    num_classes: int = Defaults.NUM_CLASSES
    task: str = TASK_SINGLE_LABEL
    pretrain_size: int = Defaults.PRETRAIN_SIZE
    train_size: int = Defaults.TRAIN_SIZE
    eval_size: int = Defaults.EVAL_SIZE
    self_distill_size: int = int(Defaults.PRETRAIN_SIZE * Defaults.SELF_DISTILL_FRACTION)
    nonlinear: bool = True
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


@dataclass(frozen=True)
class ModelConfig:
    """인코더/디코더 크기. shared_layer 가 None 이면 MAE 일 때만 공유 층을 둔다"""
    hidden: int = Defaults.HIDDEN
    embed_dim: int = Defaults.EMBED_DIM
    decoder_hidden: int = Defaults.DECODER_HIDDEN
    shared_layer: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = Defaults.TEMPERATURE
    normalize: bool = True
    learnable: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


@dataclass(frozen=True)
class MasdConfig:
    """self-distillation 가중치 λ, soft target 온도, 스텝당 D_SD 배치 수"""
    weight: float = Defaults.MASD_WEIGHT
    temperature: float = Defaults.DISTILL_TEMPERATURE
    sd_batches_per_step: int = 1
    sd_batch_size: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


@dataclass(frozen=True)
class TrainConfig:
    """한 학습 단계(pretrain/probe/finetune/masd)의 설정"""
    method: str = "contrastive"
    epochs: int = Defaults.PRETRAIN_EPOCHS
    batch_size: int = Defaults.BATCH_SIZE
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    warmup_steps: int = 0
    mask_ratios: Tuple[float, ...] = Defaults.MASK_RATIOS
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    masd: MasdConfig = field(default_factory=MasdConfig)
    alpha: float = Defaults.WISEFT_ALPHA
    seed: int = 0
    precision: str = "float32"

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


@dataclass(frozen=True)
class SweepPlanConfig:
    """비어 있으면(None) 모든 비공집합 부분집합"""
    train_sets: Optional[Tuple[str, ...]] = None
    eval_sets: Optional[Tuple[str, ...]] = None
    methods: Tuple[str, ...] = ("probe", "finetune", "masd", "wiseft")

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


def _default_pretrain() -> TrainConfig:
    return TrainConfig(method="contrastive", epochs=Defaults.PRETRAIN_EPOCHS, warmup_steps=200)


def _default_probe() -> TrainConfig:
    return TrainConfig(
        method="probe",
        epochs=Defaults.DOWNSTREAM_EPOCHS,
        optimizer=AdamWConfig(lr=5e-3, weight_decay=0.0),
        warmup_steps=20,
    )


def _default_finetune() -> TrainConfig:
    return TrainConfig(
        method="finetune",
        epochs=Defaults.DOWNSTREAM_EPOCHS,
        optimizer=AdamWConfig(lr=3e-4),
        warmup_steps=20,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """gen-data / pretrain / sweep 전체 설정

    seed 와 precision 은 각 단계 설정의 값을 덮어쓴다 (phase() 참고).
    finetune 단계 설정은 masd 에도 그대로 쓰인다.
    """
    data: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainConfig = field(default_factory=_default_pretrain)
    probe: TrainConfig = field(default_factory=_default_probe)
    finetune: TrainConfig = field(default_factory=_default_finetune)
    plan: SweepPlanConfig = field(default_factory=SweepPlanConfig)
    bundle: Optional[str] = None
    run_id: Optional[str] = None
    seed: int = 0
    precision: str = "float32"
    parallel: int = 1

    def phase(self, name: str) -> TrainConfig:
        """단계 설정에 실험 수준 seed/precision 적용"""
        if name not in ("pretrain", "probe", "finetune", "masd"):
            raise ConfigError(f"알 수 없는 학습 단계: {name}")
        base = self.finetune if name == "masd" else getattr(self, name)
        method = "masd" if name == "masd" else base.method
        return replace(base, method=method, seed=self.seed, precision=self.precision)

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)


def to_plain(value: Any) -> Any:
    """dataclass → JSON 직렬화 가능한 dict/list"""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [to_plain(item) for item in value]
    if isinstance(value, dict):
        return {key: to_plain(item) for key, item in value.items()}
    return value


def _type_name(tp: Any) -> str:
    return getattr(tp, "__name__", str(tp))


def _convert(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)

    if tp is Any:
        return value
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [arg for arg in args if arg is not type(None)]
        return _convert(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: 리스트가 필요합니다 (got {type(value).__name__})")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], item, f"{path}[{i}]") for i, item in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: 길이 {len(args)} 이어야 합니다 (got {len(value)})")
        return tuple(_convert(arg, item, f"{path}[{i}]") for i, (arg, item) in enumerate(zip(args, value)))
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: 객체가 필요합니다")
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: bool 이 필요합니다 (got {value!r})")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: 정수가 필요합니다 (got {value!r})")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: 실수가 필요합니다 (got {value!r})")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: 문자열이 필요합니다 (got {value!r})")
        return value
    raise ConfigError(f"{path}: 지원하지 않는 설정 타입 {_type_name(tp)}")


def from_dict(cls: Type[T], data: Any, path: str = "") -> T:
    """dict 를 설정 dataclass 로 변환. 빠진 키는 기본값"""
    if isinstance(data, cls):
        return data
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or cls.__name__}: 객체가 필요합니다 (got {type(data).__name__})")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"{where}: 알 수 없는 설정 키")
    kwargs = {
        name: _convert(hints[name], value, f"{path}.{name}" if path else name)
        for name, value in data.items()
    }
    return cls(**kwargs)


def parse_override(text: str) -> Tuple[Tuple[str, ...], Any]:
    """`a.b.c=value` → (경로, 값). 값은 JSON 으로 해석하고 실패하면 문자열"""
    if "=" not in text:
        raise ConfigError(f"--set: key=value 형식이 필요합니다 (got {text!r})")
    key, raw = text.split("=", 1)
    parts = tuple(part for part in key.strip().split("."))
    if not key.strip() or any(not part for part in parts):
        raise ConfigError(f"--set: 잘못된 키 {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """중첩 dict 에 `--set` 값을 반영한 새 dict 반환"""
    result = json.loads(json.dumps(data))
    for text in overrides:
        parts, value = parse_override(text)
        node = result
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigError(f"--set: {'.'.join(parts)} 의 상위 키 {part} 가 객체가 아닙니다")
            node = child
        node[parts[-1]] = value
    return result


def load_config_dict(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"설정 파일을 찾을 수 없습니다: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"설정 JSON 파싱 실패: {path} (line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"설정 파일 최상위는 객체여야 합니다: {path}")
    return data


def load_experiment_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """JSON 파일 + `--set` 덮어쓰기 → 검증된 ExperimentConfig"""
    from .validator import validate_experiment_config

    data = apply_overrides(load_config_dict(path), overrides)
    config = from_dict(ExperimentConfig, data)
    validate_experiment_config(config)
    for method in config.plan.methods:
        if method not in DOWNSTREAM_METHODS:
            raise ConfigError(f"plan.methods: 알 수 없는 방법 {method!r} ({', '.join(DOWNSTREAM_METHODS)})")
    return config
