"""사전학습(contrastive | MAE), linear probe, fine-tune, MASD, WiseFT 조립

모든 학습 루프는 같은 형태다: epoch 마다 작업 RNG 로 순열을 뽑고, 배치마다 새 그래프에
파라미터를 올려 손실을 만들고, 역전파 후 학습 대상 파라미터만 AdamW 로 갱신한다.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set

import numpy as np

from . import numerics as nx
from .checkpoint import ModelCheckpoint
from .config import ModelConfig, TrainConfig
from .constants import TASK_SINGLE_LABEL, TrendThresholds
from .datagen import DatasetBundle, Split, mask_batch, mask_count
from .errors import CheckpointError, ConfigError, MissingModalityError, NumericOverflowError, TrainingError
from .model import (
    BN_MEAN,
    BN_VAR,
    batch_norm_stats,
    decoder_forward,
    downstream_params,
    encoder_forward,
    encoder_names,
    forward_logits,
    fuse,
    fused_features,
    head_names,
    init_params,
    interpolate,
    shared_names,
)
from .modalities import ModalitySet
from .numerics import Tensor
from .objectives import contrastive_total, initial_logit_scale, mae_loss, masd_loss, task_loss
from .optim import OptimizerState, ScheduleConfig, adamw_step, lr_at
from .schema import Warning
from .validator import add_warning

logger = logging.getLogger(__name__)

LOGIT_SCALE = "contrastive.logit_scale"
LossFn = Callable[[Mapping[str, Tensor], np.ndarray], Tensor]


def derive_seed(master: int, *keys: str) -> int:
    """(master seed, 키들) → 63비트 정수. 작업 RNG 스트림 분리용"""
    payload = json.dumps([int(master), *[str(key) for key in keys]]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little") & ((1 << 63) - 1)


def _rng(master: int, *keys: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


def _cast(params: Mapping[str, np.ndarray], precision: str) -> Dict[str, np.ndarray]:
    dtype = nx.resolve_dtype(precision)
    result = {}
    for name, value in params.items():
        array = value.astype(dtype, copy=True)
        array.flags.writeable = False
        result[name] = array
    return result


def _schedule(cfg: TrainConfig, steps_per_epoch: int) -> ScheduleConfig:
    total = cfg.epochs * steps_per_epoch
    return ScheduleConfig(peak_lr=cfg.optimizer.lr, warmup_steps=min(cfg.warmup_steps, total), total_steps=total)


def _epoch_batches(rng: np.random.Generator, count: int, batch_size: int) -> List[np.ndarray]:
    order = rng.permutation(count)
    return [order[start : start + batch_size] for start in range(0, count, batch_size)]


def train_loop(
    params: Mapping[str, np.ndarray],
    trainable: Set[str],
    cfg: TrainConfig,
    count: int,
    rng: np.random.Generator,
    loss_fn: LossFn,
    job: str,
) -> tuple:
    """공통 학습 루프. (갱신된 파라미터, epoch 별 평균 손실) 반환"""
    params = dict(params)
    missing = sorted(trainable - set(params))
    if missing:
        raise ConfigError(f"{job}: 학습 대상 파라미터가 없습니다 {missing[:3]}")
    if cfg.epochs == 0:
        return params, []
    if count == 0:
        raise TrainingError(f"{job}: 학습 데이터가 비어 있습니다")
    steps_per_epoch = math.ceil(count / cfg.batch_size)
    schedule = _schedule(cfg, steps_per_epoch)
    state = OptimizerState(config=cfg.optimizer)
    history: List[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for batch in _epoch_batches(rng, count, cfg.batch_size):
            lr = lr_at(schedule, step)
            graph = nx.Graph(cfg.precision)
            bound = graph.bind({name: params[name] for name in params}, trainable)
            try:
                loss = loss_fn(bound, batch)
            except NumericOverflowError as exc:
                raise TrainingError(f"{job}: step {step} 에서 손실이 발산했습니다 ({exc})") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"{job}: step {step} 에서 NaN/Inf 손실")
            grads = nx.backward(graph, loss)
            try:
                params = adamw_step(state, params, {name: grads[name] for name in sorted(trainable)}, lr)
            except NumericOverflowError as exc:
                raise TrainingError(f"{job}: step {step} gradient 비유한 ({exc})") from exc
            logger.debug("%s step=%d lr=%.3e loss=%.6f", job, step, lr, value)
            losses.append(value)
            step += 1
        history.append(float(np.mean(losses)))
        logger.info("%s epoch %d/%d loss=%.5f", job, epoch + 1, cfg.epochs, history[-1])
    return params, history


def loss_decreased(history: Sequence[float], window: int = TrendThresholds.SMOOTHING_WINDOW) -> bool:
    """앞/뒤 window epoch 평균 비교. epoch 가 2개 미만이면 판단하지 않음"""
    if len(history) < 2:
        return True
    w = max(1, min(window, len(history) // 2))
    return float(np.mean(history[-w:])) < float(np.mean(history[:w]))


def check_loss_trend(checkpoint: ModelCheckpoint, warnings: List[Warning], job: str) -> bool:
    history = checkpoint.metadata.get("loss_history") or []
    if loss_decreased(history):
        return True
    add_warning(warnings, "loss_not_decreasing", {"job": job, "first": history[0], "last": history[-1]})
    return False


def _require_all_modalities(split: Split, what: str) -> None:
    missing = [name for name in split.universe.names if name not in split.tokens]
    if missing:
        raise MissingModalityError(f"{what}: 모달리티 {missing} 가 없습니다")


def _pooled(split: Split, names: Sequence[str], precision: str) -> Dict[str, np.ndarray]:
    dtype = nx.resolve_dtype(precision)
    return {name: split.pooled(name).astype(dtype) for name in names}


def _base_metadata(bundle: DatasetBundle, cfg: TrainConfig, model_cfg: ModelConfig) -> Dict[str, object]:
    token_counts = {}
    for name in bundle.universe.names:
        array = bundle.pretrain.tokens.get(name)
        if array is None:
            array = bundle.train.tokens[name]
        token_counts[name] = int(array.shape[1])
    return {
        "universe": list(bundle.universe.names),
        "token_dims": bundle.token_dims(),
        "token_counts": token_counts,
        "num_classes": bundle.num_classes,
        "task": bundle.task,
        "model": model_cfg.to_dict(),
        "pretrain_method": cfg.method,
        "downstream_method": "none",
        "train_set": None,
        "precision": cfg.precision,
        "seeds": {"pretrain": cfg.seed},
    }


def pretrain(bundle: DatasetBundle, cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig()) -> ModelCheckpoint:
    """contrastive_total 또는 mae_loss 최소화로 자기지도 사전학습"""
    if cfg.method not in ("contrastive", "mae"):
        raise ConfigError(f"pretrain.method: contrastive|mae (got {cfg.method!r})")
    data = bundle.pretrain
    universe = bundle.universe
    names = universe.names
    _require_all_modalities(data, "pretrain D")
    mae = cfg.method == "mae"
    metadata = _base_metadata(bundle, cfg, model_cfg)
    params = init_params(
        universe,
        bundle.token_dims(),
        bundle.num_classes,
        model_cfg,
        mae=mae,
        token_counts=metadata["token_counts"],
        seed=derive_seed(cfg.seed, "init", cfg.method),
        precision=cfg.precision,
    )
    contrastive = cfg.contrastive
    if not mae and contrastive.learnable:
        params[LOGIT_SCALE] = np.full((1,), initial_logit_scale(contrastive.temperature), dtype=nx.resolve_dtype(cfg.precision))
    if not mae and len(names) < 2:
        raise ConfigError("contrastive 사전학습에는 모달리티가 2개 이상 필요합니다")
    if mae and len(cfg.mask_ratios) != len(names):
        raise ConfigError(f"pretrain.mask_ratios: 모달리티 수({len(names)})만큼 필요합니다")
    trainable = {name for name in params if name not in head_names()}
    dtype = nx.resolve_dtype(cfg.precision)

    if mae:
        tokens = {name: data.tokens[name].astype(dtype) for name in names}
        ratios = dict(zip(names, cfg.mask_ratios))
        if all(mask_count(tokens[name].shape[1], ratios[name]) == tokens[name].shape[1] for name in names):
            raise ConfigError("pretrain.mask_ratios: 모든 모달리티가 완전히 가려져 보이는 토큰이 없습니다")
        mask_rng = _rng(cfg.seed, "mae-mask")

        def loss_fn(p: Mapping[str, Tensor], batch: np.ndarray) -> Tensor:
            embeddings, recon, targets, rows = [], {}, {}, {}
            views = {name: mask_batch(tokens[name][batch], ratios[name], mask_rng) for name in names}
            for name in names:
                # 완전히 가린 모달리티는 fusion 에서 빠지고 다른 모달리티로부터 복원된다
                if views[name].visible.shape[1] == 0:
                    continue
                visible = views[name].visible.mean(axis=1, dtype=np.float64).astype(dtype)
                embeddings.append(encoder_forward(p, Tensor(visible), name))
            latent = fuse(embeddings)
            for name in names:
                n, t, dim = tokens[name][batch].shape
                recon[name] = decoder_forward(p, latent, name)
                targets[name] = tokens[name][batch].reshape(n * t, dim)
                rows[name] = (np.arange(n)[:, None] * t + views[name].masked_index).reshape(-1)
            return mae_loss(recon, targets, rows)

    else:
        pooled = _pooled(data, names, cfg.precision)

        def loss_fn(p: Mapping[str, Tensor], batch: np.ndarray) -> Tensor:
            embeddings = [encoder_forward(p, Tensor(pooled[name][batch]), name) for name in names]
            scale = p.get(LOGIT_SCALE)
            return contrastive_total(embeddings, contrastive.temperature, contrastive.normalize, scale)

    logger.info("사전학습 시작: method=%s examples=%d epochs=%d", cfg.method, len(data), cfg.epochs)
    params, history = train_loop(
        params, trainable, cfg, len(data), _rng(cfg.seed, "pretrain", cfg.method), loss_fn, f"pretrain[{cfg.method}]"
    )
    metadata["loss_history"] = history
    checkpoint = ModelCheckpoint(params, metadata)
    return checkpoint.with_metadata(pretrain_fingerprint=checkpoint.fingerprint())


def _downstream_metadata(
    backbone: ModelCheckpoint, method: str, train_set: ModalitySet, cfg: TrainConfig, history: List[float]
) -> Dict[str, object]:
    metadata = dict(backbone.metadata)
    seeds = dict(metadata.get("seeds") or {})
    seeds[method] = cfg.seed
    metadata.update(
        {
            "downstream_method": method,
            "train_set": train_set.label,
            "seeds": seeds,
            "loss_history": history,
            "precision": cfg.precision,
        }
    )
    metadata.pop("parents", None)
    metadata.pop("alpha", None)
    return metadata


def _check_train_split(train: Split, train_set: ModalitySet, job: str) -> None:
    train_set.require_nonempty(f"{job} M_T")
    if len(train) == 0:
        raise TrainingError(f"{job}: D_T 가 비어 있습니다")
    if not train.labeled:
        raise TrainingError(f"{job}: D_T 에 레이블이 없습니다")
    if not train_set.issubset(train.modalities):
        raise MissingModalityError(f"{job}: D_T 에 {(train_set - train.modalities).label} 모달리티가 없습니다")


def precompute_features(backbone: ModelCheckpoint, train: Split, train_set: ModalitySet, precision: str = "float32") -> np.ndarray:
    """고정 backbone 의 E(x|_{M_T}) (N, d)"""
    params = _cast(downstream_params(backbone.params), precision)
    return fused_features(params, train, train_set)


def linear_probe(
    backbone: ModelCheckpoint,
    train: Split,
    train_set: ModalitySet,
    cfg: TrainConfig,
    features: Optional[np.ndarray] = None,
) -> ModelCheckpoint:
    """backbone 고정, affine 없는 batch-norm 통계 고정 후 head 만 학습 (θ_lp)"""
    job = f"probe[{train_set.label}]"
    _check_train_split(train, train_set, job)
    params = _cast(downstream_params(backbone.params), cfg.precision)
    params.pop(BN_MEAN, None)
    params.pop(BN_VAR, None)
    if features is None:
        features = fused_features(params, train, train_set)
    features = np.asarray(features, dtype=nx.resolve_dtype(cfg.precision))
    if features.shape[0] != len(train):
        raise TrainingError(f"{job}: feature 수 {features.shape[0]} 가 D_T 크기 {len(train)} 와 다릅니다")
    stats = batch_norm_stats(features)
    normalized = nx.batch_norm(Tensor(features), stats[BN_MEAN], stats[BN_VAR]).data
    labels = train.labels
    head = {name: params[name] for name in head_names()}

    def loss_fn(p: Mapping[str, Tensor], batch: np.ndarray) -> Tensor:
        x = Tensor(normalized[batch])
        logits = nx.add(nx.matmul(x, p["head.weight"]), p["head.bias"])
        return task_loss(logits, labels[batch], train_task(backbone))

    head, history = train_loop(
        head, set(head), cfg, len(train), _rng(cfg.seed, "probe", train_set.label), loss_fn, job
    )
    params.update(head)
    params.update(stats)
    return ModelCheckpoint(params, _downstream_metadata(backbone, "probe", train_set, cfg, history))


def train_task(checkpoint: ModelCheckpoint) -> str:
    return str(checkpoint.metadata.get("task", TASK_SINGLE_LABEL))


def _probe_head(backbone: ModelCheckpoint, probe: ModelCheckpoint, precision: str) -> Dict[str, np.ndarray]:
    head = {}
    for name in head_names() + [BN_MEAN, BN_VAR]:
        if name not in probe.params:
            raise CheckpointError(f"θ_lp 에 {name} 가 없습니다")
        head[name] = probe.params[name]
    for name in head_names():
        if name in backbone.params and backbone.params[name].shape != head[name].shape:
            raise CheckpointError(
                f"θ_lp head shape {head[name].shape} 가 backbone {backbone.params[name].shape} 와 맞지 않습니다"
            )
    return _cast(head, precision)


def _finetune_params(backbone: ModelCheckpoint, probe: ModelCheckpoint, cfg: TrainConfig) -> Dict[str, np.ndarray]:
    params = _cast(downstream_params(backbone.params), cfg.precision)
    params.update(_probe_head(backbone, probe, cfg.precision))
    return params


def _trainable(params: Mapping[str, np.ndarray], modalities: Sequence[str]) -> Set[str]:
    names = set(head_names())
    for name in modalities:
        names.update(encoder_names(name))
    names.update(name for name in shared_names() if name in params)
    return names


def finetune(
    backbone: ModelCheckpoint,
    probe: ModelCheckpoint,
    train: Split,
    train_set: ModalitySet,
    cfg: TrainConfig,
) -> ModelCheckpoint:
    """head 는 θ_lp 에서 시작, M_T 인코더와 head 만 갱신"""
    job = f"finetune[{train_set.label}]"
    _check_train_split(train, train_set, job)
    params = _finetune_params(backbone, probe, cfg)
    pooled = _pooled(train, train_set.names, cfg.precision)
    labels = train.labels
    task = train_task(backbone)

    def loss_fn(p: Mapping[str, Tensor], batch: np.ndarray) -> Tensor:
        inputs = {name: Tensor(pooled[name][batch]) for name in train_set.names}
        return task_loss(forward_logits(p, inputs, train_set), labels[batch], task)

    params, history = train_loop(
        params,
        _trainable(params, train_set.names),
        cfg,
        len(train),
        _rng(cfg.seed, "finetune", train_set.label),
        loss_fn,
        job,
    )
    return ModelCheckpoint(params, _downstream_metadata(backbone, "finetune", train_set, cfg, history))


def masd_train(
    backbone: ModelCheckpoint,
    probe: ModelCheckpoint,
    train: Split,
    train_set: ModalitySet,
    self_distill: Split,
    cfg: TrainConfig,
    warnings: Optional[List[Warning]] = None,
) -> ModelCheckpoint:
    """task 손실 + λ · self-distillation. λ = 0 또는 M_T = M 이면 distillation 항이 없어 fine-tune 과 같은 궤적"""
    job = f"masd[{train_set.label}]"
    _check_train_split(train, train_set, job)
    complement = train_set.universe.full() - train_set
    distilling = cfg.masd.weight != 0 and bool(complement)
    if not distilling and warnings is not None:
        add_warning(warnings, "masd_degenerate", {"train_set": train_set.label, "weight": cfg.masd.weight})
    if distilling:
        if len(self_distill) == 0:
            raise TrainingError(f"{job}: D_SD 가 비어 있습니다")
        _require_all_modalities(self_distill, f"{job} D_SD")
    params = _finetune_params(backbone, probe, cfg)
    universe_names = train_set.universe.names
    pooled = _pooled(train, train_set.names, cfg.precision)
    pooled_sd = _pooled(self_distill, universe_names, cfg.precision) if distilling else {}
    labels = train.labels
    task = train_task(backbone)
    sd_rng = _rng(cfg.seed, "masd-sd", train_set.label)
    sd_size = (cfg.masd.sd_batch_size or cfg.batch_size) * cfg.masd.sd_batches_per_step
    sd_queue: List[int] = []

    def next_sd_batch() -> np.ndarray:
        while len(sd_queue) < sd_size:
            sd_queue.extend(sd_rng.permutation(len(self_distill)).tolist())
        batch = np.asarray(sd_queue[:sd_size], dtype=np.int64)
        del sd_queue[:sd_size]
        return batch

    def loss_fn(p: Mapping[str, Tensor], batch: np.ndarray) -> Tensor:
        inputs = {name: Tensor(pooled[name][batch]) for name in train_set.names}
        inputs_sd: Dict[str, Tensor] = {}
        if distilling:
            sd_batch = next_sd_batch()
            inputs_sd = {name: Tensor(pooled_sd[name][sd_batch]) for name in universe_names}
        return masd_loss(p, inputs, labels[batch], inputs_sd, train_set, task, cfg.masd)

    # distillation 이 없으면 M_T 밖 인코더에는 gradient 가 없으므로 학습 대상에서 뺀다
    trainable = _trainable(params, universe_names if distilling else train_set.names)
    params, history = train_loop(
        params,
        trainable,
        cfg,
        len(train),
        _rng(cfg.seed, "finetune", train_set.label),
        loss_fn,
        job,
    )
    metadata = _downstream_metadata(backbone, "masd", train_set, cfg, history)
    metadata.update({"masd": cfg.masd.to_dict(), "distillation": distilling})
    return ModelCheckpoint(params, metadata)


def wiseft_assemble(
    theta_a: ModelCheckpoint,
    theta_lp: ModelCheckpoint,
    alpha: float = TrainConfig.alpha,
    method: str = "wiseft",
) -> ModelCheckpoint:
    """θ_wise = α θ_a + (1 − α) θ_lp. θ_a 는 MASD(wiseft) 또는 fine-tune(wiseft-ft)"""
    checkpoint = interpolate(theta_a, theta_lp, alpha)
    if method != "wiseft":
        checkpoint = checkpoint.with_metadata(downstream_method=method)
    return checkpoint
