"""모달리티별 인코더, 평균 fusion, 분류 head, MAE 디코더, 가중치 보간

파라미터 이름:
  enc.<m>.embed.{weight,bias}  토큰 임베딩 (token_dim → h)
  enc.<m>.fc1.{weight,bias}    MLP 1층 (h → h, relu)
  enc.<m>.fc2.{weight,bias}    MLP 2층 (h → d)
  shared.{weight,bias}         모달리티 공유 마지막 선형층 (d → d, MAE 모드)
  head.{weight,bias}           분류기 (d → C)
  head.bn_mean, head.bn_var    probe 에서 고정한 batch-norm 통계 (affine 없음)
  dec.<m>.pos, dec.<m>.fc{1,2} MAE 디코더 (사전학습 전용)

임베딩은 선형이므로 토큰 평균을 먼저 구하고 임베딩해도 결과가 같다.
"""
from __future__ import annotations

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from . import numerics as nx
from .checkpoint import ModelCheckpoint
from .config import ModelConfig
from .errors import CheckpointError, ConfigError, MissingModalityError, ShapeError
from .modalities import ModalitySet, ModalityUniverse
from .numerics import Tensor

logger = logging.getLogger(__name__)

Params = Mapping[str, np.ndarray]
BN_MEAN = "head.bn_mean"
BN_VAR = "head.bn_var"
EVAL_BATCH = 1024


def encoder_names(name: str) -> List[str]:
    return [f"enc.{name}.{layer}.{kind}" for layer in ("embed", "fc1", "fc2") for kind in ("weight", "bias")]


def head_names() -> List[str]:
    return ["head.weight", "head.bias"]


def shared_names() -> List[str]:
    return ["shared.weight", "shared.bias"]


def is_pretrain_only(name: str) -> bool:
    """MAE 디코더, 학습 가능한 contrastive 온도"""
    return name.startswith(("dec.", "contrastive."))


def has_shared_layer(params: Mapping[str, object]) -> bool:
    return "shared.weight" in params


def _gaussian(rng: np.random.Generator, fan_in: int, shape: Sequence[int]) -> np.ndarray:
    return rng.standard_normal(shape) / math.sqrt(fan_in)


def init_params(
    universe: ModalityUniverse,
    token_dims: Mapping[str, int],
    num_classes: int,
    config: ModelConfig = ModelConfig(),
    mae: bool = False,
    token_counts: Optional[Mapping[str, int]] = None,
    seed: int = 0,
    precision: str = "float32",
) -> Dict[str, np.ndarray]:
    """fan-in 스케일 가우시안 초기화 (seed 고정)"""
    dtype = nx.resolve_dtype(precision)
    shared = mae if config.shared_layer is None else config.shared_layer
    h, d = config.hidden, config.embed_dim
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    params: Dict[str, np.ndarray] = {}
    for name in universe.names:
        token_dim = token_dims[name]
        params[f"enc.{name}.embed.weight"] = _gaussian(rng, token_dim, (token_dim, h))
        params[f"enc.{name}.embed.bias"] = np.zeros(h)
        params[f"enc.{name}.fc1.weight"] = _gaussian(rng, h, (h, h))
        params[f"enc.{name}.fc1.bias"] = np.zeros(h)
        params[f"enc.{name}.fc2.weight"] = _gaussian(rng, h, (h, d))
        params[f"enc.{name}.fc2.bias"] = np.zeros(d)
    if shared:
        params["shared.weight"] = _gaussian(rng, d, (d, d))
        params["shared.bias"] = np.zeros(d)
    params["head.weight"] = _gaussian(rng, d, (d, num_classes))
    params["head.bias"] = np.zeros(num_classes)
    if mae:
        if token_counts is None:
            raise ConfigError("MAE 디코더 초기화에는 token_counts 가 필요합니다")
        hd = config.decoder_hidden
        for name in universe.names:
            params[f"dec.{name}.pos"] = 0.02 * rng.standard_normal((token_counts[name], d))
            params[f"dec.{name}.fc1.weight"] = _gaussian(rng, d, (d, hd))
            params[f"dec.{name}.fc1.bias"] = np.zeros(hd)
            params[f"dec.{name}.fc2.weight"] = _gaussian(rng, hd, (hd, token_dims[name]))
            params[f"dec.{name}.fc2.bias"] = np.zeros(token_dims[name])
    return {name: value.astype(dtype) for name, value in params.items()}


def _linear(p: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return nx.add(nx.matmul(x, p[f"{prefix}.weight"]), p[f"{prefix}.bias"])


def encoder_forward(p: Mapping[str, Tensor], pooled: Tensor, name: str) -> Tensor:
    """토큰 평균 (N, token_dim) → 임베딩 (N, d)"""
    if f"enc.{name}.embed.weight" not in p:
        raise MissingModalityError(f"인코더 파라미터가 없습니다: {name}")
    x = _linear(p, f"enc.{name}.embed", pooled)
    x = nx.relu(_linear(p, f"enc.{name}.fc1", x))
    x = _linear(p, f"enc.{name}.fc2", x)
    if has_shared_layer(p):
        x = _linear(p, "shared", x)
    return x


def fuse(embeddings: Sequence[Tensor]) -> Tensor:
    """E(x) = 1/|M'| Σ E_m'(x|_m'), 입력 순서에 무관"""
    embeddings = list(embeddings)
    if not embeddings:
        raise MissingModalityError("fuse: 빈 모달리티 집합")
    if len(embeddings) == 1:
        return embeddings[0]
    return nx.mean_of(embeddings)


def classify(p: Mapping[str, Tensor], fused: Tensor) -> Tensor:
    """affine head. probe 통계가 있으면 먼저 batch-norm (affine 없음)"""
    weight = p["head.weight"]
    if fused.ndim != 2 or fused.shape[1] != weight.shape[0]:
        raise ShapeError(f"classify: feature 차원 {tuple(fused.shape)} 이 head {tuple(weight.shape)} 와 맞지 않습니다")
    if BN_MEAN in p:
        fused = nx.batch_norm(fused, p[BN_MEAN].data, p[BN_VAR].data)
    return _linear(p, "head", fused)


def forward_logits(p: Mapping[str, Tensor], pooled: Mapping[str, Tensor], m: ModalitySet) -> Tensor:
    """f_θ(x|_m): m 의 모달리티만 인코딩해 fusion 후 분류"""
    m.require_nonempty("forward")
    embeddings = []
    for name in m.names:
        if name not in pooled:
            raise MissingModalityError(f"forward: 입력에 모달리티 {name} 가 없습니다")
        embeddings.append(encoder_forward(p, pooled[name], name))
    return classify(p, fuse(embeddings))


def decoder_forward(p: Mapping[str, Tensor], latent: Tensor, name: str) -> Tensor:
    """fused latent (N, d) → 모든 토큰 복원 (N*T, token_dim), 행 순서는 (예제, 토큰)"""
    pos = p[f"dec.{name}.pos"]
    n, t = latent.shape[0], pos.shape[0]
    rows = nx.gather_rows(latent, np.repeat(np.arange(n), t))
    positions = nx.gather_rows(pos, np.tile(np.arange(t), n))
    x = nx.relu(_linear(p, f"dec.{name}.fc1", nx.add(rows, positions)))
    return _linear(p, f"dec.{name}.fc2", x)


def constants(params: Params, precision: Optional[str] = None) -> Dict[str, Tensor]:
    """추적하지 않는 상수 텐서 dict"""
    dtype = None if precision is None else nx.resolve_dtype(precision)
    return {
        name: Tensor(np.asarray(value if dtype is None else value.astype(dtype, copy=False)))
        for name, value in params.items()
    }


def _param_dtype(params: Params) -> type:
    return params["head.weight"].dtype.type


def encode(params: Params, tokens: np.ndarray, modality: str) -> np.ndarray:
    """토큰 행렬 (T, token_dim) 하나 → d 벡터"""
    if tokens.ndim != 2:
        raise ShapeError(f"encode: (T, token_dim) 토큰 행렬이 필요합니다 (got {tokens.shape})")
    dtype = _param_dtype(params)
    pooled = Tensor(tokens.mean(axis=0, dtype=np.float64).astype(dtype)[None, :])
    return encoder_forward(constants(params), pooled, modality).data[0]


def _batched(split, m: ModalitySet, params: Params, fn) -> np.ndarray:
    p = constants(params)
    dtype = _param_dtype(params)
    count = len(split)
    if count == 0:
        raise ShapeError("빈 split 을 평가할 수 없습니다")
    pooled = {name: split.pooled(name).astype(dtype) for name in m.names}
    outputs = []
    for start in range(0, count, EVAL_BATCH):
        rows = slice(start, min(start + EVAL_BATCH, count))
        outputs.append(fn(p, {name: Tensor(values[rows]) for name, values in pooled.items()}).data)
    return np.concatenate(outputs, axis=0)


def fused_features(params: Params, split, m: ModalitySet) -> np.ndarray:
    """E(x|_m) (N, d)"""
    m.require_nonempty("features")
    return _batched(
        split, m, params, lambda p, inputs: fuse([encoder_forward(p, inputs[n], n) for n in m.names])
    )


def predict_logits(params: Params, split, m: ModalitySet) -> np.ndarray:
    """split|_m 의 logits (N, C)"""
    restricted = split.restrict(m)
    return _batched(restricted, m, params, lambda p, inputs: forward_logits(p, inputs, m))


def batch_norm_stats(features: np.ndarray) -> Dict[str, np.ndarray]:
    """probe feature 의 열 평균/분산 (모집단 분산)"""
    dtype = features.dtype
    mean = features.mean(axis=0, dtype=np.float64)
    var = features.var(axis=0, dtype=np.float64)
    return {BN_MEAN: mean.astype(dtype), BN_VAR: var.astype(dtype)}


def downstream_params(params: Params) -> Dict[str, np.ndarray]:
    """사전학습 전용 파라미터 제외"""
    return {name: value for name, value in params.items() if not is_pretrain_only(name)}


def _lineage(checkpoint: ModelCheckpoint) -> Dict[str, object]:
    meta = checkpoint.metadata
    return {key: meta.get(key) for key in ("universe", "pretrain_method", "pretrain_fingerprint")}


def interpolate(theta_a: ModelCheckpoint, theta_b: ModelCheckpoint, alpha: float) -> ModelCheckpoint:
    """θ = α θ_a + (1 − α) θ_b (batch-norm 통계 포함 모든 텐서)"""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha: [0, 1] 범위여야 합니다 (got {alpha})")
    names_a, names_b = list(theta_a.params), list(theta_b.params)
    for name in sorted(set(names_a) | set(names_b)):
        if name not in theta_a.params or name not in theta_b.params:
            raise CheckpointError(f"interpolate: 파라미터 {name} 가 한쪽 체크포인트에만 있습니다")
        a, b = theta_a.params[name], theta_b.params[name]
        if a.shape != b.shape or a.dtype != b.dtype:
            raise CheckpointError(f"interpolate: {name} shape/dtype 불일치 {a.shape}/{a.dtype} vs {b.shape}/{b.dtype}")
    if _lineage(theta_a) != _lineage(theta_b):
        raise CheckpointError(f"interpolate: 사전학습 계보가 다릅니다 {_lineage(theta_a)} vs {_lineage(theta_b)}")

    params: Dict[str, np.ndarray] = {}
    for name, a in theta_a.params.items():
        b = theta_b.params[name]
        if alpha == 1.0:
            params[name] = a
        elif alpha == 0.0:
            params[name] = b
        else:
            dtype = a.dtype.type
            params[name] = a + dtype(1.0 - alpha) * (b - a)
    metadata = dict(theta_a.metadata)
    metadata.update(
        {
            "downstream_method": "wiseft",
            "alpha": alpha,
            "parents": [
                {"method": theta_a.method, "fingerprint": theta_a.fingerprint()},
                {"method": theta_b.method, "fingerprint": theta_b.fingerprint()},
            ],
            "loss_history": [],
        }
    )
    return ModelCheckpoint(params, metadata)


def check_complete(checkpoint: ModelCheckpoint, universe: Iterable[str]) -> None:
    """universe 의 모든 인코더와 head 가 있는지 확인"""
    for name in universe:
        for param in encoder_names(name):
            if param not in checkpoint.params:
                raise CheckpointError(f"체크포인트에 {param} 가 없습니다")
    for param in head_names():
        if param not in checkpoint.params:
            raise CheckpointError(f"체크포인트에 {param} 가 없습니다")
