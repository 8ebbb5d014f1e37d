import itertools

import numpy as np
import pytest

from modrobe.checkpoint import ModelCheckpoint
from modrobe.config import ModelConfig
from modrobe.errors import CheckpointError, ConfigError, MissingModalityError, ShapeError
from modrobe.model import (
    check_complete,
    constants,
    downstream_params,
    encode,
    encoder_forward,
    forward_logits,
    fuse,
    fused_features,
    init_params,
    interpolate,
    predict_logits,
)
from modrobe.modalities import ModalityUniverse
from modrobe.numerics import Tensor

UNIVERSE = ModalityUniverse(("audio", "video", "text"))
DIMS = {"audio": 4, "video": 5, "text": 3}
CONFIG = ModelConfig(hidden=6, embed_dim=4, decoder_hidden=5)


def _params(seed=0, mae=False, precision="float64"):
    counts = {"audio": 3, "video": 2, "text": 4}
    return init_params(UNIVERSE, DIMS, 3, CONFIG, mae=mae, token_counts=counts, seed=seed, precision=precision)


def _pooled(rng, n=5):
    return {name: Tensor(rng.standard_normal((n, dim))) for name, dim in DIMS.items()}


def test_init_is_seeded_and_sized():
    """같은 seed 는 같은 파라미터, 크기는 설정을 따름"""
    a, b = _params(1), _params(1)
    assert all(np.array_equal(a[name], b[name]) for name in a)
    assert a["enc.video.embed.weight"].shape == (5, 6)
    assert a["enc.text.fc2.weight"].shape == (6, 4)
    assert a["head.weight"].shape == (4, 3)
    assert "shared.weight" not in a


def test_mae_adds_decoder_and_shared_layer():
    """MAE 모드는 디코더와 공유 층을 둔다"""
    params = _params(mae=True)
    assert params["dec.audio.pos"].shape == (3, 4)
    assert params["dec.video.fc2.weight"].shape == (5, 5)
    assert "shared.weight" in params
    assert not any(name.startswith("dec.") for name in downstream_params(params))


def test_mae_requires_token_counts():
    """MAE 디코더 초기화에는 토큰 수가 필요"""
    with pytest.raises(ConfigError, match="token_counts"):
        init_params(UNIVERSE, DIMS, 3, CONFIG, mae=True)


def test_fusion_is_mean_of_present_embeddings():
    """E(x) = 존재하는 모달리티 임베딩의 평균"""
    rng = np.random.default_rng(0)
    p = constants(_params())
    pooled = _pooled(rng)
    embeddings = [encoder_forward(p, pooled[name], name).data for name in ("audio", "text")]
    fused = fuse([encoder_forward(p, pooled[name], name) for name in ("audio", "text")])
    np.testing.assert_allclose(fused.data, (embeddings[0] + embeddings[1]) / 2)


def test_forward_ignores_absent_modalities():
    """M' 밖 모달리티 값은 출력에 영향이 없음"""
    rng = np.random.default_rng(1)
    p = constants(_params())
    pooled = _pooled(rng)
    m = UNIVERSE.parse("audio+video")
    first = forward_logits(p, pooled, m).data
    changed = dict(pooled)
    changed["text"] = Tensor(rng.standard_normal((5, 3)) * 100)
    np.testing.assert_array_equal(forward_logits(p, changed, m).data, first)


def test_forward_requires_present_modalities():
    """M' 에 있는 모달리티 입력이 없으면 오류"""
    p = constants(_params())
    pooled = _pooled(np.random.default_rng(2))
    del pooled["video"]
    with pytest.raises(MissingModalityError, match="video"):
        forward_logits(p, pooled, UNIVERSE.parse("audio+video"))


def test_encode_single_example_matches_batched(tiny_bundle, backbone):
    """토큰 행렬 하나의 encode 는 배치 feature 의 해당 행"""
    params = downstream_params(backbone.params)
    m0 = tiny_bundle.universe.parse("m0")
    batched = fused_features(params, tiny_bundle.eval, m0)
    single = encode(params, tiny_bundle.eval.tokens["m0"][3], "m0")
    np.testing.assert_allclose(single, batched[3], rtol=1e-5, atol=1e-6)


def test_encode_rejects_wrong_rank():
    """encode 는 (T, D) 행렬만 받음"""
    with pytest.raises(ShapeError, match="encode"):
        encode(_params(), np.zeros(4), "audio")


def test_predict_logits_shape(tiny_bundle, backbone):
    """predict_logits 는 (N, C)"""
    logits = predict_logits(downstream_params(backbone.params), tiny_bundle.eval, tiny_bundle.universe.parse("m1+m2"))
    assert logits.shape == (40, 3)


def _checkpoint(seed, lineage="fp"):
    return ModelCheckpoint(_params(seed), {"universe": list(UNIVERSE.names), "pretrain_fingerprint": lineage})


def test_interpolate_endpoints_return_parents_exactly():
    """α = 1 → θ_a, α = 0 → θ_b (비트 단위)"""
    a, b = _checkpoint(1), _checkpoint(2)
    at_one = interpolate(a, b, 1.0)
    at_zero = interpolate(a, b, 0.0)
    for name in a.params:
        assert np.array_equal(at_one.params[name], a.params[name])
        assert np.array_equal(at_zero.params[name], b.params[name])


def test_interpolate_midpoint_and_metadata():
    """중간값은 선형 결합이고 parent 정보가 기록됨"""
    a, b = _checkpoint(1), _checkpoint(2)
    mixed = interpolate(a, b, 0.75)
    for name in a.params:
        np.testing.assert_allclose(mixed.params[name], 0.75 * a.params[name] + 0.25 * b.params[name], atol=1e-12)
    assert mixed.metadata["alpha"] == 0.75
    assert [parent["fingerprint"] for parent in mixed.metadata["parents"]] == [a.fingerprint(), b.fingerprint()]


def test_interpolate_rejects_incompatible_parents():
    """다른 계보, 다른 파라미터 집합, 범위 밖 α 거부"""
    a = _checkpoint(1)
    with pytest.raises(CheckpointError, match="계보"):
        interpolate(a, _checkpoint(2, lineage="other"), 0.5)
    smaller = ModelCheckpoint({k: v for k, v in a.params.items() if k != "head.bias"}, a.metadata)
    with pytest.raises(CheckpointError, match="head.bias"):
        interpolate(a, smaller, 0.5)
    with pytest.raises(ConfigError, match="alpha"):
        interpolate(a, a, 1.5)


def test_check_complete():
    """인코더가 빠진 체크포인트는 불완전"""
    a = _checkpoint(1)
    check_complete(a, UNIVERSE.names)
    partial = ModelCheckpoint({k: v for k, v in a.params.items() if not k.startswith("enc.text")}, a.metadata)
    with pytest.raises(CheckpointError, match="enc.text"):
        check_complete(partial, UNIVERSE.names)


def test_fusion_is_permutation_invariant_bitwise():
    """입력 목록의 순서를 바꿔도 fusion 결과가 비트 단위로 같음"""
    rng = np.random.default_rng(12)
    for _ in range(50):
        embeddings = [Tensor(rng.standard_normal((4, 8)).astype(np.float32)) for _ in range(3)]
        results = {fuse([embeddings[i] for i in order]).data.tobytes() for order in itertools.permutations(range(3))}
        assert len(results) == 1


def test_fusion_singleton_is_identity():
    """모달리티 하나면 그 임베딩 그대로"""
    embedding = Tensor(np.random.default_rng(13).standard_normal((3, 4)))
    assert np.array_equal(fuse([embedding]).data, embedding.data)


def test_encode_is_invariant_to_token_duplication():
    """모든 토큰 행을 복제해도 임베딩이 같음"""
    params = _params(4, precision="float32")
    rng = np.random.default_rng(14)
    for _ in range(20):
        tokens = rng.standard_normal((3, DIMS["audio"]))
        doubled = np.concatenate([tokens, tokens], axis=0)
        np.testing.assert_array_equal(encode(params, doubled, "audio"), encode(params, tokens, "audio"))


def test_interpolate_with_itself_is_identity():
    """interpolate(θ, θ, α) = θ"""
    theta = _checkpoint(3)
    for alpha in (0.0, 0.3, 0.75, 1.0):
        mixed = interpolate(theta, theta, alpha)
        for name, value in theta.params.items():
            assert np.array_equal(mixed.params[name], value), (alpha, name)
