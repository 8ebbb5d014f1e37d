import json
import struct

import numpy as np
import pytest

from conftest import tiny_gen_config
from modrobe import numerics as nx
from modrobe.constants import TASK_MULTI_LABEL, TASK_SINGLE_LABEL
from modrobe.datagen import (
    FeatureManifest,
    export_features,
    export_split,
    generate,
    ingest_features,
    load_bundle,
    mask_batch,
    mask_count,
    mask_view,
    restrict,
    save_bundle,
)
from modrobe.errors import ConfigError, IngestionError, MissingModalityError
from modrobe.metrics import accuracy
from modrobe.objectives import task_loss
from modrobe.optim import AdamWConfig, OptimizerState, adamw_step


def test_generate_is_deterministic(tiny_bundle):
    """같은 (config, seed) 는 같은 bundle 해시"""
    again = generate(tiny_gen_config())
    assert again.content_hash() == tiny_bundle.content_hash()
    other = generate(tiny_gen_config(), seed=4)
    assert other.content_hash() != tiny_bundle.content_hash()


def test_split_sizes_and_shapes(tiny_bundle):
    """split 크기, 토큰 shape, 레이블 유무"""
    assert len(tiny_bundle.pretrain) == 64
    assert len(tiny_bundle.train) == 48
    assert len(tiny_bundle.eval) == 40
    assert len(tiny_bundle.self_distill) == 16
    assert tiny_bundle.train.tokens["m0"].shape == (48, 4, 5)
    assert tiny_bundle.train.tokens["m0"].dtype == np.float32
    assert not tiny_bundle.pretrain.labeled
    assert tiny_bundle.eval.labeled


def test_self_distill_is_subset_of_pretrain(tiny_bundle):
    """D_SD ⊂ D (인덱스로 동일 예제)"""
    indices = tiny_bundle.self_distill_indices
    assert len(set(indices.tolist())) == 16
    for name in ("m0", "m1", "m2"):
        np.testing.assert_array_equal(tiny_bundle.self_distill.tokens[name], tiny_bundle.pretrain.tokens[name][indices])


def test_noise_levels_are_ordered():
    """σ 가 큰 모달리티일수록 토큰 분산이 큼"""
    bundle = generate(tiny_gen_config(pretrain_size=400, noise=(0.0, 0.5, 2.0)))
    spread = [float(bundle.pretrain.tokens[name].var()) for name in ("m0", "m1", "m2")]
    assert spread[0] < spread[1] < spread[2]


def test_multi_label_labels_are_binary():
    """multi-label 레이블은 (N, C) 0/1"""
    bundle = generate(tiny_gen_config(task=TASK_MULTI_LABEL))
    assert bundle.train.labels.shape == (48, 3)
    assert set(np.unique(bundle.train.labels).tolist()) <= {0, 1}


def test_restrict_keeps_only_requested_modalities(tiny_bundle):
    """x|_m 은 m 의 토큰만 남기고 레이블 유지"""
    x = tiny_bundle.train.example(0)
    m = tiny_bundle.universe.parse("m0+m2")
    restricted = restrict(x, m)
    assert set(restricted.tokens) == {"m0", "m2"}
    assert restricted.label == x.label
    with pytest.raises(MissingModalityError, match="m1"):
        restrict(restricted, tiny_bundle.universe.parse("m1"))


def test_split_restrict(tiny_bundle):
    """D|_m"""
    restricted = tiny_bundle.eval.restrict(tiny_bundle.universe.parse("m1"))
    assert restricted.modalities.label == "m1"
    assert len(restricted) == 40


def test_mask_count_rounds_up():
    """정확히 ⌈ratio·T⌉ 개, 전부 가려질 수도 있음"""
    assert mask_count(8, 0.8) == 7
    assert mask_count(10, 0.9) == 9
    assert mask_count(8, 0.5) == 4
    assert mask_count(4, 0.9) == 4
    assert mask_count(8, 0.9) == 8
    assert mask_count(5, 0.0) == 0
    with pytest.raises(ConfigError):
        mask_count(5, 1.0)


def test_mask_batch_partitions_tokens():
    """가린 인덱스와 보이는 인덱스는 겹치지 않고 전체를 덮음"""
    tokens = np.arange(2 * 8 * 3, dtype=np.float32).reshape(2, 8, 3)
    view = mask_batch(tokens, 0.75, np.random.default_rng(0))
    assert view.masked_index.shape == (2, 6)
    assert view.visible.shape == (2, 2, 3)
    for row in range(2):
        combined = np.concatenate([view.masked_index[row], view.visible_index[row]])
        assert sorted(combined.tolist()) == list(range(8))
        np.testing.assert_array_equal(view.visible[row], tokens[row][view.visible_index[row]])


def test_mask_view_is_seeded():
    """같은 seed 는 같은 마스크"""
    x = np.random.default_rng(1).standard_normal((8, 4))
    _, first = mask_view(x, 0.5, seed=5)
    _, second = mask_view(x, 0.5, seed=5)
    np.testing.assert_array_equal(first, second)


def test_bundle_save_load_preserves_hash(tiny_bundle, tmp_path):
    """save → load 는 같은 해시"""
    digest = save_bundle(tiny_bundle, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle")
    assert loaded.content_hash() == digest
    assert (tmp_path / "bundle" / "bundle.sha1").read_text(encoding="utf-8").strip() == digest
    assert loaded.config == tiny_bundle.config


def test_tampered_bundle_detected(tiny_bundle, tmp_path):
    """배열이 바뀌면 해시 불일치 오류"""
    save_bundle(tiny_bundle, tmp_path / "bundle")
    labels = np.load(tmp_path / "bundle" / "train" / "labels.npy")
    np.save(tmp_path / "bundle" / "train" / "labels.npy", (labels + 1) % 3)
    with pytest.raises(IngestionError, match="해시"):
        load_bundle(tmp_path / "bundle")


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_export_then_ingest_preserves_pooled_features(tiny_bundle, tmp_path, fmt):
    """내보낸 pooled feature 를 다시 적재하면 같은 값"""
    manifest_path = export_features(tiny_bundle, tmp_path / fmt, fmt)
    ingested = ingest_features(tmp_path / fmt, manifest_path)
    assert ingested.universe == tiny_bundle.universe
    assert len(ingested.train) == 48
    np.testing.assert_array_equal(ingested.train.labels, tiny_bundle.train.labels)
    np.testing.assert_allclose(
        ingested.eval.pooled("m1"), tiny_bundle.eval.pooled("m1"), rtol=0, atol=1e-6
    )


def _manifest():
    return FeatureManifest(modalities=(("audio", 2), ("video", 3)), task="single-label", num_classes=4)


def test_csv_missing_modality_column_names_row(tmp_path):
    """feature 열이 빠진 행은 행 번호와 함께 오류"""
    path = tmp_path / "train.csv"
    path.write_text(
        "example_id,label,audio_0,audio_1,video_0,video_1,video_2\n"
        "0,1,0.1,0.2,0.3,0.4,0.5\n"
        "1,2,0.1,0.2,,,\n",
        encoding="utf-8",
    )
    with pytest.raises(IngestionError, match=r"row 2.*video"):
        ingest_features(path, _manifest())


def test_csv_dimension_mismatch_rejected(tmp_path):
    """header 차원이 manifest 와 다르면 오류"""
    path = tmp_path / "train.csv"
    path.write_text("example_id,label,audio_0,video_0,video_1,video_2\n0,1,0.1,0.3,0.4,0.5\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="차원"):
        ingest_features(path, _manifest())


def test_label_out_of_range_rejected(tmp_path):
    """클래스 범위 밖 레이블은 오류"""
    path = tmp_path / "train.csv"
    path.write_text(
        "example_id,label,audio_0,audio_1,video_0,video_1,video_2\n0,9,0.1,0.2,0.3,0.4,0.5\n", encoding="utf-8"
    )
    with pytest.raises(IngestionError, match="row 1"):
        ingest_features(path, _manifest())


def test_binary_truncation_detected(tmp_path):
    """잘린 MMFD 레코드는 오류"""
    path = tmp_path / "train.mmfd"
    header = b"MMFD" + struct.pack("<II", 1, 2)
    header += struct.pack("<H", 5) + b"audio" + struct.pack("<I", 2)
    header += struct.pack("<H", 5) + b"video" + struct.pack("<I", 3)
    record = struct.pack("<IH", 0, 1) + b"1" + np.zeros(5, dtype="<f4").tobytes()
    path.write_bytes(header + struct.pack("<I", len(record)) + record[:-3])
    with pytest.raises(IngestionError, match="잘렸습니다"):
        ingest_features(path, _manifest())


def test_manifest_requires_fields(tmp_path):
    """manifest 필수 항목 누락 시 오류"""
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"task": "single-label"}), encoding="utf-8")
    with pytest.raises(IngestionError, match="manifest"):
        ingest_features(tmp_path, path)


def test_single_split_file_is_read_as_train(tmp_path, tiny_bundle):
    """파일 하나를 주면 train split 으로 적재"""
    export_split(tiny_bundle.train, tmp_path / "train.csv", tiny_bundle.task)
    manifest = FeatureManifest(
        modalities=tuple((name, 5) for name in ("m0", "m1", "m2")), task=tiny_bundle.task, num_classes=3
    )
    bundle = ingest_features(tmp_path / "train.csv", manifest)
    assert len(bundle.train) == 48
    assert len(bundle.eval) == 0


def _same_example(a, b):
    return set(a.tokens) == set(b.tokens) and all(np.array_equal(a.tokens[n], b.tokens[n]) for n in a.tokens) and a.label == b.label


def test_restrict_composes_and_full_set_is_identity(tiny_bundle):
    """restrict(restrict(x, {m0, m1}), {m0}) = restrict(x, {m0}), restrict(x, 전체) = x"""
    universe = tiny_bundle.universe
    for index in range(5):
        x = tiny_bundle.train.example(index)
        twice = restrict(restrict(x, universe.parse("m0+m1")), universe.parse("m0"))
        assert _same_example(twice, restrict(x, universe.parse("m0")))
        assert _same_example(restrict(x, x.modalities), x)


def test_mask_view_masks_every_token_at_high_ratio():
    """T=8, ratio=0.9 → 8 행 모두 가림, 보이는 토큰 없음"""
    visible, masked = mask_view(np.zeros((8, 4)), 0.9, seed=0)
    assert masked.tolist() == list(range(8))
    assert visible.shape == (0, 4)


def test_mask_view_differs_across_seeds():
    """서로 다른 seed 쌍 100 개 중 99 개 이상에서 가린 인덱스가 다름"""
    x = np.zeros((64, 2))
    distinct = 0
    for pair in range(100):
        _, first = mask_view(x, 0.5, seed=2 * pair)
        _, second = mask_view(x, 0.5, seed=2 * pair + 1)
        assert len(first) == 32
        distinct += not np.array_equal(first, second)
    assert distinct >= 99


def test_multi_label_positive_rate():
    """C=5 multi-label: 10k 예제에서 양성 비율이 (0, 1) 인 클래스가 있음"""
    bundle = generate(tiny_gen_config(task=TASK_MULTI_LABEL, num_classes=5, train_size=10000, pretrain_size=16, self_distill_size=4))
    labels = bundle.train.labels
    assert labels.shape == (10000, 5)
    assert set(np.unique(labels).tolist()) <= {0, 1}
    rates = labels.mean(axis=0)
    assert any(0.0 < rate < 1.0 for rate in rates)


def _pooled_softmax_accuracy(bundle, names):
    """pooled 토큰 위 softmax 회귀의 eval 정확도"""
    train_x = np.concatenate([bundle.train.pooled(n).astype(np.float64) for n in names], axis=1)
    eval_x = np.concatenate([bundle.eval.pooled(n).astype(np.float64) for n in names], axis=1)
    mean, std = train_x.mean(axis=0), train_x.std(axis=0) + 1e-8
    train_x, eval_x = (train_x - mean) / std, (eval_x - mean) / std
    params = {"w": np.zeros((train_x.shape[1], bundle.num_classes)), "b": np.zeros(bundle.num_classes)}
    state = OptimizerState(config=AdamWConfig(lr=0.05, weight_decay=0.0))
    features = nx.constant(train_x, "float64")
    for _ in range(300):
        graph = nx.Graph("float64")
        p = graph.bind(params)
        loss = task_loss(nx.add(nx.matmul(features, p["w"]), p["b"]), bundle.train.labels, TASK_SINGLE_LABEL)
        params = adamw_step(state, params, nx.backward(graph, loss))
    return accuracy(eval_x @ params["w"] + params["b"], bundle.eval.labels)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noiseless_single_modality_is_nearly_as_informative(seed):
    """σ=0, 비선형 없음: 모달리티 하나의 linear probe 가 전체 모달리티의 90% 초과"""
    config = tiny_gen_config(
        noise=(0.0, 0.0, 0.0), nonlinear=False, train_size=400, eval_size=400, pretrain_size=16, self_distill_size=4, seed=seed
    )
    bundle = generate(config)
    full = _pooled_softmax_accuracy(bundle, ("m0", "m1", "m2"))
    for name in ("m0", "m1", "m2"):
        assert _pooled_softmax_accuracy(bundle, (name,)) > 0.9 * full
