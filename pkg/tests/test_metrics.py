import numpy as np
import pytest

from modrobe.errors import MetricsError, ShapeError
from modrobe.metrics import accuracy, average_precision, evaluate, mean_average_precision, score_kind
from modrobe.validator import has_warning


def _brute_force_map(scores, labels):
    """정의대로 계산한 mAP: 점수 내림차순, 양성 위치의 precision@k 평균"""
    per_class = []
    n, c = labels.shape
    for column in range(c):
        if labels[:, column].sum() == 0:
            continue
        order = sorted(range(n), key=lambda i: -scores[i, column])
        hits, total = 0, 0.0
        for rank, index in enumerate(order, start=1):
            if labels[index, column]:
                hits += 1
                total += hits / rank
        per_class.append(total / hits)
    return sum(per_class) / len(per_class)


def test_map_matches_brute_force_oracle():
    """무작위 200개 인스턴스에서 mAP = 정의대로 계산한 값 (1e-12)"""
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        c = int(rng.integers(1, 11))
        scores = rng.standard_normal((n, c))
        labels = (rng.random((n, c)) < rng.uniform(0.05, 0.6)).astype(np.int64)
        labels[0, 0] = 1
        warnings = []
        assert mean_average_precision(scores, labels, warnings) == pytest.approx(
            _brute_force_map(scores, labels), abs=1e-12
        )


def test_average_precision_known_values():
    """완벽한 순위는 1, 양성이 2위와 4위면 (1/2 + 2/4)/2"""
    assert average_precision(np.array([0.9, 0.8, 0.1]), np.array([1, 1, 0])) == 1.0
    assert average_precision(np.array([0.9, 0.8, 0.7, 0.6]), np.array([0, 1, 0, 1])) == pytest.approx(0.5)


def test_classes_without_positives_are_excluded_with_warning():
    """양성 없는 클래스는 평균에서 빠지고 경고"""
    scores = np.array([[0.9, 0.1], [0.2, 0.8]])
    labels = np.array([[1, 0], [0, 0]])
    warnings = []
    assert mean_average_precision(scores, labels, warnings) == 1.0
    assert has_warning(warnings, "classes_without_positives")
    with pytest.raises(MetricsError):
        mean_average_precision(scores, np.zeros((2, 2)), [])


def test_map_shape_mismatch():
    """scores 와 labels shape 이 다르면 오류"""
    with pytest.raises(ShapeError):
        mean_average_precision(np.zeros((3, 2)), np.zeros((3, 3)))


def test_accuracy():
    """top-1 정확도, 동점은 앞 클래스"""
    logits = np.array([[0.1, 0.9], [0.5, 0.5], [2.0, -1.0]])
    assert accuracy(logits, np.array([1, 0, 1])) == pytest.approx(2 / 3)
    with pytest.raises(MetricsError):
        accuracy(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


def test_score_kind():
    """태스크 → 점수 종류"""
    assert score_kind("multi-label") == "map"
    assert score_kind("single-label") == "accuracy"


def test_evaluate_returns_fraction(probe_for, tiny_bundle):
    """평가 점수는 [0, 1]"""
    m = tiny_bundle.universe.parse("m0+m1")
    probe = probe_for(m)
    for label in ("m0", "m2", "m0+m1+m2"):
        score = evaluate(probe, tiny_bundle.eval, tiny_bundle.universe.parse(label))
        assert 0.0 <= score <= 1.0


def test_evaluate_requires_labels(probe_for, tiny_bundle):
    """레이블 없는 D_E 는 평가 불가"""
    m = tiny_bundle.universe.parse("m0")
    with pytest.raises(MetricsError, match="레이블"):
        evaluate(probe_for(m), tiny_bundle.pretrain, m)


def test_random_head_accuracy_is_chance():
    """무작위 head, 균형 잡힌 C 클래스 → 정확도 ≈ 1/C (±3σ 이항)"""
    rng = np.random.default_rng(21)
    n, classes = 4000, 4
    features = rng.standard_normal((n, 6))
    head = rng.standard_normal((6, classes))
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    value = accuracy(features @ head, labels)
    sigma = (0.25 * 0.75 / n) ** 0.5
    assert abs(value - 1 / classes) < 3 * sigma
