import pytest

from conftest import FIXTURES_DIR
from modrobe.errors import ConfigError
from modrobe.modalities import ModalityUniverse
from modrobe.robustness import (
    PARTITION_STRATA,
    TABLE_STRATA,
    aggregate,
    best_eval_sets,
    build_report,
    candidates,
    enumerate_pairs,
    in_stratum,
    performance,
    robustness,
)
from modrobe.scorematrix import ScoreMatrix, read_score_csv
from modrobe.validator import has_warning

AVT = ModalityUniverse(("audio", "text", "video"))
TOLERANCE = 0.1

# P_best, R_best, P, R | missing P, R | added P, R | transfer P, R (%)
AUDIOSET_ROWS = {
    "contrastive-finetune": (36.49, 20.80, 29.89, 13.84, 31.16, 23.57, 38.06, 37.43, 15.06, 13.03),
    "contrastive-masd": (37.39, 24.10, 33.55, 21.93, 30.55, 22.43, 40.40, 39.73, 26.08, 24.10),
    "contrastive-masd-wiseft": (37.33, 24.80, 33.91, 22.81, 31.32, 24.15, 40.21, 39.47, 26.28, 24.28),
    "contrastive-wiseft": (37.33, 22.3, 29.54, 13.49, 31.37, 24.50, 37.61, 36.93, 13.97, 12.02),
    "contrastive-probe": (33.67, 22.1, 28.02, 15.04, 29.57, 24.00, 34.16, 33.50, 16.02, 13.87),
    "contrastive-finetune-2m": (37.00, 21.8, 32.65, 18.19, 30.47, 23.52, 41.28, 40.32, 20.33, 18.18),
    "mae-probe": (23.43, 5.5, 14.01, 1.81, 17.20, 7.70, 17.85, 16.97, 1.54, 1.20),
    "mae-finetune": (28.89, 3.8, 20.03, 1.29, 21.38, 10.05, 30.75, 30.30, 1.07, 0.87),
    "mae-masd": (30.64, 15.1, 26.64, 9.51, 21.63, 10.35, 35.39, 34.42, 18.52, 15.07),
}

# P_best, R_best, P, R | missing P, R | added P | transfer P (%)
KINETICS_ROWS = {
    "contrastive-probe": (42.2, 21.7, 34.7, 17.0, 34.4, 18.5, 36.8, 16.2),
    "contrastive-finetune": (45.5, 11.1, 36.2, 6.1, 29.1, 11.1, 47.8, 3.6),
}

ORDER = ("video", "audio", "text", "audio+video", "audio+text", "text+video")
ALL = "audio+text+video"
BEST_EVAL = {
    "contrastive-finetune": (ALL, "audio", ALL, ALL, "audio+text", ALL),
    "contrastive-masd": (ALL,) * 6,
    "contrastive-masd-wiseft": (ALL,) * 6,
    "mae-masd": (ALL,) * 6,
    "mae-finetune": ("text+video", "audio+text", "text", ALL, "audio+text", "text+video"),
}


@pytest.fixture(scope="module")
def audioset():
    return read_score_csv(FIXTURES_DIR / "audioset.csv")


@pytest.fixture(scope="module")
def kinetics():
    return read_score_csv(FIXTURES_DIR / "kinetics.csv")


def _row(matrix):
    values = []
    for stratum in TABLE_STRATA:
        agg = aggregate(matrix, stratum)
        if stratum == "overall":
            values += [agg.best_performance, agg.best_robustness]
        values += [agg.performance, agg.robustness]
    return [100.0 * value for value in values]


@pytest.mark.parametrize("method", sorted(AUDIOSET_ROWS))
def test_audioset_aggregates_reproduce_reference(audioset, method):
    """AudioSet 점수 행렬에서 집계 지표 재현 (±0.1)"""
    assert audioset[method].kind == "map"
    assert _row(audioset[method]) == pytest.approx(list(AUDIOSET_ROWS[method]), abs=TOLERANCE)


@pytest.mark.parametrize("method", sorted(KINETICS_ROWS))
def test_kinetics_aggregates_reproduce_reference(kinetics, method):
    """Kinetics 점수 행렬에서 집계 지표 재현 (±0.1, |M| = 2 이면 Added/Transfer 는 P = R)"""
    row = _row(kinetics[method])
    expected = KINETICS_ROWS[method]
    collapsed = row[:6] + [row[6], row[8]]
    assert collapsed == pytest.approx(list(expected), abs=TOLERANCE)


@pytest.mark.parametrize("fixture", ["kinetics.csv", "imagenet_captions.csv"])
def test_two_modalities_added_and_transfer_have_p_equal_r(fixture):
    """|M| = 2 이면 added/transfer stratum 은 M_E 후보가 하나라 P = R"""
    for matrix in read_score_csv(FIXTURES_DIR / fixture).values():
        assert len(matrix.universe) == 2
        for stratum in ("added", "transfer"):
            agg = aggregate(matrix, stratum)
            assert agg.performance == agg.robustness


@pytest.mark.parametrize("method", sorted(BEST_EVAL))
def test_best_eval_sets(audioset, method):
    """M_T 별 최고 점수 M_E"""
    best = best_eval_sets(audioset[method])
    assert tuple(best[label] for label in ORDER) == BEST_EVAL[method]


def test_strata_partition_all_pairs():
    """모든 (M_T, M_E) 쌍은 missing/added/transfer/same/partial 중 정확히 하나"""
    for train_set in AVT.subsets():
        for eval_set in AVT.subsets():
            hits = [s for s in PARTITION_STRATA if in_stratum(train_set, eval_set, s)]
            assert len(hits) == 1, (train_set.label, eval_set.label, hits)
            overlaps = [k for k in range(4) if in_stratum(train_set, eval_set, f"overlap-{k}")]
            assert overlaps == [len(train_set & eval_set)]


def test_enumerate_pairs_counts():
    """|M| = 3: missing 12, added 12, transfer 12, same 7, partial 6"""
    counts = {stratum: len(enumerate_pairs(AVT, stratum)) for stratum in PARTITION_STRATA}
    assert counts == {"missing": 12, "added": 12, "transfer": 12, "same": 7, "partial": 6}
    assert len(enumerate_pairs(AVT, "overall")) == 49
    assert len(enumerate_pairs(AVT, "matched-2")) == 3


def test_candidates_order():
    """M_E 후보는 크기 → 라벨 순"""
    labels = [m.label for m in candidates(AVT, AVT.parse("audio"), "added")]
    assert labels == ["audio+text", "audio+video", "audio+text+video"]


def test_unknown_stratum_rejected():
    """알 수 없는 stratum 이름은 ConfigError"""
    with pytest.raises(ConfigError, match="stratum"):
        in_stratum(AVT.parse("audio"), AVT.parse("audio"), "sideways")


def _full_matrix(score=0.5):
    matrix = ScoreMatrix(AVT, "map")
    for train_set in AVT.subsets():
        for eval_set in AVT.subsets():
            matrix.set(train_set, eval_set, score)
    return matrix


def test_empty_stratum_is_none_not_zero():
    """M_T = M 의 added stratum 은 비어 있어 값이 없음"""
    matrix = _full_matrix()
    assert performance(matrix, AVT.full(), "added") is None
    assert robustness(matrix, AVT.full(), "added") is None
    assert performance(matrix, AVT.parse("audio"), "added") == 0.5


def test_incomplete_matrix_warns():
    """빈 셀이 있으면 그 M_T 의 stratum 값은 없고 경고"""
    matrix = _full_matrix()
    del matrix.cells[(AVT.parse("audio").mask, AVT.parse("video").mask)]
    warnings = []
    assert performance(matrix, AVT.parse("audio"), "transfer", warnings) is None
    assert has_warning(warnings, "matrix_incomplete")
    assert performance(matrix, AVT.parse("audio"), "added", warnings) == 0.5


def test_build_report_default_strata(audioset):
    """기본 stratum 과 best-eval 을 담은 보고서"""
    report = build_report(audioset["contrastive-finetune"], "contrastive-finetune")
    assert set(TABLE_STRATA) <= set(report.aggregates)
    assert "overlap-0" in report.aggregates and "matched-3" in report.aggregates
    assert report.aggregates["overlap-0"].performance == report.aggregates["transfer"].performance
    assert report.best_eval["audio"] == "audio"
    assert report.per_train["overall"]["audio+text+video"].performance == pytest.approx(0.36486, abs=1e-5)
    assert report.to_dict()["method"] == "contrastive-finetune"
