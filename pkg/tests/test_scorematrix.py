import pytest
from conftest import FIXTURES_DIR

from modrobe.errors import ConfigError, MetricsError
from modrobe.modalities import ModalityUniverse
from modrobe.scorematrix import ScoreMatrix, format_score_csv, parse_score_csv, read_score_csv, write_score_csv

SIMPLE = """# kind: accuracy
train_set,eval_set,score
audio,audio,0.5
audio,video,0.25
video,audio+video,0.75
"""


def test_parse_simple_csv():
    """header, kind 지시문, universe 추론"""
    matrices = parse_score_csv(SIMPLE)
    matrix = matrices["default"]
    assert matrix.kind == "accuracy"
    assert matrix.universe.names == ("audio", "video")
    u = matrix.universe
    assert matrix.get(u.parse("audio"), u.parse("video")) == 0.25
    assert matrix.get(u.parse("video"), u.parse("video")) is None
    assert [m.label for m in matrix.train_sets()] == ["audio", "video"]


def test_method_column_groups_matrices():
    """method 열이 있으면 method 별 행렬"""
    text = "method,train_set,eval_set,score\nft,a,a,0.1\nprobe,a,a,0.2\nft,a,b,0.3\n"
    matrices = parse_score_csv(text)
    assert sorted(matrices) == ["ft", "probe"]
    assert len(matrices["ft"]) == 2


@pytest.mark.parametrize(
    "text,match",
    [
        ("train_set,eval_set,score\naudio,audio,high\n", "line 2"),
        ("train_set,eval_set,score\naudio,audio,0.5\naudio,audio,0.6\n", "line 3.*중복"),
        ("train_set,eval_set,score\naudio,audio,1.5\n", "line 2"),
        ("train_set,eval_set,score\naudio,audio\n", "line 2"),
        ("train,eval,score\n", "line 1"),
        ("# only a comment\n", "header"),
    ],
)
def test_malformed_csv_names_line(text, match):
    """잘못된 행은 줄 번호와 함께 MetricsError"""
    with pytest.raises(MetricsError, match=match):
        parse_score_csv(text)


def test_unknown_modality_with_fixed_universe():
    """고정 universe 밖 모달리티는 줄 번호와 함께 거부"""
    universe = ModalityUniverse(("audio", "video"))
    with pytest.raises(MetricsError, match="line 2"):
        parse_score_csv("train_set,eval_set,score\naudio,depth,0.5\n", universe=universe)


def test_kind_override_and_unknown_kind():
    """명시한 kind 가 지시문보다 우선, 알 수 없는 kind 는 오류"""
    assert parse_score_csv(SIMPLE, kind="map")["default"].kind == "map"
    with pytest.raises(MetricsError, match="점수 종류"):
        parse_score_csv(SIMPLE.replace("accuracy", "f1"))
    with pytest.raises(ConfigError):
        ScoreMatrix(ModalityUniverse(("a",)), kind="f1")


def test_format_then_parse_keeps_cells(tmp_path):
    """쓰고 다시 읽으면 같은 셀, 파일 이름이 method"""
    matrix = parse_score_csv(SIMPLE)["default"]
    path = write_score_csv(tmp_path / "probe.csv", matrix)
    loaded = read_score_csv(path)["probe"]
    assert loaded.kind == "accuracy"
    assert sorted(loaded.cells.items()) == sorted(matrix.cells.items())


def test_format_rejects_mixed_kinds():
    """한 파일에 서로 다른 점수 종류는 불가"""
    universe = ModalityUniverse(("a",))
    with pytest.raises(MetricsError):
        format_score_csv({"x": ScoreMatrix(universe, "map"), "y": ScoreMatrix(universe, "accuracy")})


def test_missing_file(tmp_path):
    """없는 파일은 MetricsError"""
    with pytest.raises(MetricsError, match="찾을 수 없습니다"):
        read_score_csv(tmp_path / "nope.csv")


def test_missing_cells_listing():
    """빈 셀 목록은 M_T→M_E 라벨"""
    matrix = parse_score_csv(SIMPLE)["default"]
    u = matrix.universe
    assert matrix.missing_cells([u.parse("video")], [u.parse("audio"), u.parse("audio+video")]) == ["video→audio"]


@pytest.mark.parametrize("name", ["audioset.csv", "kinetics.csv", "imagenet_captions.csv"])
def test_shipped_fixtures_declare_provenance_and_parse(name):
    """동봉된 fixture 는 출처 주석을 달고 있고 주석이 파싱을 방해하지 않는다"""
    path = FIXTURES_DIR / name
    header = [line for line in path.read_text(encoding="utf-8").splitlines() if line.startswith("#")]
    assert any(line.startswith("# provenance: ") for line in header)
    matrices = read_score_csv(path)
    assert matrices
    assert all(len(matrix.universe.names) >= 2 for matrix in matrices.values())
