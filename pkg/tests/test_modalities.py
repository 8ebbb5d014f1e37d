import pytest

from modrobe.errors import ConfigError, MissingModalityError
from modrobe.modalities import ModalitySet, ModalityUniverse, universe_from_labels

AVT = ModalityUniverse(("audio", "video", "text"))


def test_subsets_enumerate_all_nonempty_in_size_then_label_order():
    """비공집합 2^n − 1 개를 크기 → 라벨 순으로 나열"""
    labels = [m.label for m in AVT.subsets()]
    assert labels == [
        "audio",
        "text",
        "video",
        "audio+text",
        "audio+video",
        "text+video",
        "audio+text+video",
    ]


def test_label_is_sorted_and_parse_round_trips():
    """라벨은 이름 정렬 후 + 연결, parse 는 순서 무관"""
    m = AVT.parse("video+audio")
    assert m.label == "audio+video"
    assert AVT.parse(m.label) == m


def test_set_operations():
    """교집합/합집합/차집합/부분집합 관계"""
    av = AVT.parse("audio+video")
    vt = AVT.parse("text+video")
    assert (av & vt).label == "video"
    assert (av | vt) == AVT.full()
    assert (av - vt).label == "audio"
    assert AVT.parse("audio").is_strict_subset(av)
    assert not av.is_strict_subset(av)
    assert AVT.parse("text").isdisjoint(av)


def test_unknown_modality_rejected():
    """universe 밖 이름은 MissingModalityError"""
    with pytest.raises(MissingModalityError, match="depth"):
        AVT.parse("audio+depth")


def test_empty_label_rejected():
    """빈 라벨은 거부"""
    with pytest.raises(MissingModalityError):
        AVT.parse("")


def test_require_nonempty():
    """빈 집합은 require_nonempty 에서 오류"""
    with pytest.raises(MissingModalityError, match="M_T"):
        ModalitySet(AVT, 0).require_nonempty("M_T")


def test_universe_validation():
    """중복/빈/구분자 포함 이름은 ConfigError"""
    with pytest.raises(ConfigError):
        ModalityUniverse(("a", "a"))
    with pytest.raises(ConfigError):
        ModalityUniverse(())
    with pytest.raises(ConfigError):
        ModalityUniverse(("a+b",))


def test_cross_universe_comparison_rejected():
    """다른 universe 의 집합끼리 연산 불가"""
    other = ModalityUniverse(("audio", "video"))
    with pytest.raises(ConfigError, match="universe"):
        AVT.parse("audio") & other.parse("audio")


def test_universe_from_labels_is_alphabetical():
    """라벨 목록에서 universe 를 알파벳 순으로 구성"""
    universe = universe_from_labels(["video", "audio+text", "text+video"])
    assert universe.names == ("audio", "text", "video")
