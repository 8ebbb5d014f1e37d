from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, List, Tuple

from .errors import ConfigError, MissingModalityError

SET_SEPARATOR = "+"


@dataclass(frozen=True)
class ModalityUniverse:
    """고정된 모달리티 이름/인덱스 집합 M"""
    names: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise ConfigError("modalities: 최소 1개 이상의 모달리티가 필요합니다")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"modalities: 중복된 이름이 있습니다 {list(self.names)}")
        for name in self.names:
            if not name or SET_SEPARATOR in name or "," in name:
                raise ConfigError(f"modalities: 사용할 수 없는 이름 {name!r}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingModalityError(f"알 수 없는 모달리티: {name} (universe={list(self.names)})")

    def full(self) -> "ModalitySet":
        return ModalitySet(self, (1 << len(self.names)) - 1)

    def of(self, names: Iterable[str]) -> "ModalitySet":
        mask = 0
        for name in names:
            mask |= 1 << self.index(name)
        return ModalitySet(self, mask)

    def parse(self, label: str) -> "ModalitySet":
        """`audio+video` 형태의 라벨을 집합으로 변환"""
        parts = [part.strip() for part in label.split(SET_SEPARATOR)]
        if not label.strip() or any(not part for part in parts):
            raise MissingModalityError(f"빈 모달리티 집합 라벨: {label!r}")
        return self.of(parts)

    def subsets(self) -> List["ModalitySet"]:
        """공집합을 제외한 모든 부분집합 (크기 → 라벨 순)"""
        result = [
            self.of(chosen)
            for size in range(1, len(self.names) + 1)
            for chosen in combinations(self.names, size)
        ]
        return sorted(result, key=ModalitySet.sort_key)


@dataclass(frozen=True)
class ModalitySet:
    """모달리티 universe 위의 비트마스크 부분집합"""
    universe: ModalityUniverse
    mask: int

    def __post_init__(self) -> None:
        if self.mask < 0 or self.mask >= (1 << len(self.universe)):
            raise ConfigError(f"모달리티 마스크 범위 초과: {self.mask}")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for i, name in enumerate(self.universe.names) if self.mask >> i & 1)

    @property
    def label(self) -> str:
        return SET_SEPARATOR.join(sorted(self.names))

    def sort_key(self) -> Tuple[int, str]:
        return (len(self), self.label)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and name in self.names

    def __bool__(self) -> bool:
        return self.mask != 0

    def _check(self, other: "ModalitySet") -> None:
        if self.universe != other.universe:
            raise ConfigError(
                f"서로 다른 universe 비교: {list(self.universe.names)} vs {list(other.universe.names)}"
            )

    def issubset(self, other: "ModalitySet") -> bool:
        self._check(other)
        return self.mask & ~other.mask == 0

    def issuperset(self, other: "ModalitySet") -> bool:
        return other.issubset(self)

    def is_strict_subset(self, other: "ModalitySet") -> bool:
        return self.issubset(other) and self.mask != other.mask

    def isdisjoint(self, other: "ModalitySet") -> bool:
        self._check(other)
        return self.mask & other.mask == 0

    def __and__(self, other: "ModalitySet") -> "ModalitySet":
        self._check(other)
        return ModalitySet(self.universe, self.mask & other.mask)

    def __or__(self, other: "ModalitySet") -> "ModalitySet":
        self._check(other)
        return ModalitySet(self.universe, self.mask | other.mask)

    def __sub__(self, other: "ModalitySet") -> "ModalitySet":
        self._check(other)
        return ModalitySet(self.universe, self.mask & ~other.mask)

    def __str__(self) -> str:
        return self.label or "{}"

    def require_nonempty(self, what: str = "modality set") -> "ModalitySet":
        if not self:
            raise MissingModalityError(f"{what}: 빈 모달리티 집합은 허용되지 않습니다")
        return self


def universe_from_labels(labels: Iterable[str]) -> ModalityUniverse:
    """라벨 목록에 등장한 이름들로 universe 구성 (알파벳 순)"""
    names = set()
    for label in labels:
        names.update(part.strip() for part in label.split(SET_SEPARATOR) if part.strip())
    return ModalityUniverse(tuple(sorted(names)))
