"""점수 행렬 p(M_E; M_T) 와 CSV 입출력

CSV: header `train_set,eval_set,score` (선택적으로 맨 앞 `method` 열).
`#` 로 시작하는 줄은 주석이고 `# kind: map|accuracy` 는 점수 종류 지시문이다.
"""
from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple, Union

from .constants import SCORE_MAP
from .errors import ConfigError, MetricsError, MissingModalityError
from .modalities import ModalitySet, ModalityUniverse, universe_from_labels
from .validator import validate_score_kind

logger = logging.getLogger(__name__)

KIND_DIRECTIVE = re.compile(r"^#\s*kind\s*:\s*(\S+)\s*$")
BASE_HEADER = ["train_set", "eval_set", "score"]
DEFAULT_METHOD = "default"


@dataclass
class ScoreMatrix:
    """(M_T, M_E) → [0, 1] 점수. 빈 셀 허용"""
    universe: ModalityUniverse
    kind: str = SCORE_MAP
    cells: Dict[Tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_score_kind(self.kind)

    def _key(self, train_set: ModalitySet, eval_set: ModalitySet) -> Tuple[int, int]:
        for what, m in (("M_T", train_set), ("M_E", eval_set)):
            if m.universe != self.universe:
                raise MissingModalityError(f"{what} {m.label} 가 행렬 universe 와 다릅니다")
            m.require_nonempty(what)
        return (train_set.mask, eval_set.mask)

    def set(self, train_set: ModalitySet, eval_set: ModalitySet, score: float) -> None:
        score = float(score)
        if not 0.0 <= score <= 1.0:
            raise MetricsError(f"점수는 [0, 1] 범위여야 합니다: p({eval_set.label}; {train_set.label}) = {score}")
        self.cells[self._key(train_set, eval_set)] = score

    def get(self, train_set: ModalitySet, eval_set: ModalitySet) -> Optional[float]:
        return self.cells.get(self._key(train_set, eval_set))

    def __contains__(self, pair: Tuple[ModalitySet, ModalitySet]) -> bool:
        return self._key(*pair) in self.cells

    def __len__(self) -> int:
        return len(self.cells)

    def _set(self, mask: int) -> ModalitySet:
        return ModalitySet(self.universe, mask)

    def train_sets(self) -> List[ModalitySet]:
        """행렬에 등장하는 M_T (크기 → 라벨 순)"""
        return sorted({self._set(t) for t, _ in self.cells}, key=ModalitySet.sort_key)

    def eval_sets(self, train_set: Optional[ModalitySet] = None) -> List[ModalitySet]:
        masks = {e for t, e in self.cells if train_set is None or t == train_set.mask}
        return sorted((self._set(e) for e in masks), key=ModalitySet.sort_key)

    def items(self) -> Iterator[Tuple[ModalitySet, ModalitySet, float]]:
        """(M_T, M_E, 점수) 를 정렬 순서로"""
        keyed = sorted(
            self.cells.items(),
            key=lambda item: (self._set(item[0][0]).sort_key(), self._set(item[0][1]).sort_key()),
        )
        for (t, e), score in keyed:
            yield self._set(t), self._set(e), score

    def missing_cells(self, train_sets: Iterable[ModalitySet], eval_sets: Iterable[ModalitySet]) -> List[str]:
        eval_sets = list(eval_sets)
        return [
            f"{t.label}→{e.label}"
            for t in train_sets
            for e in eval_sets
            if (t.mask, e.mask) not in self.cells
        ]


def _parse_header(row: List[str], line: int, source: str) -> bool:
    cleaned = [cell.strip() for cell in row]
    if cleaned == BASE_HEADER:
        return False
    if cleaned == ["method"] + BASE_HEADER:
        return True
    raise MetricsError(f"{source} line {line}: header 는 [method,]train_set,eval_set,score 여야 합니다")


def parse_score_csv(
    text: str,
    source: str = "<csv>",
    universe: Optional[ModalityUniverse] = None,
    kind: Optional[str] = None,
    default_method: str = DEFAULT_METHOD,
) -> Dict[str, ScoreMatrix]:
    """CSV 문자열 → method 별 ScoreMatrix"""
    declared_kind: Optional[str] = None
    rows: List[Tuple[int, str, str, str, float]] = []
    has_method: Optional[bool] = None
    for line, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            match = KIND_DIRECTIVE.match(stripped)
            if match:
                declared_kind = match.group(1)
            continue
        row = next(csv.reader([raw]))
        if has_method is None:
            has_method = _parse_header(row, line, source)
            continue
        expected = 4 if has_method else 3
        if len(row) != expected:
            raise MetricsError(f"{source} line {line}: 열 {expected}개가 필요합니다 (got {len(row)})")
        method = row[0].strip() if has_method else default_method
        train_label, eval_label, raw_score = (cell.strip() for cell in row[-3:])
        if not method or not train_label or not eval_label:
            raise MetricsError(f"{source} line {line}: 빈 값이 있습니다")
        try:
            score = float(raw_score)
        except ValueError as exc:
            raise MetricsError(f"{source} line {line}: 점수 {raw_score!r} 가 숫자가 아닙니다") from exc
        rows.append((line, method, train_label, eval_label, score))
    if has_method is None:
        raise MetricsError(f"{source}: header 가 없습니다")

    try:
        kind = validate_score_kind(kind or declared_kind or SCORE_MAP)
    except ConfigError as exc:
        raise MetricsError(f"{source}: 알 수 없는 점수 종류 ({exc})") from exc
    if universe is None:
        try:
            universe = universe_from_labels(label for _, _, t, e, _ in rows for label in (t, e))
        except ConfigError as exc:
            raise MetricsError(f"{source}: 모달리티 이름 오류 ({exc})") from exc

    matrices: Dict[str, ScoreMatrix] = {}
    for line, method, train_label, eval_label, score in rows:
        matrix = matrices.setdefault(method, ScoreMatrix(universe, kind))
        try:
            train_set = universe.parse(train_label)
            eval_set = universe.parse(eval_label)
        except MissingModalityError as exc:
            raise MetricsError(f"{source} line {line}: {exc}") from exc
        if (train_set, eval_set) in matrix:
            raise MetricsError(f"{source} line {line}: 중복 셀 {method} {train_label}→{eval_label}")
        try:
            matrix.set(train_set, eval_set, score)
        except MetricsError as exc:
            raise MetricsError(f"{source} line {line}: {exc}") from exc
    logger.debug("점수 행렬 적재: %s (%s)", source, ", ".join(f"{m}={len(x)}" for m, x in matrices.items()))
    return matrices


def read_score_csv(
    path: Union[str, Path],
    universe: Optional[ModalityUniverse] = None,
    kind: Optional[str] = None,
) -> Dict[str, ScoreMatrix]:
    """method 열이 없으면 파일 이름(stem)을 method 로 쓴다"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise MetricsError(f"점수 행렬 파일을 찾을 수 없습니다: {path}") from exc
    except UnicodeDecodeError as exc:
        raise MetricsError(f"점수 행렬 파일이 UTF-8 이 아닙니다: {path}") from exc
    return parse_score_csv(text, str(path), universe, kind, default_method=path.stem)


def format_score_csv(matrices: Mapping[str, ScoreMatrix], with_method: Optional[bool] = None) -> str:
    if with_method is None:
        with_method = len(matrices) > 1
    kinds = {matrix.kind for matrix in matrices.values()}
    if len(kinds) > 1:
        raise MetricsError(f"한 파일에 서로 다른 점수 종류를 쓸 수 없습니다: {sorted(kinds)}")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if kinds:
        buffer.write(f"# kind: {kinds.pop()}\n")
    writer.writerow((["method"] if with_method else []) + BASE_HEADER)
    for method, matrix in matrices.items():
        for train_set, eval_set, score in matrix.items():
            row = [train_set.label, eval_set.label, f"{score:.6f}"]
            writer.writerow(([method] if with_method else []) + row)
    return buffer.getvalue()


def write_score_csv(
    path: Union[str, Path],
    matrices: Union[ScoreMatrix, Mapping[str, ScoreMatrix]],
    with_method: Optional[bool] = None,
) -> Path:
    path = Path(path)
    if isinstance(matrices, ScoreMatrix):
        matrices = {path.stem: matrices}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_score_csv(matrices, with_method), encoding="utf-8")
    return path
