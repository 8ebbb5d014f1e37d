"""Performance/Robustness 지표: stratum, M_T 별 P/R, 집계, best-eval, 쌍 나열

stratum 이름
  overall       모든 비공집합 M_E
  missing       M_E ⊂ M_T (진부분집합)
  added         M_T ⊂ M_E (진부분집합)
  transfer      M_T ∩ M_E = ∅
  same          M_E = M_T
  partial       교집합은 있으나 어느 쪽도 다른 쪽의 부분집합이 아님
  overlap-<k>   |M_T ∩ M_E| = k
  matched-<k>   M_E = M_T 이고 |M_T| = k
빈 stratum 은 값이 없음(None)이며 0 으로 취급하지 않는다.
"""
from __future__ import annotations

import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, MetricsError
from .modalities import ModalitySet, ModalityUniverse
from .schema import MetricsReport, StratumAggregate, StratumScore, Warning
from .scorematrix import ScoreMatrix
from .validator import add_warning

logger = logging.getLogger(__name__)

BASE_STRATA = ("overall", "missing", "added", "transfer", "same", "partial")
TABLE_STRATA = ("overall", "missing", "added", "transfer")
PARTITION_STRATA = ("missing", "added", "transfer", "same", "partial")
_INDEXED = re.compile(r"^(overlap|matched)-(\d+)$")


def default_strata(universe: ModalityUniverse) -> List[str]:
    n = len(universe)
    return (
        list(TABLE_STRATA)
        + [f"overlap-{k}" for k in range(n + 1)]
        + [f"matched-{k}" for k in range(1, n + 1)]
    )


def _check_stratum(stratum: str) -> None:
    if stratum not in BASE_STRATA and not _INDEXED.match(stratum):
        raise ConfigError(f"알 수 없는 stratum: {stratum!r} ({', '.join(BASE_STRATA)}, overlap-k, matched-k)")


def in_stratum(train_set: ModalitySet, eval_set: ModalitySet, stratum: str) -> bool:
    """(M_T, M_E) 쌍이 stratum 에 속하는지"""
    _check_stratum(stratum)
    if stratum == "overall":
        return True
    if stratum == "missing":
        return eval_set.is_strict_subset(train_set)
    if stratum == "added":
        return train_set.is_strict_subset(eval_set)
    if stratum == "transfer":
        return train_set.isdisjoint(eval_set)
    if stratum == "same":
        return train_set == eval_set
    if stratum == "partial":
        common = train_set & eval_set
        return bool(common) and not train_set.issubset(eval_set) and not eval_set.issubset(train_set)
    kind, k = _INDEXED.match(stratum).groups()
    if kind == "overlap":
        return len(train_set & eval_set) == int(k)
    return train_set == eval_set and len(train_set) == int(k)


def candidates(universe: ModalityUniverse, train_set: ModalitySet, stratum: str) -> List[ModalitySet]:
    """M_T 에 대한 stratum 의 M_E 후보 (크기 → 라벨 순)"""
    train_set.require_nonempty("M_T")
    return [eval_set for eval_set in universe.subsets() if in_stratum(train_set, eval_set, stratum)]


def enumerate_pairs(universe: ModalityUniverse, stratum: str) -> List[Tuple[ModalitySet, ModalitySet]]:
    """stratum 의 모든 (M_T, M_E) 쌍"""
    _check_stratum(stratum)
    return [
        (train_set, eval_set)
        for train_set in universe.subsets()
        for eval_set in candidates(universe, train_set, stratum)
    ]


def _stratum_scores(
    matrix: ScoreMatrix,
    train_set: ModalitySet,
    stratum: str,
    warnings: Optional[List[Warning]],
) -> Optional[List[float]]:
    eval_sets = candidates(matrix.universe, train_set, stratum)
    if not eval_sets:
        return None
    scores = [matrix.get(train_set, eval_set) for eval_set in eval_sets]
    if any(score is None for score in scores):
        if warnings is not None:
            missing = matrix.missing_cells([train_set], eval_sets)
            add_warning(warnings, "matrix_incomplete", {"stratum": stratum, "missing": ",".join(missing)})
        return None
    return scores


def performance(
    matrix: ScoreMatrix, train_set: ModalitySet, stratum: str = "overall", warnings: Optional[List[Warning]] = None
) -> Optional[float]:
    """P(M_T): stratum 내 M_E 점수 평균"""
    scores = _stratum_scores(matrix, train_set, stratum, warnings)
    return None if scores is None else float(np.mean(scores))


def robustness(
    matrix: ScoreMatrix, train_set: ModalitySet, stratum: str = "overall", warnings: Optional[List[Warning]] = None
) -> Optional[float]:
    """R(M_T): stratum 내 최악 점수"""
    scores = _stratum_scores(matrix, train_set, stratum, warnings)
    return None if scores is None else float(min(scores))


def stratum_score(
    matrix: ScoreMatrix, train_set: ModalitySet, stratum: str, warnings: Optional[List[Warning]] = None
) -> Optional[StratumScore]:
    scores = _stratum_scores(matrix, train_set, stratum, warnings)
    if scores is None:
        return None
    return StratumScore(performance=float(np.mean(scores)), robustness=float(min(scores)))


def aggregate(
    matrix: ScoreMatrix,
    stratum: str = "overall",
    warnings: Optional[List[Warning]] = None,
    train_sets: Optional[Sequence[ModalitySet]] = None,
) -> Optional[StratumAggregate]:
    """stratum 이 비어 있지 않은 M_T 에 대한 (P, R, P_best, R_best)"""
    train_sets = matrix.train_sets() if train_sets is None else list(train_sets)
    rows = [stratum_score(matrix, train_set, stratum, warnings) for train_set in train_sets]
    rows = [row for row in rows if row is not None]
    if not rows:
        if warnings is not None:
            add_warning(warnings, "empty_stratum", {"stratum": stratum})
        return None
    ps = [row.performance for row in rows]
    rs = [row.robustness for row in rows]
    return StratumAggregate(
        performance=float(np.mean(ps)),
        robustness=float(np.mean(rs)),
        best_performance=float(max(ps)),
        best_robustness=float(max(rs)),
        train_sets=len(rows),
    )


def best_eval_sets(matrix: ScoreMatrix) -> Dict[str, str]:
    """M_T → argmax_{M_E} p(M_E; M_T). 동점이면 작은 집합, 그다음 라벨 순"""
    result: Dict[str, str] = {}
    for train_set in matrix.train_sets():
        best: Optional[Tuple[float, ModalitySet]] = None
        for eval_set in matrix.eval_sets(train_set):
            score = matrix.get(train_set, eval_set)
            if best is None or score > best[0]:
                best = (score, eval_set)
        if best is None:
            raise MetricsError(f"best_eval_sets: M_T {train_set.label} 에 점수가 없습니다")
        result[train_set.label] = best[1].label
    return result


def build_report(
    matrix: ScoreMatrix,
    method: str = "default",
    strata: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """stratum 별 M_T 행과 집계, best-eval 표를 담은 보고서"""
    if len(matrix) == 0:
        raise MetricsError(f"{method}: 빈 점수 행렬")
    strata = default_strata(matrix.universe) if strata is None else list(strata)
    report = MetricsReport(method=method, kind=matrix.kind, universe=matrix.universe.names)
    train_sets = matrix.train_sets()
    for stratum in strata:
        _check_stratum(stratum)
        report.per_train[stratum] = {
            train_set.label: stratum_score(matrix, train_set, stratum, report.warnings) for train_set in train_sets
        }
        report.aggregates[stratum] = aggregate(matrix, stratum, report.warnings, train_sets)
    report.best_eval = best_eval_sets(matrix)
    logger.info("지표 계산 완료: %s (M_T %d개, stratum %d개)", method, len(train_sets), len(strata))
    return report
