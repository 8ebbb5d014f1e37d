from __future__ import annotations


class ModrobeError(Exception):
    """modrobe 도메인 예외의 기반 클래스"""


class ConfigError(ModrobeError):
    """설정 값 검증 실패"""


class ShapeError(ModrobeError):
    """커널 입력 shape 불일치"""


class NumericOverflowError(ModrobeError):
    """NaN/Inf 발생"""


class GraphError(ModrobeError):
    """계산 그래프 사용 오류"""


class MissingModalityError(ModrobeError):
    """요청한 모달리티가 예제에 없음"""


class IngestionError(ModrobeError):
    """외부 feature 파일 적재 실패"""


class CheckpointError(ModrobeError):
    """체크포인트 저장/로드/보간 실패"""


class MetricsError(ModrobeError):
    """점수 행렬 또는 지표 계산 실패"""


class TrainingError(ModrobeError):
    """학습 중단 (손실 발산 등)"""
