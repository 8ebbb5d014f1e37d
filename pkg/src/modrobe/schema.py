from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple


class WarningSeverity(str, Enum):
    """경고 심각도 구분"""
    INFO = "INFO"
    WARN = "WARN"
    ERROR = "ERROR"


@dataclass(frozen=True)
class Warning:
    """경고 정보 구조체"""
    code: str
    severity: WarningSeverity
    message: str
    context: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        """직렬화 가능한 dict 반환"""
        return {
            "code": self.code,
            "severity": self.severity.value,
            "message": self.message,
            "context": self.context,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Warning":
        return cls(
            code=data["code"],
            severity=WarningSeverity(data["severity"]),
            message=data["message"],
            context=data.get("context"),
        )


@dataclass(frozen=True)
class StratumScore:
    """하나의 M_T 에 대한 P(M_T), R(M_T)"""
    performance: float
    robustness: float

    def to_dict(self) -> Dict[str, float]:
        return {"P": self.performance, "R": self.robustness}


@dataclass(frozen=True)
class StratumAggregate:
    """M_T 전체에 대한 (P, R, P_best, R_best)"""
    performance: float
    robustness: float
    best_performance: float
    best_robustness: float
    train_sets: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "P": self.performance,
            "R": self.robustness,
            "P_best": self.best_performance,
            "R_best": self.best_robustness,
            "train_sets": self.train_sets,
        }


@dataclass
class MetricsReport:
    """한 방법(method)의 점수 행렬에서 계산한 지표 모음

    per_train[stratum][M_T 라벨] 은 stratum 이 비어 있으면 None 이다.
    """
    method: str
    kind: str
    universe: Tuple[str, ...]
    per_train: Dict[str, Dict[str, Optional[StratumScore]]] = field(default_factory=dict)
    aggregates: Dict[str, Optional[StratumAggregate]] = field(default_factory=dict)
    best_eval: Dict[str, str] = field(default_factory=dict)
    warnings: List[Warning] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """직렬화 가능한 dict 반환"""
        return {
            "method": self.method,
            "kind": self.kind,
            "universe": list(self.universe),
            "per_train": {
                stratum: {label: (score.to_dict() if score else None) for label, score in rows.items()}
                for stratum, rows in self.per_train.items()
            },
            "aggregates": {
                stratum: (agg.to_dict() if agg else None) for stratum, agg in self.aggregates.items()
            },
            "best_eval": dict(self.best_eval),
            "warnings": [warning.to_dict() for warning in self.warnings],
        }


JOB_PENDING = "pending"
JOB_OK = "ok"
JOB_FAILED = "failed"
JOB_SKIPPED = "skipped"


@dataclass
class JobRecord:
    """sweep 작업 하나의 상태"""
    method: str
    train_set: str
    seed: int
    status: str = JOB_PENDING
    checkpoint: Optional[str] = None
    error: Optional[str] = None

    @property
    def key(self) -> str:
        return f"{self.method}/{self.train_set}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "train_set": self.train_set,
            "seed": self.seed,
            "status": self.status,
            "checkpoint": self.checkpoint,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "JobRecord":
        return cls(
            method=data["method"],
            train_set=data["train_set"],
            seed=int(data["seed"]),
            status=data.get("status", JOB_PENDING),
            checkpoint=data.get("checkpoint"),
            error=data.get("error"),
        )


@dataclass
class RunManifest:
    """run 디렉터리의 manifest.json 내용"""
    run_id: str
    config: Dict[str, Any]
    bundle_hash: str
    status: str = "running"
    jobs: Dict[str, JobRecord] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    warnings: List[Warning] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """직렬화 가능한 dict 반환"""
        return {
            "run_id": self.run_id,
            "status": self.status,
            "bundle_hash": self.bundle_hash,
            "config": self.config,
            "jobs": {key: job.to_dict() for key, job in sorted(self.jobs.items())},
            "outputs": dict(sorted(self.outputs.items())),
            "warnings": [warning.to_dict() for warning in self.warnings],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(
            run_id=data["run_id"],
            config=data.get("config", {}),
            bundle_hash=data.get("bundle_hash", ""),
            status=data.get("status", "running"),
            jobs={key: JobRecord.from_dict(job) for key, job in data.get("jobs", {}).items()},
            outputs=dict(data.get("outputs", {})),
            warnings=[Warning.from_dict(w) for w in data.get("warnings", [])],
        )
