"""합성 멀티모달 데이터, 제한 연산 x|_m, 마스킹 뷰, 외부 feature 파일 입출력

토큰은 잠재 벡터 z 를 모달리티별 고정 투영 B 로 보낸 뒤 tanh 와 가우시안 잡음을
적용해 만든다. 레이블은 특정 모달리티가 아니라 z 에서 나온다.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import GenConfig, from_dict
from .constants import (
    FEATURE_MAGIC,
    FEATURE_VERSION,
    SPLIT_NAMES,
    TASK_KINDS,
    TASK_MULTI_LABEL,
    TASK_SINGLE_LABEL,
)
from .errors import ConfigError, IngestionError, MissingModalityError, ShapeError
from .modalities import ModalitySet, ModalityUniverse
from .validator import validate_gen_config

logger = logging.getLogger(__name__)

TOKEN_DTYPE = np.float32
LABELED_SPLITS = ("train", "eval")
BUNDLE_HASH_FILENAME = "bundle.sha1"
BUNDLE_CONFIG_FILENAME = "config.json"
LABELS_FILENAME = "labels.npy"
INDICES_FILENAME = "indices.npy"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class MultimodalExample:
    """모달리티별 토큰 행렬 (T_m x token_dim) + 선택적 레이블"""
    universe: ModalityUniverse
    tokens: Mapping[str, np.ndarray]
    label: Optional[np.ndarray] = None

    @property
    def modalities(self) -> ModalitySet:
        return self.universe.of(self.tokens)


@dataclass(frozen=True)
class Split:
    """예제 묶음. tokens[m] 은 (N, T_m, token_dim_m)"""
    universe: ModalityUniverse
    tokens: Mapping[str, np.ndarray]
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        sizes = {array.shape[0] for array in self.tokens.values()}
        if self.labels is not None:
            sizes.add(self.labels.shape[0])
        if len(sizes) > 1:
            raise ShapeError(f"split: 모달리티/레이블 간 예제 수 불일치 {sorted(sizes)}")
        for name, array in self.tokens.items():
            self.universe.index(name)
            if array.ndim != 3:
                raise ShapeError(f"split: {name} 토큰은 3차원이어야 합니다 (got {array.shape})")

    def __len__(self) -> int:
        for array in self.tokens.values():
            return int(array.shape[0])
        return 0 if self.labels is None else int(self.labels.shape[0])

    @property
    def modalities(self) -> ModalitySet:
        return self.universe.of(self.tokens)

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def example(self, index: int) -> MultimodalExample:
        label = None if self.labels is None else self.labels[index]
        return MultimodalExample(
            universe=self.universe,
            tokens={name: array[index] for name, array in self.tokens.items()},
            label=label,
        )

    def restrict(self, m: ModalitySet) -> "Split":
        """D|_m"""
        _check_restriction(self.modalities, m)
        return Split(self.universe, {name: self.tokens[name] for name in m.names}, self.labels)

    def take(self, indices: Sequence[int]) -> "Split":
        idx = np.asarray(indices, dtype=np.int64)
        return Split(
            self.universe,
            {name: _readonly(array[idx]) for name, array in self.tokens.items()},
            None if self.labels is None else _readonly(self.labels[idx]),
        )

    def pooled(self, name: str) -> np.ndarray:
        """토큰 평균 (N, token_dim)"""
        if name not in self.tokens:
            raise MissingModalityError(f"split 에 모달리티 {name} 토큰이 없습니다")
        return self.tokens[name].mean(axis=1, dtype=np.float64).astype(self.tokens[name].dtype)


@dataclass(frozen=True)
class DatasetBundle:
    """D, D_T, D_E, D_SD 와 생성 정보"""
    universe: ModalityUniverse
    task: str
    num_classes: int
    pretrain: Split
    train: Split
    eval: Split
    self_distill: Split
    config: Optional[GenConfig] = None
    seed: Optional[int] = None
    self_distill_indices: Optional[np.ndarray] = None
    origin: str = "synthetic"

    def split(self, name: str) -> Split:
        if name not in SPLIT_NAMES:
            raise ConfigError(f"알 수 없는 split: {name} ({', '.join(SPLIT_NAMES)})")
        return getattr(self, name)

    def token_dims(self) -> Dict[str, int]:
        dims: Dict[str, int] = {}
        for name in SPLIT_NAMES:
            for modality, array in self.split(name).tokens.items():
                dims.setdefault(modality, int(array.shape[2]))
        missing = [m for m in self.universe.names if m not in dims]
        if missing:
            raise MissingModalityError(f"bundle 에 모달리티 {missing} 토큰이 없습니다")
        return {m: dims[m] for m in self.universe.names}

    def content_hash(self) -> str:
        return bundle_hash(self)


def _check_restriction(available: ModalitySet, m: ModalitySet) -> None:
    m.require_nonempty("restrict")
    if not m.issubset(available):
        missing = (m - available).label
        raise MissingModalityError(f"restrict: 모달리티 {missing} 가 없습니다 (available={available.label})")


def restrict(x: MultimodalExample, m: ModalitySet) -> MultimodalExample:
    """x|_m: m 에 속한 토큰 행렬만 남기고 레이블은 유지"""
    _check_restriction(x.modalities, m)
    return MultimodalExample(x.universe, {name: x.tokens[name] for name in m.names}, x.label)


def _generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _make_labels(z: np.ndarray, weights: np.ndarray, task: str) -> np.ndarray:
    logits = z @ weights.T
    if task == TASK_SINGLE_LABEL:
        return _readonly(np.argmax(logits, axis=1).astype(np.int64))
    # sigmoid(w_c · z) > 0.5 ⇔ w_c · z > 0
    return _readonly((logits > 0).astype(np.uint8))


def _make_tokens(
    z: np.ndarray,
    projections: Sequence[np.ndarray],
    config: GenConfig,
    rng: np.random.Generator,
) -> Dict[str, np.ndarray]:
    tokens: Dict[str, np.ndarray] = {}
    for name, projection, sigma in zip(config.modalities, projections, config.noise):
        clean = np.einsum("tdk,nk->ntd", projection, z)
        if config.nonlinear:
            clean = np.tanh(clean)
        noise = rng.standard_normal(clean.shape)
        tokens[name] = _readonly((clean + sigma * noise).astype(TOKEN_DTYPE))
    return tokens


def generate(config: GenConfig, seed: Optional[int] = None) -> DatasetBundle:
    """(config, seed) 의 순수 함수로 DatasetBundle 생성"""
    validate_gen_config(config)
    seed = config.seed if seed is None else seed
    universe = ModalityUniverse(tuple(config.modalities))
    k = config.latent_dim

    param_rng = _generator(seed, 0)
    label_weights = param_rng.standard_normal((config.num_classes, k))
    projections = [
        param_rng.standard_normal((count, dim, k)) / math.sqrt(k)
        for count, dim in zip(config.token_counts, config.token_dims)
    ]

    def draw(size: int, stream: int, labeled: bool) -> Split:
        rng = _generator(seed, stream)
        z = rng.standard_normal((size, k))
        tokens = _make_tokens(z, projections, config, rng)
        labels = _make_labels(z, label_weights, config.task) if labeled else None
        return Split(universe, tokens, labels)

    pretrain = draw(config.pretrain_size, 1, labeled=False)
    downstream = draw(config.train_size + config.eval_size, 2, labeled=True)
    train = downstream.take(np.arange(config.train_size))
    eval_split = downstream.take(np.arange(config.train_size, config.train_size + config.eval_size))

    sd_rng = _generator(seed, 3)
    sd_indices = _readonly(np.sort(sd_rng.choice(config.pretrain_size, size=config.self_distill_size, replace=False)))
    self_distill = pretrain.take(sd_indices)

    logger.info(
        "합성 데이터 생성: modalities=%s pretrain=%d train=%d eval=%d self_distill=%d seed=%d",
        "+".join(config.modalities),
        len(pretrain),
        len(train),
        len(eval_split),
        len(self_distill),
        seed,
    )
    return DatasetBundle(
        universe=universe,
        task=config.task,
        num_classes=config.num_classes,
        pretrain=pretrain,
        train=train,
        eval=eval_split,
        self_distill=self_distill,
        config=config,
        seed=seed,
        self_distill_indices=sd_indices,
    )


def mask_count(token_count: int, ratio: float) -> int:
    """⌈ratio·T⌉. T 개 전부일 수 있다 (보이는 토큰 0개)"""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio 는 [0, 1) 범위여야 합니다 (got {ratio})")
    return min(math.ceil(round(ratio * token_count, 9)), token_count)


@dataclass(frozen=True)
class MaskedView:
    """배치 마스킹 결과. 인덱스는 예제마다 오름차순"""
    visible: np.ndarray
    visible_index: np.ndarray
    masked_index: np.ndarray


def mask_batch(tokens: np.ndarray, ratio: float, rng: np.random.Generator) -> MaskedView:
    """(N, T, D) 토큰에서 예제마다 ⌈ratio·T⌉ 개 행을 비복원 추출로 가림"""
    if tokens.ndim != 3:
        raise ShapeError(f"mask_batch: (N, T, D) 토큰이 필요합니다 (got {tokens.shape})")
    n, t, _ = tokens.shape
    count = mask_count(t, ratio)
    order = np.argsort(rng.random((n, t)), axis=1, kind="stable")
    masked = np.sort(order[:, :count], axis=1)
    visible_index = np.sort(order[:, count:], axis=1)
    visible = np.take_along_axis(tokens, visible_index[:, :, None], axis=1)
    return MaskedView(visible=visible, visible_index=visible_index, masked_index=masked)


def mask_view(x_m: np.ndarray, ratio: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """토큰 행렬 하나를 가림 → (보이는 토큰, 가린 인덱스)"""
    if x_m.ndim != 2:
        raise ShapeError(f"mask_view: (T, D) 토큰 행렬이 필요합니다 (got {x_m.shape})")
    view = mask_batch(x_m[None], ratio, np.random.default_rng(seed))
    return view.visible[0], view.masked_index[0]


@dataclass(frozen=True)
class FeatureManifest:
    """외부 feature 파일 설명: 모달리티/차원, 태스크, split 파일"""
    modalities: Tuple[Tuple[str, int], ...]
    task: str
    num_classes: int
    splits: Dict[str, str] = field(default_factory=dict)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.modalities)

    def dim(self, name: str) -> int:
        return dict(self.modalities)[name]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FeatureManifest":
        try:
            modalities = tuple((str(item["name"]), int(item["dim"])) for item in data["modalities"])
            task = str(data["task"])
            num_classes = int(data["num_classes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"manifest: modalities/task/num_classes 가 필요합니다 ({exc})") from exc
        if task not in TASK_KINDS:
            raise IngestionError(f"manifest.task: {TASK_KINDS} 중 하나여야 합니다 (got {task!r})")
        if not modalities or any(dim <= 0 for _, dim in modalities):
            raise IngestionError("manifest.modalities: 양수 차원의 모달리티가 1개 이상 필요합니다")
        splits = {str(k): str(v) for k, v in dict(data.get("splits", {})).items()}
        for name in splits:
            if name not in SPLIT_NAMES:
                raise IngestionError(f"manifest.splits: 알 수 없는 split {name}")
        return cls(modalities=modalities, task=task, num_classes=num_classes, splits=splits)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "modalities": [{"name": name, "dim": dim} for name, dim in self.modalities],
            "task": self.task,
            "num_classes": self.num_classes,
            "splits": dict(self.splits),
        }


def load_manifest(path: Union[str, Path]) -> FeatureManifest:
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            return FeatureManifest.from_dict(json.load(f))
    except FileNotFoundError as exc:
        raise IngestionError(f"manifest 파일을 찾을 수 없습니다: {path}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"manifest JSON 파싱 실패: {path}") from exc


def _parse_label(text: str, manifest: FeatureManifest, where: str) -> Union[int, np.ndarray]:
    try:
        if manifest.task == TASK_SINGLE_LABEL:
            value = int(text)
            indices = [value]
        else:
            indices = [int(part) for part in text.split(";") if part.strip()]
    except ValueError as exc:
        raise IngestionError(f"{where}: 레이블 {text!r} 를 해석할 수 없습니다") from exc
    for index in indices:
        if not 0 <= index < manifest.num_classes:
            raise IngestionError(f"{where}: 레이블 {index} 가 범위 [0, {manifest.num_classes}) 를 벗어납니다")
    if manifest.task == TASK_SINGLE_LABEL:
        return indices[0]
    vector = np.zeros(manifest.num_classes, dtype=np.uint8)
    vector[indices] = 1
    return vector


def _feature_columns(manifest: FeatureManifest) -> List[str]:
    return [f"{name}_{i}" for name, dim in manifest.modalities for i in range(dim)]


def _assemble_split(
    manifest: FeatureManifest,
    features: Dict[str, List[np.ndarray]],
    labels: List[Any],
    labeled: bool,
) -> Split:
    universe = ModalityUniverse(manifest.names)
    tokens = {
        name: _readonly(
            np.asarray(rows, dtype=TOKEN_DTYPE).reshape(len(rows), 1, manifest.dim(name))
            if rows
            else np.zeros((0, 1, manifest.dim(name)), dtype=TOKEN_DTYPE)
        )
        for name, rows in features.items()
    }
    label_array: Optional[np.ndarray] = None
    if labeled:
        if manifest.task == TASK_SINGLE_LABEL:
            label_array = np.asarray(labels, dtype=np.int64).reshape(len(labels))
        else:
            label_array = (
                np.stack(labels).astype(np.uint8) if labels else np.zeros((0, manifest.num_classes), dtype=np.uint8)
            )
        label_array = _readonly(label_array)
    return Split(universe, tokens, label_array)


def _read_feature_csv(path: Path, manifest: FeatureManifest, labeled: bool) -> Split:
    expected = _feature_columns(manifest)
    features: Dict[str, List[np.ndarray]] = {name: [] for name in manifest.names}
    labels: List[Any] = []
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:2] != ["example_id", "label"]:
            raise IngestionError(f"{path}: header 는 example_id,label 로 시작해야 합니다")
        if header[2:] != expected:
            declared = {}
            for column in header[2:]:
                name, _, _ = column.rpartition("_")
                declared[name] = declared.get(name, 0) + 1
            raise IngestionError(
                f"{path}: feature 차원이 manifest 와 다릅니다 (file={declared}, manifest={dict(manifest.modalities)})"
            )
        for row_number, row in enumerate(reader, start=1):
            where = f"{path.name} row {row_number}"
            if not row:
                continue
            offset = 2
            for name, dim in manifest.modalities:
                cells = row[offset : offset + dim]
                if len(cells) != dim or any(cell.strip() == "" for cell in cells):
                    raise IngestionError(f"{where}: 모달리티 {name} 의 feature 열이 누락되었습니다")
                try:
                    features[name].append(np.asarray([float(cell) for cell in cells], dtype=np.float64))
                except ValueError as exc:
                    raise IngestionError(f"{where}: 모달리티 {name} 에 숫자가 아닌 값이 있습니다") from exc
                offset += dim
            if len(row) != offset:
                raise IngestionError(f"{where}: 열 수 {len(row)} 가 header {offset} 와 다릅니다")
            if labeled:
                labels.append(_parse_label(row[1], manifest, where))
    return _assemble_split(manifest, features, labels, labeled)


def _read_exact(f: Any, size: int, where: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise IngestionError(f"{where}: 파일이 잘렸습니다")
    return data


def _read_feature_binary(path: Path, manifest: FeatureManifest, labeled: bool) -> Split:
    features: Dict[str, List[np.ndarray]] = {name: [] for name in manifest.names}
    labels: List[Any] = []
    with path.open("rb") as f:
        if f.read(4) != FEATURE_MAGIC:
            raise IngestionError(f"{path}: MMFD magic 이 아닙니다")
        (version,) = struct.unpack("<I", _read_exact(f, 4, str(path)))
        if version != FEATURE_VERSION:
            raise IngestionError(f"{path}: 지원하지 않는 버전 {version}")
        (count,) = struct.unpack("<I", _read_exact(f, 4, str(path)))
        declared = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, str(path)))
            name = _read_exact(f, name_len, str(path)).decode("utf-8")
            (dim,) = struct.unpack("<I", _read_exact(f, 4, str(path)))
            declared.append((name, dim))
        if tuple(declared) != manifest.modalities:
            raise IngestionError(f"{path}: feature 차원이 manifest 와 다릅니다 (file={declared})")
        record_number = 0
        while True:
            prefix = f.read(4)
            if not prefix:
                break
            record_number += 1
            where = f"{path.name} record {record_number}"
            if len(prefix) != 4:
                raise IngestionError(f"{where}: 파일이 잘렸습니다")
            (length,) = struct.unpack("<I", prefix)
            payload = _read_exact(f, length, where)
            _, label_text_len = struct.unpack_from("<IH", payload, 0)
            cursor = 6
            label_text = payload[cursor : cursor + label_text_len].decode("utf-8")
            cursor += label_text_len
            expected = cursor + 4 * sum(dim for _, dim in manifest.modalities)
            if length != expected:
                raise IngestionError(f"{where}: 레코드 길이 {length} 가 manifest 차원과 맞지 않습니다 ({expected})")
            for name, dim in manifest.modalities:
                features[name].append(np.frombuffer(payload, dtype="<f4", count=dim, offset=cursor))
                cursor += 4 * dim
            if labeled:
                labels.append(_parse_label(label_text, manifest, where))
    return _assemble_split(manifest, features, labels, labeled)


def read_feature_file(path: Union[str, Path], manifest: FeatureManifest, labeled: bool = True) -> Split:
    """CSV 또는 MMFD 바이너리 (magic 으로 판별)"""
    path = Path(path)
    try:
        with path.open("rb") as f:
            head = f.read(4)
    except FileNotFoundError as exc:
        raise IngestionError(f"feature 파일을 찾을 수 없습니다: {path}") from exc
    if head == FEATURE_MAGIC:
        return _read_feature_binary(path, manifest, labeled)
    return _read_feature_csv(path, manifest, labeled)


def _empty_split(manifest: FeatureManifest, labeled: bool) -> Split:
    return _assemble_split(manifest, {name: [] for name in manifest.names}, [], labeled)


def ingest_features(path: Union[str, Path], manifest: Union[FeatureManifest, Mapping[str, Any], str, Path]) -> DatasetBundle:
    """외부 feature → DatasetBundle (모달리티마다 미리 pooling 된 토큰 1개)

    path 가 파일이면 train split 으로 읽고, 디렉터리면 manifest.splits 의 파일을 읽는다.
    """
    if isinstance(manifest, (str, Path)):
        manifest = load_manifest(manifest)
    elif not isinstance(manifest, FeatureManifest):
        manifest = FeatureManifest.from_dict(manifest)
    path = Path(path)
    if path.is_dir():
        files = {name: path / filename for name, filename in manifest.splits.items()}
    else:
        files = {"train": path}
    splits = {
        name: (
            read_feature_file(files[name], manifest, labeled=name in LABELED_SPLITS)
            if name in files
            else _empty_split(manifest, labeled=name in LABELED_SPLITS)
        )
        for name in SPLIT_NAMES
    }
    logger.info("feature 파일 적재: %s (%s)", path, ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return DatasetBundle(
        universe=ModalityUniverse(manifest.names),
        task=manifest.task,
        num_classes=manifest.num_classes,
        origin="ingested",
        **splits,
    )


def manifest_for(bundle: DatasetBundle) -> FeatureManifest:
    dims = bundle.token_dims()
    return FeatureManifest(
        modalities=tuple((name, dims[name]) for name in bundle.universe.names),
        task=bundle.task,
        num_classes=bundle.num_classes,
        splits={name: f"{name}.csv" for name in SPLIT_NAMES},
    )


def _label_text(split: Split, index: int, task: str) -> str:
    if split.labels is None:
        return ""
    label = split.labels[index]
    if task == TASK_SINGLE_LABEL:
        return str(int(label))
    return ";".join(str(int(i)) for i in np.flatnonzero(label))


def export_split(split: Split, path: Union[str, Path], task: str, fmt: str = "csv") -> None:
    """split 의 pooled feature 를 CSV/MMFD 로 기록"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = split.universe.names
    pooled = {name: split.pooled(name) for name in names}
    if fmt == "csv":
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            header = ["example_id", "label"]
            header += [f"{name}_{i}" for name in names for i in range(pooled[name].shape[1])]
            writer.writerow(header)
            for index in range(len(split)):
                row = [str(index), _label_text(split, index, task)]
                for name in names:
                    row.extend(repr(float(v)) for v in pooled[name][index])
                writer.writerow(row)
        return
    if fmt != "binary":
        raise ConfigError(f"feature 형식: csv|binary (got {fmt!r})")
    with path.open("wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", FEATURE_VERSION, len(names)))
        for name in names:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)) + encoded + struct.pack("<I", pooled[name].shape[1]))
        for index in range(len(split)):
            label = _label_text(split, index, task).encode("utf-8")
            payload = struct.pack("<IH", index, len(label)) + label
            payload += b"".join(np.asarray(pooled[name][index], dtype="<f4").tobytes() for name in names)
            f.write(struct.pack("<I", len(payload)) + payload)


def export_features(bundle: DatasetBundle, directory: Union[str, Path], fmt: str = "csv") -> Path:
    """모든 split 을 pooled feature 파일로 내보내고 manifest.json 을 쓴다"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    suffix = "csv" if fmt == "csv" else "mmfd"
    manifest = manifest_for(bundle)
    manifest = FeatureManifest(
        manifest.modalities, manifest.task, manifest.num_classes, {name: f"{name}.{suffix}" for name in SPLIT_NAMES}
    )
    for name in SPLIT_NAMES:
        export_split(bundle.split(name), directory / manifest.splits[name], bundle.task, fmt)
    manifest_path = directory / "manifest.json"
    with manifest_path.open("w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, ensure_ascii=False, indent=2)
    return manifest_path


def bundle_hash(bundle: DatasetBundle) -> str:
    """배열 내용에 대한 git 스타일 blob SHA-1"""
    digest = hashlib.sha1()
    meta = json.dumps(
        {"universe": list(bundle.universe.names), "task": bundle.task, "num_classes": bundle.num_classes},
        sort_keys=True,
    ).encode("utf-8")
    chunks = [meta]
    for split_name in SPLIT_NAMES:
        split = bundle.split(split_name)
        arrays = sorted(split.tokens.items())
        if split.labels is not None:
            arrays.append(("labels", split.labels))
        for name, array in arrays:
            header = f"{split_name}/{name}:{array.dtype.str}:{list(array.shape)}".encode("utf-8")
            chunks.append(header)
            chunks.append(np.ascontiguousarray(array).tobytes())
    size = sum(len(chunk) for chunk in chunks)
    digest.update(f"blob {size}\0".encode("ascii"))
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


def save_bundle(bundle: DatasetBundle, directory: Union[str, Path]) -> str:
    """split 디렉터리별 .npy + config.json + bundle.sha1. 해시 반환"""
    directory = Path(directory)
    for split_name in SPLIT_NAMES:
        split = bundle.split(split_name)
        split_dir = directory / split_name
        split_dir.mkdir(parents=True, exist_ok=True)
        for name, array in split.tokens.items():
            np.save(split_dir / f"{name}.npy", array, allow_pickle=False)
        if split.labels is not None:
            np.save(split_dir / LABELS_FILENAME, split.labels, allow_pickle=False)
    if bundle.self_distill_indices is not None:
        np.save(directory / "self_distill" / INDICES_FILENAME, bundle.self_distill_indices, allow_pickle=False)
    info = {
        "universe": list(bundle.universe.names),
        "task": bundle.task,
        "num_classes": bundle.num_classes,
        "origin": bundle.origin,
        "seed": bundle.seed,
        "generator": bundle.config.to_dict() if bundle.config else None,
    }
    with (directory / BUNDLE_CONFIG_FILENAME).open("w", encoding="utf-8") as f:
        json.dump(info, f, ensure_ascii=False, indent=2, sort_keys=True)
    digest = bundle_hash(bundle)
    (directory / BUNDLE_HASH_FILENAME).write_text(digest + "\n", encoding="utf-8")
    return digest


def _load_array(path: Path) -> np.ndarray:
    try:
        return _readonly(np.load(path, allow_pickle=False))
    except (OSError, ValueError) as exc:
        raise IngestionError(f"배열을 읽을 수 없습니다: {path} ({exc})") from exc


def load_bundle(directory: Union[str, Path]) -> DatasetBundle:
    """save_bundle 로 쓴 디렉터리를 읽는다. 해시가 다르면 오류"""
    directory = Path(directory)
    try:
        with (directory / BUNDLE_CONFIG_FILENAME).open("r", encoding="utf-8") as f:
            info = json.load(f)
    except FileNotFoundError as exc:
        raise IngestionError(f"bundle 디렉터리가 아닙니다: {directory}") from exc
    except json.JSONDecodeError as exc:
        raise IngestionError(f"bundle config.json 파싱 실패: {directory}") from exc
    universe = ModalityUniverse(tuple(info["universe"]))
    splits: Dict[str, Split] = {}
    for split_name in SPLIT_NAMES:
        split_dir = directory / split_name
        tokens = {
            name: _load_array(split_dir / f"{name}.npy")
            for name in universe.names
            if (split_dir / f"{name}.npy").exists()
        }
        labels_path = split_dir / LABELS_FILENAME
        labels = _load_array(labels_path) if labels_path.exists() else None
        splits[split_name] = Split(universe, tokens, labels)
    indices_path = directory / "self_distill" / INDICES_FILENAME
    generator = info.get("generator")
    bundle = DatasetBundle(
        universe=universe,
        task=info["task"],
        num_classes=int(info["num_classes"]),
        config=from_dict(GenConfig, generator) if generator else None,
        seed=info.get("seed"),
        self_distill_indices=_load_array(indices_path) if indices_path.exists() else None,
        origin=info.get("origin", "synthetic"),
        **splits,
    )
    hash_path = directory / BUNDLE_HASH_FILENAME
    if hash_path.exists():
        recorded = hash_path.read_text(encoding="utf-8").strip()
        actual = bundle_hash(bundle)
        if recorded != actual:
            raise IngestionError(f"bundle 해시 불일치: {directory} (recorded={recorded}, actual={actual})")
    return bundle
