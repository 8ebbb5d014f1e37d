"""MMRL 체크포인트 파일

magic "MMRL", u32 version, u32 metadata 길이 + UTF-8 JSON, 이후 이름순 파라미터 레코드
(u16 이름 길이, 이름, u8 dtype, u8 rank, u32 extents, little-endian payload).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import CheckpointError

logger = logging.getLogger(__name__)

DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def _plain_metadata(metadata: Mapping[str, Any]) -> Dict[str, Any]:
    try:
        return json.loads(json.dumps(dict(metadata), sort_keys=True, ensure_ascii=False))
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"metadata 가 JSON 으로 직렬화되지 않습니다: {exc}") from exc


@dataclass(frozen=True)
class ModelCheckpoint:
    """이름 붙은 파라미터 텐서 + provenance metadata (불변 값)"""
    params: Mapping[str, np.ndarray]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        frozen = {}
        for name in sorted(self.params):
            array = np.array(self.params[name], copy=True)
            if array.dtype not in DTYPE_CODES:
                raise CheckpointError(f"지원하지 않는 dtype: {name} ({array.dtype})")
            array.flags.writeable = False
            frozen[name] = array
        object.__setattr__(self, "params", frozen)
        object.__setattr__(self, "metadata", _plain_metadata(self.metadata))

    @property
    def method(self) -> str:
        return str(self.metadata.get("downstream_method", "none"))

    def with_metadata(self, **updates: Any) -> "ModelCheckpoint":
        merged = dict(self.metadata)
        merged.update(updates)
        return ModelCheckpoint(self.params, merged)

    def fingerprint(self) -> str:
        """파라미터 내용 SHA-1 (계보 식별용)"""
        digest = hashlib.sha1()
        for name, array in self.params.items():
            digest.update(name.encode("utf-8"))
            digest.update(array.dtype.str.encode("ascii"))
            digest.update(str(array.shape).encode("ascii"))
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


def encode_checkpoint(checkpoint: ModelCheckpoint) -> bytes:
    meta = json.dumps(checkpoint.metadata, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta]
    for name, array in checkpoint.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", DTYPE_CODES[array.dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointError(f"{self.source}: 파일이 잘렸습니다 ({what}, offset={self.offset})")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self) -> bool:
        return self.offset >= len(self.data)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> ModelCheckpoint:
    reader = _Reader(data, source)
    if reader.take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source}: MMRL magic 이 아닙니다")
    version, meta_len = reader.unpack("<II", "header")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{source}: 지원하지 않는 버전 {version} (expected {CHECKPOINT_VERSION})")
    try:
        metadata = json.loads(reader.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: metadata 파싱 실패") from exc
    params: Dict[str, np.ndarray] = {}
    while not reader.done:
        (name_len,) = reader.unpack("<H", "record name length")
        name = reader.take(name_len, "record name").decode("utf-8")
        code, rank = reader.unpack("<BB", f"{name} dtype/rank")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{source}: {name} 의 dtype 코드 {code} 를 알 수 없습니다")
        shape = reader.unpack(f"<{rank}I", f"{name} extents")
        dtype = CODE_DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = reader.take(size, f"{name} payload")
        params[name] = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
    return ModelCheckpoint(params, metadata)


def save_checkpoint(checkpoint: ModelCheckpoint, path: Union[str, Path]) -> Path:
    """임시 파일에 쓴 뒤 rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(encode_checkpoint(checkpoint))
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"체크포인트를 쓸 수 없습니다: {path} ({exc})") from exc
    logger.debug("체크포인트 저장: %s (%d params)", path, len(checkpoint.params))
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelCheckpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"체크포인트 파일을 찾을 수 없습니다: {path}") from exc
    except OSError as exc:
        raise CheckpointError(f"체크포인트를 읽을 수 없습니다: {path} ({exc})") from exc
    return decode_checkpoint(data, source=str(path))
