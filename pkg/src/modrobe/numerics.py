"""numpy 기반 텐서, 커널, 역전파

커널은 모두 모듈 수준 함수이며 입력 텐서가 속한 그래프에 노드를 기록한다.
상수(그래프가 없는 텐서)만으로 이루어진 연산은 기록하지 않는다.
브로드캐스팅은 (n, k) + (k,) 행 단위 bias 덧셈만 허용한다.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import NumericThresholds
from .errors import ConfigError, GraphError, NumericOverflowError, ShapeError

Array = np.ndarray
GradFn = Callable[[Array], Tuple[Optional[Array], ...]]

PRECISIONS = {"float32": np.float32, "float64": np.float64}


def resolve_dtype(precision: str) -> type:
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ConfigError(f"precision: 지원하지 않는 정밀도 {precision!r} (float32|float64)")


def _frozen(value: Array) -> Array:
    value.flags.writeable = False
    return value


class Tensor:
    """불변 numpy 배열 + 소속 그래프"""

    __slots__ = ("data", "graph", "name")

    def __init__(self, data: Array, graph: Optional["Graph"] = None, name: Optional[str] = None):
        self.data = data if not data.flags.writeable else _frozen(data)
        self.graph = graph
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: 스칼라가 아닌 텐서 shape={self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        tracked = "tracked" if self.graph is not None else "const"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, {tracked})"


@dataclass(frozen=True)
class Node:
    """커널 적용 기록"""
    kernel: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    grad_fn: GradFn
    stop: bool = False


class Graph:
    """단일 소유자 계산 그래프: 노드 목록, 이름 붙은 leaf 파라미터"""

    def __init__(self, precision: str = "float32"):
        self.precision = precision
        self.dtype = resolve_dtype(precision)
        self.nodes: List[Node] = []
        self.parameters: Dict[str, Tensor] = {}
        self.finalized = False

    def param(self, name: str, value: Array) -> Tensor:
        if name in self.parameters:
            raise GraphError(f"중복 파라미터 이름: {name}")
        self._ensure_open()
        tensor = Tensor(np.array(value, dtype=self.dtype), graph=self, name=name)
        self.parameters[name] = tensor
        return tensor

    def constant(self, value: Union[Array, float, Sequence[float]]) -> Tensor:
        return Tensor(np.array(value, dtype=self.dtype))

    def bind(self, params: Mapping[str, Array], trainable: Optional[Iterable[str]] = None) -> Dict[str, Tensor]:
        """파라미터 dict를 그래프에 올린다. trainable 밖의 이름은 상수로 취급"""
        names = set(params) if trainable is None else set(trainable)
        return {
            name: self.param(name, value) if name in names else self.constant(value)
            for name, value in params.items()
        }

    def record(self, node: Node) -> None:
        self._ensure_open()
        self.nodes.append(node)

    def _ensure_open(self) -> None:
        if self.finalized:
            raise GraphError("역전파가 끝난 그래프에는 노드를 추가할 수 없습니다")


def constant(value: Union[Array, float, Sequence[float]], precision: str = "float32") -> Tensor:
    return Tensor(np.array(value, dtype=resolve_dtype(precision)))


def _graph_of(kernel: str, inputs: Sequence[Tensor]) -> Optional[Graph]:
    graph: Optional[Graph] = None
    for tensor in inputs:
        if not isinstance(tensor, Tensor):
            raise ShapeError(f"{kernel}: Tensor 입력이 필요합니다 (got {type(tensor).__name__})")
        if tensor.graph is None:
            continue
        if graph is None:
            graph = tensor.graph
        elif tensor.graph is not graph:
            raise GraphError(f"{kernel}: 서로 다른 그래프의 텐서를 섞을 수 없습니다")
    return graph


def _apply(kernel: str, inputs: Sequence[Tensor], value: Array, grad_fn: GradFn, stop: bool = False) -> Tensor:
    graph = _graph_of(kernel, inputs)
    value = np.asarray(value)
    if not np.isfinite(value).all():
        shapes = [tuple(t.shape) for t in inputs]
        raise NumericOverflowError(f"{kernel}: 비유한 출력 발생 (input shapes={shapes})")
    out = Tensor(value, graph=graph)
    if graph is not None:
        graph.record(Node(kernel, tuple(inputs), out, grad_fn, stop))
    return out


def _shape_error(kernel: str, *tensors: Tensor) -> ShapeError:
    shapes = " x ".join(str(tuple(t.shape)) for t in tensors)
    return ShapeError(f"{kernel}: shape 불일치 {shapes}")


def _require_2d(kernel: str, *tensors: Tensor) -> None:
    for tensor in tensors:
        if tensor.ndim != 2:
            raise ShapeError(f"{kernel}: 2차원 입력이 필요합니다 (got {tuple(tensor.shape)})")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    A, B = a.data, b.data
    return _apply("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def _is_row_bias(a: Tensor, b: Tensor) -> bool:
    return a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]


def add(a: Tensor, b: Tensor) -> Tensor:
    """동일 shape 덧셈 또는 (n, k) + (k,) 행 bias"""
    if a.shape == b.shape:
        return _apply("add", (a, b), a.data + b.data, lambda g: (g, g))
    if _is_row_bias(a, b):
        return _apply("add", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))
    raise _shape_error("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return _apply("sub", (a, b), a.data - b.data, lambda g: (g, -g))
    if _is_row_bias(a, b):
        return _apply("sub", (a, b), a.data - b.data, lambda g: (g, -g.sum(axis=0)))
    raise _shape_error("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)
    A, B = a.data, b.data
    return _apply("mul", (a, b), A * B, lambda g: (g * B, g * A))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    value = a.data * a.data.dtype.type(factor)
    return _apply("scale", (a,), value, lambda g: (g * g.dtype.type(factor),))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """스칼라 텐서 s 로 곱하기 (학습 가능한 온도 등)"""
    if s.data.size != 1:
        raise _shape_error("scale_by", a, s)
    A, S = a.data, s.data
    factor = S.reshape(())
    return _apply(
        "scale_by",
        (a, s),
        A * factor,
        lambda g: (g * factor, np.reshape(np.sum(g * A), S.shape).astype(S.dtype)),
    )


def _check_axis(kernel: str, a: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not (0 <= axis < a.ndim):
        raise ShapeError(f"{kernel}: axis={axis} 가 shape {tuple(a.shape)} 에 맞지 않습니다")


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    _check_axis("sum", a, axis)
    shape = a.shape
    if axis is None:
        return _apply("sum", (a,), np.sum(a.data), lambda g: (np.broadcast_to(g, shape),))
    return _apply(
        "sum",
        (a,),
        np.sum(a.data, axis=axis),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape),),
    )


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_axis("mean", a, axis)
    count = a.data.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError(f"mean: 빈 축 평균 shape={tuple(a.shape)}")
    return scale(sum(a, axis=axis), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _apply("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    A = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(A)
    return _apply("log", (a,), out, lambda g: (g / A,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _apply("tanh", (a,), out, lambda g: (g * (1 - out * out),))


def relu(a: Tensor) -> Tensor:
    A = a.data
    return _apply("relu", (a,), np.maximum(A, 0), lambda g: (g * (A > 0),))


def _stable_sigmoid(x: Array) -> Array:
    return np.exp(-np.logaddexp(0, -x))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _apply("sigmoid", (a,), out, lambda g: (g * out * (1 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), 큰 |x| 에서도 안정적"""
    A = a.data
    return _apply("softplus", (a,), np.logaddexp(0, A), lambda g: (g * _stable_sigmoid(A),))


def softmax(a: Tensor) -> Tensor:
    _require_2d("softmax", a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return _apply("softmax", (a,), out, lambda g: (out * (g - np.sum(g * out, axis=1, keepdims=True)),))


def log_softmax(a: Tensor) -> Tensor:
    _require_2d("log_softmax", a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(out)
    return _apply("log_softmax", (a,), out, lambda g: (g - probs * np.sum(g, axis=1, keepdims=True),))


def l2_normalize(a: Tensor, eps: float = NumericThresholds.NORM_EPS) -> Tensor:
    _require_2d("l2_normalize", a)
    raw = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    clamped = raw < eps
    norm = np.where(clamped, a.data.dtype.type(eps), raw)
    out = a.data / norm

    def grad_fn(g: Array) -> Tuple[Array]:
        projected = g - out * np.sum(g * out, axis=1, keepdims=True)
        return (np.where(clamped, g, projected) / norm,)

    return _apply("l2_normalize", (a,), out, grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: 입력이 비어 있습니다")
    _require_2d("concat", *tensors)
    other = 1 - axis
    if axis not in (0, 1) or len({t.shape[other] for t in tensors}) != 1:
        raise _shape_error("concat", *tensors)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def grad_fn(g: Array) -> Tuple[Array, ...]:
        if axis == 0:
            return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(tensors)))
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _apply("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), grad_fn)


def mean_of(tensors: Sequence[Tensor]) -> Tensor:
    """같은 shape 텐서들의 원소별 평균. 입력 순서와 무관하게 비트 단위로 같은 결과"""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("mean_of: 입력이 비어 있습니다")
    if len({t.shape for t in tensors}) != 1:
        raise _shape_error("mean_of", *tensors)
    count = len(tensors)
    # 원소마다 값을 정렬한 뒤 더해 합산 순서를 고정
    stacked = np.sort(np.stack([t.data for t in tensors]), axis=0)
    total = stacked[0].copy()
    for row in stacked[1:]:
        total += row
    dtype = total.dtype.type
    value = total * dtype(1.0 / count)
    return _apply("mean_of", tensors, value, lambda g: tuple(g * g.dtype.type(1.0 / count) for _ in range(count)))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim < 1 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: [{start}:{stop}] 가 shape {tuple(a.shape)} 범위를 벗어납니다")
    shape = a.shape

    def grad_fn(g: Array) -> Tuple[Array]:
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _apply("slice_rows", (a,), a.data[start:stop], grad_fn)


def gather_rows(a: Tensor, indices: Array) -> Tensor:
    """a[indices] — 중복 인덱스의 gradient는 누적된다"""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or a.ndim < 1:
        raise ShapeError(f"gather_rows: 1차원 인덱스가 필요합니다 (got {idx.shape})")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: 인덱스 범위 초과 (rows={a.shape[0]})")
    shape = a.shape

    def grad_fn(g: Array) -> Tuple[Array]:
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _apply("gather_rows", (a,), a.data[idx], grad_fn)


def transpose(a: Tensor) -> Tensor:
    _require_2d("transpose", a)
    return _apply("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def standardize_rows(a: Tensor, eps: float = NumericThresholds.STANDARDIZE_EPS) -> Tensor:
    """layer-norm 형태의 행 단위 표준화 (affine 없음)"""
    _require_2d("standardize_rows", a)
    centered = a.data - a.data.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=1, keepdims=True) + eps)
    out = centered * inv_std

    def grad_fn(g: Array) -> Tuple[Array]:
        g_mean = g.mean(axis=1, keepdims=True)
        gy_mean = np.mean(g * out, axis=1, keepdims=True)
        return (inv_std * (g - g_mean - out * gy_mean),)

    return _apply("standardize_rows", (a,), out, grad_fn)


def batch_norm(a: Tensor, running_mean: Array, running_var: Array, eps: float = NumericThresholds.BATCHNORM_EPS) -> Tensor:
    """고정 통계로 열 단위 표준화 (affine 없음, 통계는 상수)"""
    _require_2d("batch_norm", a)
    mu = np.asarray(running_mean, dtype=a.dtype)
    var = np.asarray(running_var, dtype=a.dtype)
    if mu.shape != (a.shape[1],) or var.shape != (a.shape[1],):
        raise ShapeError(f"batch_norm: 통계 shape {mu.shape}/{var.shape} 가 입력 {tuple(a.shape)} 와 맞지 않습니다")
    inv_std = (1.0 / np.sqrt(var + eps)).astype(a.dtype)
    return _apply("batch_norm", (a,), (a.data - mu) * inv_std, lambda g: (g * inv_std,))


def stop_gradient(a: Tensor) -> Tensor:
    """순전파는 항등, 역전파는 상류로 gradient를 보내지 않음"""
    return _apply("stop_gradient", (a,), a.data, lambda g: (None,), stop=True)


def backward(graph: Graph, loss: Tensor) -> Dict[str, Array]:
    """loss 에서 모든 파라미터로의 gradient. 도달하지 않는 파라미터는 0"""
    if loss.data.size != 1 or loss.ndim > 1:
        raise GraphError(f"backward: 스칼라 손실이 필요합니다 (shape={tuple(loss.shape)})")
    if loss.graph is not None and loss.graph is not graph:
        raise GraphError("backward: 손실이 다른 그래프에 속해 있습니다")
    graph.finalized = True

    grads: Dict[int, Array] = {}
    if loss.graph is graph:
        grads[id(loss)] = np.ones_like(loss.data)

    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None or node.stop:
            continue
        for tensor, grad in zip(node.inputs, node.grad_fn(g)):
            if grad is None or tensor.graph is None:
                continue
            key = id(tensor)
            grads[key] = grad if key not in grads else grads[key] + grad

    result: Dict[str, Array] = {}
    for name, tensor in graph.parameters.items():
        grad = grads.get(id(tensor))
        if grad is None:
            grad = np.zeros_like(tensor.data)
        grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
        result[name] = grad
    return result


def numerical_gradient(
    fn: Callable[[Mapping[str, Array]], float],
    params: Mapping[str, Array],
    step: float = NumericThresholds.FINITE_DIFF_STEP,
) -> Dict[str, Array]:
    """중앙 차분 gradient (float64)"""
    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    result: Dict[str, Array] = {}
    for name, value in base.items():
        grad = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + step
            upper = fn(base)
            value[index] = original - step
            lower = fn(base)
            value[index] = original
            grad[index] = (upper - lower) / (2 * step)
        result[name] = grad
    return result


def relative_error(
    analytic: Mapping[str, Array],
    numeric: Mapping[str, Array],
    floor: float = NumericThresholds.RELATIVE_ERROR_FLOOR,
) -> float:
    """원소별 |a - n| / max(|a|, |n|, floor) 의 최댓값"""
    worst = 0.0
    for name, expected in numeric.items():
        expected = np.asarray(expected, dtype=np.float64)
        actual = np.asarray(analytic[name], dtype=np.float64).reshape(expected.shape)
        denom = np.maximum(np.maximum(np.abs(actual), np.abs(expected)), floor)
        worst = max(worst, float(np.max(np.abs(actual - expected) / denom, initial=0.0)))
    return worst
