"""
张量核心
========

float64 稠密数组 + 反向模式自动微分，足够支撑预测器与 CIB 的损失。

只支持前导批次维的广播：一个操作数的形状必须等于另一个的尾部维度（或为标量）。
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .. import config as _config
from ..errors import InvalidArgumentError, NumericError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class Tensor:
    """
    计算图中的一个节点

    Attributes:
        data: float64 数组（行主序）
        requires_grad: 是否需要梯度
        grad: 叶子节点在 backward 之后的梯度
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None
        self._op = "leaf"
        _trap(self.data, "leaf" if name is None else name)

    # ------------------------------------------------------------
    # 基本属性
    # ------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """返回数据副本"""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgumentError(f"item() 只能用于单元素张量，当前形状 {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------
    # 运算符
    # ------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return slice_tensor(self, key)


def set_debug_numerics(enabled: bool) -> None:
    """打开或关闭 NaN/Inf 检查"""
    _config.DEBUG_NUMERICS = bool(enabled)


def _trap(data: np.ndarray, op: str) -> None:
    if _config.DEBUG_NUMERICS and not np.all(np.isfinite(data)):
        raise NumericError(f"运算 {op} 产生了非有限值")


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]],
    op: str
) -> Tensor:
    _trap(data, op)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _broadcast_shape(op: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) > len(b) and a[-len(b):] == b:
        return a
    if len(b) > len(a) and b[-len(a):] == a:
        return b
    raise ShapeError(op, a, b)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


# ============================================================
# 逐元素运算
# ============================================================


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a.shape, b.shape)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), backward, "div")


def neg(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def exp(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def tanh(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    active = x.data > 0.0
    return _result(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,), "relu")


def softplus(x: ArrayLike) -> Tensor:
    """log(1 + e^x)，数值稳定"""
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    return _result(out, (x,), lambda g: (g * expit(x.data),), "softplus")


def square(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


# ============================================================
# 线性代数
# ============================================================


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    矩阵乘法

    支持 (..., n, k) @ (k, m)（共享权重）与前导维相同的批量 (..., n, k) @ (..., k, m)。
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.ndim == 2:
        k, m = b.shape

        def backward(g):
            grad_a = g @ b.data.T
            grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            return grad_a, grad_b
    elif a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:
        def backward(g):
            grad_a = g @ np.swapaxes(b.data, -1, -2)
            grad_b = np.swapaxes(a.data, -1, -2) @ g
            return grad_a, grad_b
    else:
        raise ShapeError("matmul", a.shape, b.shape)
    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# ============================================================
# 归一化与概率
# ============================================================


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out = x.data - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def logsumexp(x: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    """减去最大值后求 log Σ exp，避免溢出"""
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    weights = np.exp(x.data - out_keep)
    out = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

    def backward(g):
        g_keep = g if keepdims else np.expand_dims(g, axis)
        return (g_keep * weights,)

    return _result(out, (x,), backward, "logsumexp")


def gaussian_log_pdf(y: ArrayLike, mu: ArrayLike, sigma: ArrayLike) -> Tensor:
    """
    对角高斯的逐元素对数密度

    log N(y; μ, σ²) = −½·ln(2π) − ln σ − ½·((y − μ)/σ)²；沿维度求和由调用方用 reduce_sum 完成。
    """
    y, mu, sigma = _as_tensor(y), _as_tensor(mu), _as_tensor(sigma)
    if not (y.shape == mu.shape == sigma.shape):
        raise ShapeError("gaussian_log_pdf", y.shape, mu.shape, sigma.shape)
    z = (y.data - mu.data) / sigma.data
    out = -_HALF_LOG_2PI - np.log(sigma.data) - 0.5 * z * z

    def backward(g):
        return (-g * z / sigma.data, g * z / sigma.data, g * (z * z - 1.0) / sigma.data)

    return _result(out, (y, mu, sigma), backward, "gaussian_log_pdf")


# ============================================================
# 形状操作
# ============================================================


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise InvalidArgumentError("concat 需要至少一个张量")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def slice_tensor(x: ArrayLike, key) -> Tensor:
    """按 numpy 索引规则取子张量"""
    x = _as_tensor(x)
    out = x.data[key]

    parts = key if isinstance(key, tuple) else (key,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (int, slice, np.integer)) for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[key] = g
        else:
            # 高级索引可能重复，需要累加
            np.add.at(full, key, g)
        return (full,)

    return _result(np.array(out, dtype=np.float64), (x,), backward, "slice")


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def expand(x: ArrayLike, axis: int, n: int) -> Tensor:
    """沿长度为 1 的 axis 复制 n 份"""
    x = _as_tensor(x)
    if x.shape[axis] != 1:
        raise ShapeError("expand", x.shape, (n,))
    out = np.repeat(x.data, n, axis=axis)
    return _result(out, (x,), lambda g: (g.sum(axis=axis, keepdims=True),), "expand")


def reduce_sum(x: ArrayLike, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward, "reduce_sum")


def reduce_mean(x: ArrayLike, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return div(reduce_sum(x, axis=axis, keepdims=keepdims), float(count))


# ============================================================
# 反向传播
# ============================================================


@dataclass
class Tape:
    """
    一次反向传播的记录

    nodes 按拓扑序排列（父节点在前），run() 逆序访问每个节点恰好一次。
    """

    nodes: List[Tensor]
    grads: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(nodes=order)

    def run(self, root: Tensor) -> None:
        self.grads[id(root)] = np.ones_like(root.data)
        for node in reversed(self.nodes):
            g = self.grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in self.grads:
                    self.grads[key] = self.grads[key] + pg
                else:
                    self.grads[key] = np.array(pg, dtype=np.float64, copy=True)


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """
    对标量损失做反向传播

    Args:
        loss: 单元素张量

    Returns:
        叶子张量到梯度的映射；同时写入每个叶子的 .grad

    Raises:
        InvalidArgumentError: loss 不是标量
    """
    if loss.size != 1:
        raise InvalidArgumentError(f"backward 需要标量损失，当前形状 {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = Tape.record(loss)
    tape.run(loss)
    result: Dict[Tensor, np.ndarray] = {}
    for node in tape.nodes:
        if node._backward is None:
            grad = tape.grads.get(id(node), np.zeros_like(node.data))
            node.grad = grad
            result[node] = grad
    return result


def gradient_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0
) -> float:
    """
    用中心差分检验 fn 对 params 的梯度

    Args:
        fn: 无参函数，返回标量损失（每次调用都重新构图）
        params: 需要检验的叶子张量
        eps: 差分步长
        max_entries: 每个参数最多抽查的元素数，None 表示全部
        seed: 抽查元素的随机种子

    Returns:
        ||g_auto − g_fd|| / (||g_auto|| + ||g_fd||)
    """
    grads = backward(fn())
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    for p in params:
        g = grads.get(p, np.zeros_like(p.data))
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            numeric.append((f_plus - f_minus) / (2.0 * eps))
            analytic.append(g.reshape(-1)[i])
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
