#  OpenSSCR: Open self-supervised counterfactual reasoning for iterative image editing.
#  Copyright (C) 2020  The OpenSSCR developers
#
#  This program is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  This program is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""Dense tensors with reverse-mode gradients.

Every model in the package is built from the primitives defined here. A primitive computes its
output with numpy, and, when any of its inputs requires a gradient, records a closure that pushes
the output gradient back to the inputs. `backward` walks the recorded graph in reverse topological
order.

Gradients of leaf tensors (the parameters) accumulate over repeated `backward` calls until they
are explicitly zeroed; the gradients of intermediate nodes are reset at the start of every call.
"""
import threading

from contextlib import contextmanager
from itertools import count
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from numpy import ndarray
from scipy.special import expit, log_softmax, softmax as np_softmax

ArrayLike = Union[ndarray, float, int, Sequence]

_node_ids = count()
_state = threading.local()


class ShapeError(ValueError):
    """A primitive received arrays with incompatible shapes."""

    def __init__(self, primitive: str, a: Tuple, b: Tuple, detail: str = ''):
        self.primitive = primitive
        self.shapes = (tuple(a), tuple(b))
        msg = f"{primitive}: incompatible shapes {tuple(a)} and {tuple(b)}"
        super().__init__(msg + (f" ({detail})" if detail else ''))


class BackwardError(RuntimeError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, 'enabled', True)


@contextmanager
def no_grad():
    """Disables graph recording inside the block (evaluation and target computations)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """Dense float64 array that can take part in reverse-mode differentiation.

    Parameters
    ----------
    values: array-like
        Tensor values, converted to a float64 array.
    requires_grad: bool
        Whether gradients should be accumulated for this tensor.
    name: str, optional
        Parameter path for tensors owned by a `ParameterStore`.
    """

    __array_priority__ = 100

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.values: ndarray = np.array(values, dtype=np.float64)
        self.grad: Optional[ndarray] = None
        self.requires_grad: bool = requires_grad
        self.name: Optional[str] = name
        self.node_id: int = next(_node_ids)
        self.op: str = 'leaf'
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[], None]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.values.copy())

    def numpy(self) -> ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def _accumulate(self, g: ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    # Operator sugar
    # --------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: ndarray, parents: Sequence[Tensor], op: str, backward: Callable[[Tensor], None]) -> Tensor:
    out = Tensor(values)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = lambda: backward(out)
    return out


def _unbroadcast(g: ndarray, shape: Tuple[int, ...]) -> ndarray:
    """Sums a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(primitive: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(primitive, a.shape, b.shape, 'not broadcastable') from None


# Graph traversal
# ===============
def _topological_order(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populates the gradients of every tensor reachable from a scalar loss.

    Parameters
    ----------
    loss: Tensor
        Scalar (single-element) tensor produced by a recorded forward pass.

    Returns
    -------
    None
    """
    if loss.values.size != 1:
        raise BackwardError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    for node in order:
        if not node.is_leaf:
            node.grad = np.zeros_like(node.values)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if not node.is_leaf:
            node._backward()


# Elementwise arithmetic
# ======================
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)

    def bw(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))
    return _result(a.values + b.values, (a, b), 'add', bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('sub', a, b)

    def bw(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.shape))
    return _result(a.values - b.values, (a, b), 'sub', bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)

    def bw(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.values, b.shape))
    return _result(a.values * b.values, (a, b), 'mul', bw)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's batching rules for the leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul', a.shape, b.shape, 'inner dimensions differ')
    try:
        values = np.matmul(a.values, b.values)
    except ValueError:
        raise ShapeError('matmul', a.shape, b.shape, 'batch dimensions differ') from None

    def bw(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(out.grad, np.swapaxes(b.values, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.values, -1, -2), out.grad), b.shape))
    return _result(values, (a, b), 'matmul', bw)


# Nonlinearities
# ==============
def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)

    def bw(out):
        x._accumulate(out.grad * (1.0 - y ** 2))
    return _result(y, (x,), 'tanh', bw)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.values)

    def bw(out):
        x._accumulate(out.grad * y * (1.0 - y))
    return _result(y, (x,), 'sigmoid', bw)


def relu(x: Tensor) -> Tensor:
    m = x.values > 0.0

    def bw(out):
        x._accumulate(out.grad * m)
    return _result(np.where(m, x.values, 0.0), (x,), 'relu', bw)


def log_sigmoid(x: Tensor) -> Tensor:
    """log σ(x), the binary cross-entropy building block, computed without overflow."""
    y = -np.logaddexp(0.0, -x.values)

    def bw(out):
        x._accumulate(out.grad * expit(-x.values))
    return _result(y, (x,), 'log_sigmoid', bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = np_softmax(x.values, axis=axis)

    def bw(out):
        x._accumulate(y * (out.grad - (out.grad * y).sum(axis=axis, keepdims=True)))
    return _result(y, (x,), 'softmax', bw)


def cross_entropy(logits: Tensor, targets: ndarray, mask: Optional[ndarray] = None,
                  reduction: str = 'sum') -> Tensor:
    """Categorical cross-entropy of integer targets under softmax(logits).

    Parameters
    ----------
    logits: Tensor
        Array of shape (..., C).
    targets: ndarray
        Integer class indices with shape logits.shape[:-1].
    mask: ndarray, optional
        Weights with the shape of `targets`; zero entries are excluded from the loss.
    reduction: str
        Either 'sum' or 'mean' (mean over the unmasked positions).

    Returns
    -------
    Scalar tensor.
    """
    targets = np.asarray(targets, dtype=int)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError('cross_entropy', logits.shape, targets.shape, 'targets must match the logit batch shape')
    mask = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != targets.shape:
        raise ShapeError('cross_entropy', targets.shape, mask.shape, 'mask must match the targets')
    if reduction not in ('sum', 'mean'):
        raise ValueError(f"cross_entropy: unknown reduction '{reduction}'")

    logp = log_softmax(logits.values, axis=-1)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    scale = 1.0 if reduction == 'sum' else 1.0 / max(mask.sum(), 1.0)
    value = -scale * (picked * mask).sum()

    def bw(out):
        g = np.exp(logp)
        np.put_along_axis(g, targets[..., None], np.take_along_axis(g, targets[..., None], axis=-1) - 1.0, axis=-1)
        logits._accumulate(out.grad * scale * g * mask[..., None])
    return _result(np.array(value), (logits,), 'cross_entropy', bw)


# Structural primitives
# =====================
def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise ShapeError('concat', ref.shape, t.shape, f'only axis {axis} may differ')
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(out):
        for t, g in zip(tensors, np.split(out.grad, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(g)
    return _result(np.concatenate([t.values for t in tensors], axis=axis), tensors, 'concat', bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError('stack', tensors[0].shape, t.shape)

    def bw(out):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(out.grad, i, axis=axis))
    return _result(np.stack([t.values for t in tensors], axis=axis), tensors, 'stack', bw)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        y = x.values.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', x.shape, shape) from None

    def bw(out):
        x._accumulate(out.grad.reshape(x.shape))
    return _result(y, (x,), 'reshape', bw)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(out):
        x._accumulate(np.transpose(out.grad, inverse))
    return _result(np.transpose(x.values, axes), (x,), 'transpose', bw)


def broadcast_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        y = np.broadcast_to(x.values, shape).copy()
    except ValueError:
        raise ShapeError('broadcast_to', x.shape, shape) from None

    def bw(out):
        x._accumulate(_unbroadcast(out.grad, x.shape))
    return _result(y, (x,), 'broadcast_to', bw)


def take(x: Tensor, index) -> Tensor:
    """Basic and integer-array indexing."""
    def bw(out):
        g = np.zeros_like(x.values)
        np.add.at(g, index, out.grad)
        x._accumulate(g)
    return _result(x.values[index], (x,), 'take', bw)


def embedding(table: Tensor, ids: ndarray) -> Tensor:
    """Row lookup `table[ids]` for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError('embedding', table.shape, ids.shape, 'id out of range')

    def bw(out):
        g = np.zeros_like(table.values)
        np.add.at(g, ids, out.grad)
        table._accumulate(g)
    return _result(table.values[ids], (table,), 'embedding', bw)


# Reductions
# ==========
def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(out):
        g = out.grad if keepdims or axis is None else np.expand_dims(out.grad, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())
    return _result(np.sum(x.values, axis=axis, keepdims=keepdims), (x,), 'sum', bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.values.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def bw(out):
        g = out.grad if keepdims or axis is None else np.expand_dims(out.grad, axis)
        x._accumulate(np.broadcast_to(g, x.shape) / n)
    return _result(np.mean(x.values, axis=axis, keepdims=keepdims), (x,), 'mean', bw)


# Fused recurrent and attention primitives
# ========================================
def gru_step(x: Tensor, h: Tensor, wx: Tensor, wh: Tensor, bx: Tensor, bh: Tensor) -> Tensor:
    """One gated recurrent cell step with update and reset gates.

        r  = σ(x Wx_r + bx_r + h Wh_r + bh_r)
        z  = σ(x Wx_z + bx_z + h Wh_z + bh_z)
        n  = tanh(x Wx_n + bx_n + r ⊙ (h Wh_n + bh_n))
        h' = (1 - z) ⊙ n + z ⊙ h

    Parameters
    ----------
    x: Tensor
        Input of shape (B, I).
    h: Tensor
        Previous state of shape (B, H).
    wx, wh: Tensor
        Weights of shape (I, 3H) and (H, 3H), gate order r, z, n.
    bx, bh: Tensor
        Biases of shape (3H,).

    Returns
    -------
    New state of shape (B, H).
    """
    nh = h.shape[-1]
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeError('gru_step', x.shape, h.shape, 'expected (B, I) input and (B, H) state')
    if wx.shape != (x.shape[1], 3 * nh):
        raise ShapeError('gru_step', x.shape, wx.shape, 'input weight must be (I, 3H)')
    if wh.shape != (nh, 3 * nh):
        raise ShapeError('gru_step', h.shape, wh.shape, 'state weight must be (H, 3H)')
    if bx.shape != (3 * nh,) or bh.shape != (3 * nh,):
        raise ShapeError('gru_step', bx.shape, bh.shape, 'biases must be (3H,)')

    gx = x.values @ wx.values + bx.values
    gh = h.values @ wh.values + bh.values
    r = expit(gx[:, :nh] + gh[:, :nh])
    z = expit(gx[:, nh:2 * nh] + gh[:, nh:2 * nh])
    ghn = gh[:, 2 * nh:]
    n = np.tanh(gx[:, 2 * nh:] + r * ghn)
    y = (1.0 - z) * n + z * h.values

    def bw(out):
        g = out.grad
        dan = g * (1.0 - z) * (1.0 - n ** 2)
        daz = g * (h.values - n) * z * (1.0 - z)
        dar = dan * ghn * r * (1.0 - r)
        dgx = np.concatenate([dar, daz, dan], axis=1)
        dgh = np.concatenate([dar, daz, dan * r], axis=1)
        if x.requires_grad:
            x._accumulate(dgx @ wx.values.T)
        if h.requires_grad:
            h._accumulate(g * z + dgh @ wh.values.T)
        if wx.requires_grad:
            wx._accumulate(x.values.T @ dgx)
        if wh.requires_grad:
            wh._accumulate(h.values.T @ dgh)
        if bx.requires_grad:
            bx._accumulate(dgx.sum(0))
        if bh.requires_grad:
            bh._accumulate(dgh.sum(0))
    return _result(y, (x, h, wx, wh, bx, bh), 'gru_step', bw)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention softmax(q kᵀ / √a) v.

    Parameters
    ----------
    q: Tensor
        Queries of shape (B, M, A).
    k: Tensor
        Keys of shape (B, N, A).
    v: Tensor
        Values of shape (B, N, C).

    Returns
    -------
    Context of shape (B, M, C).
    """
    if q.ndim != 3 or k.ndim != 3 or q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        raise ShapeError('attention', q.shape, k.shape, 'queries and keys must be (B, M, A) and (B, N, A)')
    if v.ndim != 3 or v.shape[:2] != k.shape[:2]:
        raise ShapeError('attention', k.shape, v.shape, 'keys and values must share (B, N)')
    s = 1.0 / np.sqrt(q.shape[2])
    p = np_softmax(np.matmul(q.values, np.swapaxes(k.values, 1, 2)) * s, axis=-1)

    def bw(out):
        g = out.grad
        dp = np.matmul(g, np.swapaxes(v.values, 1, 2))
        ds = p * (dp - (dp * p).sum(-1, keepdims=True)) * s
        if q.requires_grad:
            q._accumulate(np.matmul(ds, k.values))
        if k.requires_grad:
            k._accumulate(np.matmul(np.swapaxes(ds, 1, 2), q.values))
        if v.requires_grad:
            v._accumulate(np.matmul(np.swapaxes(p, 1, 2), g))
    return _result(np.matmul(p, v.values), (q, k, v), 'attention', bw)
