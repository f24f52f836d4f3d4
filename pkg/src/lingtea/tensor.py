"""Minimal reverse-mode autodiff over dense float64 arrays.

The graph is built on the fly (define-by-run). Every op returns a new
:class:`Tensor` holding references to its parents and a closure that maps the
upstream gradient to one gradient per parent. :meth:`Tensor.backward` sorts the
graph topologically and replays those closures in reverse.

Broadcasting is limited to leading batch dimensions: a right operand may have
fewer dimensions than the left one, as long as its shape matches the trailing
dimensions of the left operand.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import ContractError, DimensionError, VocabularyError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_freed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._freed = False

    # -- basic properties ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- backward ------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` on every leaf that requires grad.

        The graph is released afterwards; a second call on the same graph
        raises :class:`ContractError` instead of double-accumulating.
        """
        if self.data.size != 1 or self.data.ndim != 0:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._freed:
            raise ContractError("backward() already ran on this graph; rebuild it with a new forward pass")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._freed = True

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._freed:
            raise ContractError("graph contains a node whose backward already ran")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} are incompatible")


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "add")

    def backward(g):
        return g, _sum_to(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "sub")

    def backward(g):
        return g, -_sum_to(g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "mul")

    def backward(g):
        return g * b.data, _sum_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    x = a.data
    inner = _GELU_C * x * (1.0 + 0.044715 * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _result(out, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    return _result(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.full(a.shape, float(g) / n),), "mean")


def sum_last(a: Tensor) -> Tensor:
    """Sum over the last axis."""
    return _result(a.data.sum(axis=-1), (a,), lambda g: (np.repeat(g[..., None], a.shape[-1], axis=-1),), "sum_last")


def weighted_sum(a: Tensor, weights) -> Tensor:
    """``sum(a * w)`` for a constant weight array ``w`` of the same shape."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != a.shape:
        raise DimensionError(f"weighted_sum: shapes {list(a.shape)} and {list(w.shape)} differ")
    return _result(np.asarray((a.data * w).sum()), (a,), lambda g: (g * w,), "weighted_sum")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=()) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape)
        if isinstance(index, np.ndarray) or (isinstance(index, tuple) and any(isinstance(i, np.ndarray) for i in index)):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _result(np.array(out, dtype=np.float64), (a,), backward, "getitem")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with leading batch dims on ``a`` (and optionally ``b``)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {list(a.shape)} and {list(b.shape)} do not align")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch dims of {list(a.shape)} and {list(b.shape)} differ")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` (``[V, d]``) at integer ``ids`` of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise VocabularyError(f"token id out of range [0, {weight.shape[0]})")

    def backward(g):
        full = np.zeros(weight.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _result(weight.data[ids], (weight,), backward, "embedding")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: affine params {list(gamma.shape)} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _result(out, (x, gamma, beta), backward, "layer_norm")


# ---------------------------------------------------------------------------
# probability ops
# ---------------------------------------------------------------------------

def _check_vocab_axis(x: Tensor, op: str) -> None:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"{op}: last dimension must be a vocabulary of size >= 1, got {list(x.shape)}")


def softmax(x: Tensor) -> Tensor:
    _check_vocab_axis(x, "softmax")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (x,), backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    _check_vocab_axis(x, "log_softmax")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def gather_log_prob(log_probs: Tensor, targets) -> Tensor:
    """Pick ``log_probs[..., t, targets[..., t]]``; output drops the vocab axis."""
    targets = np.asarray(targets, dtype=np.int64)
    if log_probs.shape[:-1] != targets.shape:
        raise DimensionError(f"gather_log_prob: log_probs {list(log_probs.shape)} vs targets {list(targets.shape)}")
    V = log_probs.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise VocabularyError(f"target id out of range [0, {V})")
    out = np.take_along_axis(log_probs.data, targets[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros(log_probs.shape)
        np.put_along_axis(full, targets[..., None], g[..., None], axis=-1)
        return (full,)

    return _result(out, (log_probs,), backward, "gather_log_prob")


def kl_rows(p_log: Tensor, q_log: Tensor) -> Tensor:
    """Per-row ``D_KL(p || q)`` for log-distributions over the last axis.

    Entries where ``p`` is exactly zero contribute exactly zero.
    """
    if p_log.shape != q_log.shape:
        raise DimensionError(f"kl_divergence: shapes {list(p_log.shape)} and {list(q_log.shape)} differ")
    _check_vocab_axis(p_log, "kl_divergence")
    p = np.exp(p_log.data)
    live = p > 0
    diff = np.where(live, p_log.data - q_log.data, 0.0)
    out = (p * diff).sum(axis=-1)

    def backward(g):
        gq = -p * g[..., None]
        gp = None
        if p_log.requires_grad:
            gp = np.where(live, p * (diff + 1.0), 0.0) * g[..., None]
        return gp, gq

    return _result(out, (p_log, q_log), backward, "kl_rows")


def kl_divergence(p_log: Tensor, q_log: Tensor) -> Tensor:
    """Mean over rows of ``D_KL(p || q)``."""
    return mean_all(kl_rows(p_log, q_log))


def causal_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention with a causal mask over the last two axes.

    ``q``, ``k``, ``v`` have shape ``[..., T, d_head]``; position ``t`` attends to
    positions ``<= t`` only. Masked scores are ``-inf`` so they carry exactly
    zero weight.
    """
    if not (q.shape == k.shape == v.shape) or q.ndim < 2:
        raise DimensionError(f"causal_attention: q {list(q.shape)}, k {list(k.shape)}, v {list(v.shape)}")
    T, dh = q.shape[-2], q.shape[-1]
    c = 1.0 / math.sqrt(dh)
    future = np.triu(np.ones((T, T), dtype=bool), k=1)
    s = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * c
    s = np.where(future, -np.inf, s)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=-1, keepdims=True)
    out = np.matmul(p, v.data)

    def backward(g):
        gv = np.matmul(np.swapaxes(p, -1, -2), g)
        dp = np.matmul(g, np.swapaxes(v.data, -1, -2))
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        gq = np.matmul(ds, k.data) * c
        gk = np.matmul(np.swapaxes(ds, -1, -2), q.data) * c
        return gq, gk, gv

    return _result(out, (q, k, v), backward, "causal_attention")


def masked_row_mean(x: Tensor, mask) -> Tensor:
    """Mean over the last axis restricted to ``mask``; one value per row.

    Rows with an empty mask are rejected.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"masked_row_mean: mask {list(mask.shape)} vs input {list(x.shape)}")
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise DimensionError("masked_row_mean: a row has no unmasked entries")
    out = np.where(mask, x.data, 0.0).sum(axis=-1) / counts

    def backward(g):
        return (np.where(mask, (g / counts)[..., None], 0.0),)

    return _result(out, (x,), backward, "masked_row_mean")
