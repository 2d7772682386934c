"""Dense float64 tensors with tape-based reverse-mode differentiation.

The op vocabulary is exactly what the tiny transformer, its training
losses, and the policy/value networks need: matmul, broadcast add,
elementwise multiply, scalar multiply, row gather, softmax, layer norm,
gelu, mean/sum reduction, cross entropy against integer targets,
concatenation, elementwise log, plus the structural reshape/transpose
moves. The tape is rebuilt on every forward pass; there is no graph
caching. Gradients accumulate additively until zeroed by the caller.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float64

# tanh-approximation gelu cubic coefficient
GELU_C3 = 0.044715
_GELU_K = math.sqrt(2.0 / math.pi)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(op)


class Tensor:
    """A node in the computation tape.

    ``data`` is immutable by convention once the node has consumers;
    ``grad`` is filled by :func:`backpropagate` and accumulates across
    calls until reset.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """A constant leaf sharing this tensor's values (gradient severed)."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    # Arithmetic sugar; every dunder defers to the module-level op.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scalar_mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scalar_mul(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DTYPE))


def constant(x) -> Tensor:
    return _as_tensor(x)


def _make(op: str, data: np.ndarray, parents, backward) -> Tensor:
    _check_finite(op, data)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward, op=op)
    # Eval-mode fast path: no tape entry.
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=DTYPE)
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make("add", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make("mul", out, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def backward(g):
        _accum(a, g * c)

    return _make("scalar_mul", out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = np.matmul(a.data, b.data)

    def backward(g):
        _accum(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))

    return _make("matmul", out, (a, b), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make("transpose", out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make("reshape", out, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors])
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make("concat", out, tuple(tensors), backward)


def gather_rows(table: Tensor, idx) -> Tensor:
    """Index-select along the first axis (embedding lookup / prob picking)."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("gather_rows", table.shape, idx.shape)
    out = table.data[idx]

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            _accum(table, acc)

    return _make("gather_rows", out, (table,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, numerically stable."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - dot))

    return _make("softmax", out, (a,), backward)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make("log", out, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_K * (x + GELU_C3 * x2 * x))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_K * (1.0 + 3.0 * GELU_C3 * x2)
        _accum(a, g * d)

    return _make("gelu", out, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", a.shape, gain.shape, bias.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gh = g * gain.data
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            _accum(a, dx)

    return _make("layer_norm", out, (a, gain, bias), backward)


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make("sum", out, (a,), backward)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(reduce_sum(a, axis), 1.0 / n)


def mean_pool(a: Tensor, mask=None) -> Tensor:
    """Mean over the sequence axis (second-to-last), optionally restricted
    to positions where ``mask`` is true."""
    if mask is None:
        return reduce_mean(a, axis=-2)
    w = np.asarray(mask, dtype=DTYPE)
    counts = w.sum(axis=-1, keepdims=True)
    if (counts == 0).any():
        raise ShapeError("mean_pool", a.shape, w.shape)
    weights = (w / counts)[..., None]
    return reduce_sum(mul(a, constant(weights)), axis=-2)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted negative log likelihood of integer `targets` under
    softmax(logits) rows. Default weights are 1/num_rows (mean loss)."""
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy", logits.shape)
    targets = np.asarray(targets, dtype=np.int64)
    m, v = logits.shape
    if targets.shape != (m,) or (m and (targets.min() < 0 or targets.max() >= v)):
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    w = np.full(m, 1.0 / m, dtype=DTYPE) if weights is None else np.asarray(weights, dtype=DTYPE)
    zmax = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - zmax
    logz = np.log(np.exp(z).sum(axis=-1)) + zmax[:, 0]
    nll = logz - logits.data[np.arange(m), targets]
    out = np.asarray((w * nll).sum())

    def backward(g):
        p = np.exp(z)
        p /= p.sum(axis=-1, keepdims=True)
        p[np.arange(m), targets] -= 1.0
        _accum(logits, g * w[:, None] * p)

    return _make("cross_entropy", out, (logits,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; active only when the caller is in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError("dropout", a.shape)
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g):
        _accum(a, g * keep)

    return _make("dropout", a.data * keep, (a,), backward)


# ---------------------------------------------------------------------------
# Graph evaluation and backprop
# ---------------------------------------------------------------------------

def evaluate_graph(graph, inputs: dict) -> Tensor:
    """Run a composed op sequence on named input tensors.

    ``graph`` is a callable assembled from the ops above; the tape it
    builds is sufficient for :func:`backpropagate`.
    """
    out = graph(**inputs)
    if not isinstance(out, Tensor):
        raise TypeError("graph must return a Tensor")
    return out


def backpropagate(loss: Tensor) -> None:
    """Fill `grad` on every requires_grad ancestor of a scalar loss.

    Calling twice without zeroing accumulates, matching the additive
    gradient contract.
    """
    if loss.data.size != 1:
        raise ShapeError("backpropagate", loss.shape)
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def finite_difference_check(graph, inputs: dict, h: float = 1e-5, max_coords: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and central differences.

    Perturbs each requires_grad input coordinate by +-h (all coordinates,
    or a seeded sample of ``max_coords`` per tensor for large graphs) and
    compares against the analytic gradient. The relative error denominator
    is max(|analytic|, |numeric|, 1e-8).
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"h must be in (0, 1e-2], got {h}")
    loss = evaluate_graph(graph, inputs)
    for t in inputs.values():
        t.zero_grad()
    backpropagate(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in inputs.items() if t.requires_grad}

    worst = 0.0
    for name, t in inputs.items():
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        ana = analytic[name].reshape(-1)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + h
            lo_hi = float(evaluate_graph(graph, inputs).data)
            flat[j] = orig - h
            lo_lo = float(evaluate_graph(graph, inputs).data)
            flat[j] = orig
            numeric = (lo_hi - lo_lo) / (2.0 * h)
            denom = max(abs(ana[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(numeric - ana[j]) / denom)
    return worst
