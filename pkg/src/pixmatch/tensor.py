"""Dense tensors with reverse-mode automatic differentiation.

The graph machinery is deliberately small: every operation returns a new
Tensor that remembers its input tensors and a closure that turns the output
gradient into input gradients. ``backward`` walks the recorded graph once in
reverse topological order and accumulates into ``.grad`` of every tensor that
requires gradients.

Storage defaults to float32. No op forces a dtype, so the same code paths run
in float64 for the finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np

_FINITE_CHECKS = False


def set_finite_checks(enabled: bool) -> None:
    """Screen every op result for NaN/Inf (slow, meant for test runs)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """N-d real array with an optional gradient buffer.

    ``data`` is always a float numpy array. ``grad``, when populated, has the
    same shape as ``data``. Tensors created by ops carry the backward closure
    used by :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._backward_ran = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError("tensor contains NaN or Inf")

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _make(data, parents, backward_fn) -> Tensor:
    """Wrap an op result, attaching graph edges only when gradients can flow."""
    out = Tensor(data)
    if _FINITE_CHECKS:
        out.assert_finite()
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.reshape(t.data.shape)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar. Gradients accumulate, so callers zero them
    between steps. Running backward twice on the same graph is an error.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if loss._backward_ran:
        raise RuntimeError("backward already ran on this graph; rebuild the graph before calling again")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    loss._backward_ran = True
    if _FINITE_CHECKS:
        for node in topo:
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise FloatingPointError("gradient contains NaN or Inf")


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise / reduction ops

def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bw)


def tensor_sum(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(), (a,), bw)


def weighted_sum(a: Tensor, weights) -> Tensor:
    """sum(a * weights) for a fixed weight array; the gradient-check probe."""
    w = np.asarray(weights, dtype=a.dtype)
    if w.shape != a.shape:
        raise ValueError("weighted_sum: weight shape mismatch")

    def bw(g):
        _accum(a, g * w)

    return _make((a.data * w).sum(), (a,), bw)


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is taken as 0
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0), (a,), bw)


def concat_channels(tensors) -> Tensor:
    """Concatenate along the channel axis (axis 1 of NCHW)."""
    tensors = list(tensors)
    base = tensors[0]
    for t in tensors[1:]:
        if t.shape[0] != base.shape[0] or t.shape[2:] != base.shape[2:]:
            raise ValueError(f"concat_channels: incompatible shapes {tuple(base.shape)} vs {tuple(t.shape)}")
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accum(t, g[:, lo:hi])

    return _make(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bw)


def gaussian_init(shape, std: float, seed: int, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    """i.i.d. normal(0, std^2) tensor from a seeded generator."""
    if std < 0:
        raise ValueError("gaussian_init: std must be >= 0")
    rng = np.random.default_rng(seed)
    data = (rng.standard_normal(shape) * float(std)).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)
