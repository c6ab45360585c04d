"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every operation records its parents and a closure that maps the
output gradient to parent gradients. Graphs are built only along paths that
require gradients, so forward-only evaluation carries no bookkeeping cost.
Everything is single-threaded numpy, which makes gradients bit-reproducible
for a fixed input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class Tensor:
    """An ndarray plus an optional gradient slot and backward closure."""

    # Keep numpy from absorbing Tensor operands into object arrays; reflected
    # operators (__radd__ etc.) must win.
    __array_ufunc__ = None

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    # -- graph machinery -----------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Run reverse-mode accumulation from this node.

        Without an explicit seed the node must be scalar-sized (a loss).
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar tensor")
            grad = np.ones_like(self.data)
        # Iterative post-order topological sort (graphs can be deep).
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad=False, name=None):
    """Wrap an array-like as a Tensor leaf."""
    return Tensor(np.asarray(data), requires_grad=requires_grad, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _result(data, parents, backward):
    """Build an op output; prune the graph when no parent needs gradients."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------------


def _parts(x):
    """Split an operand into (tensor-or-None, raw value).

    Python scalars stay python scalars: numpy treats them as weak under type
    promotion, so float32 pipelines are not upcast by literal constants.
    """
    if isinstance(x, Tensor):
        return x, x.data
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return None, x
    return None, np.asarray(x)


def _binary(a, b, fwd, da, db):
    ta, va = _parts(a)
    tb, vb = _parts(b)
    out = fwd(va, vb)
    parents = tuple(t for t in (ta, tb) if t is not None)
    if not any(t.requires_grad for t in parents):
        return Tensor(out)

    def backward(g):
        if ta is not None and ta.requires_grad:
            ta._accumulate(_unbroadcast(da(g, va, vb), ta.data.shape))
        if tb is not None and tb.requires_grad:
            tb._accumulate(_unbroadcast(db(g, va, vb), tb.data.shape))

    return Tensor(out, requires_grad=True, _parents=parents, _backward=backward)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def power(a, p):
    """Elementwise a**p for a constant scalar exponent."""
    a = as_tensor(a)
    p = float(p)
    out = a.data**p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _result(out, (a,), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _result(out, (a, b), backward)


# -- elementwise functions ------------------------------------------------------


def _unary(a, fwd, dfn):
    a = as_tensor(a)
    out = fwd(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * dfn(a.data, out))

    return _result(out, (a,), backward)


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def sin(a):
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def cos(a):
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def sigmoid(a):
    return _unary(a, expit, lambda x, y: y * (1.0 - y))


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(x.dtype))


def absolute(a):
    # sign(0) = 0, so |x| has zero gradient exactly at x = 0.
    return _unary(a, np.abs, lambda x, y: np.sign(x))


def clip(a, lo=None, hi=None):
    """Clamp with zero gradient outside the open interval (lo, hi)."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            mask = np.ones_like(a.data, dtype=bool)
            if lo is not None:
                mask &= a.data > lo
            if hi is not None:
                mask &= a.data < hi
            a._accumulate(g * mask)

    return _result(out, (a,), backward)


def where(cond, a, b):
    """Select with a constant boolean mask."""
    cond = np.asarray(cond)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * cond, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~cond, b.data.shape))

    return _result(out, (a, b), backward)


# -- reductions ----------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _result(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def amax(a):
    """Full reduction; gradient routes to the first argmax (deterministic)."""
    a = as_tensor(a)
    idx = int(np.argmax(a.data))
    out = a.data.reshape(-1)[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf.reshape(-1)[idx] = g
            a._accumulate(buf)

    return _result(out, (a,), backward)


def amin(a):
    a = as_tensor(a)
    idx = int(np.argmin(a.data))
    out = a.data.reshape(-1)[idx]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf.reshape(-1)[idx] = g
            a._accumulate(buf)

    return _result(out, (a,), backward)


# -- shape manipulation ----------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _result(out, (a,), backward)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, ax1, ax2))

    return _result(out, (a,), backward)


def take(a, key):
    """Indexing/slicing; the adjoint scatter-adds (duplicates accumulate)."""
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, key, g)
            a._accumulate(buf)

    return _result(out, (a,), backward)


def concatenate(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for p, piece in zip(parts, pieces):
            if p.requires_grad:
                p._accumulate(piece)

    return _result(out, tuple(parts), backward)


def stack(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(np.take(g, i, axis=axis))

    return _result(out, tuple(parts), backward)


# -- image filtering --------------------------------------------------------------


def filter2d(img, kernel):
    """Valid-mode 2-D correlation of a (H, W) image with a small kernel.

    Differentiable with respect to both the image and the kernel, which the
    learnable 3x3 depth-uncertainty filter relies on.
    """
    img, kernel = as_tensor(img), as_tensor(kernel)
    kh, kw = kernel.data.shape
    windows = np.lib.stride_tricks.sliding_window_view(img.data, (kh, kw))
    out = np.tensordot(windows, kernel.data, axes=2)

    def backward(g):
        if kernel.requires_grad:
            kernel._accumulate(np.tensordot(windows, g, axes=((0, 1), (0, 1))))
        if img.requires_grad:
            gpad = np.pad(g, ((kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = np.lib.stride_tricks.sliding_window_view(gpad, (kh, kw))
            img._accumulate(np.tensordot(gwin, kernel.data[::-1, ::-1], axes=2))

    return _result(out, (img, kernel), backward)


def pad_replicate(img, p):
    """Edge-replicating pad of a (H, W) image by p pixels on every side."""
    img = as_tensor(img)
    h, w = img.data.shape
    rows = np.clip(np.arange(-p, h + p), 0, h - 1)
    cols = np.clip(np.arange(-p, w + p), 0, w - 1)
    return take(img, (rows[:, None], cols[None, :]))


# -- parameter bookkeeping ---------------------------------------------------------


class ParamSet:
    """Named parameter tensors with gradient slots and group labels.

    Groups drive per-group learning rates in the optimizer; iteration order is
    insertion order, which keeps every downstream traversal deterministic.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name, value, group):
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = tensor(np.asarray(value), requires_grad=True, name=name)
        self._tensors[name] = t
        self._groups[name] = group
        return t

    def replace(self, name, value):
        """Swap a parameter's storage (used when the cloud is resized)."""
        t = self._tensors[name]
        t.data = np.asarray(value)
        t.grad = None

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def names(self):
        return list(self._tensors)

    def group_of(self, name):
        return self._groups[name]

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def gradients(self):
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._tensors.items()
        }

    def state_arrays(self):
        return {name: t.data for name, t in self._tensors.items()}


def grad(loss_fn, params: ParamSet):
    """Exact reverse-mode gradients of a scalar loss over a ParamSet."""
    params.zero_grad()
    loss = loss_fn()
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("loss_fn must return a scalar Tensor")
    loss.backward()
    return params.gradients()


@dataclass
class FiniteDifferenceReport:
    """Worst-case comparison of analytic gradients against central differences."""

    max_rel_error: float
    worst_param: str
    worst_coord: int
    n_coords: int
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        lines = [
            f"finite-difference check over {self.n_coords} coordinates: "
            f"max relative error {self.max_rel_error:.3e} "
            f"({self.worst_param}[{self.worst_coord}])"
        ]
        for name, err in self.per_param.items():
            lines.append(f"  {name:24s} {err:.3e}")
        return "\n".join(lines)


def finite_difference_check(loss_fn, params: ParamSet, h=1e-5, max_coords=200,
                            min_per_param=1, rng=None, atol=1e-6, rtol_floor=1e-3):
    """Compare analytic gradients with central differences.

    Coordinates are subsampled per parameter (at least ``min_per_param`` from
    each, at most ``max_coords`` overall). Relative error uses a denominator
    floor of ``atol / rtol_floor`` so that differences below ``atol`` never
    register. Parameters are perturbed in place and restored, so ``loss_fn``
    must read current values on every call. Run in float64.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    analytic = grad(loss_fn, params)

    names = params.names()
    sizes = {n: params[n].data.size for n in names}
    total = sum(sizes.values())
    budget = {}
    for n in names:
        share = max(min_per_param, int(round(max_coords * sizes[n] / total)))
        budget[n] = min(sizes[n], share)
    # Trim overshoot from the largest allocations first, keeping the floor.
    while sum(budget.values()) > max(max_coords, min_per_param * len(names)):
        biggest = max(budget, key=lambda n: budget[n])
        if budget[biggest] <= min_per_param:
            break
        budget[biggest] -= 1

    floor = atol / rtol_floor
    max_rel, worst_param, worst_coord, n_done = 0.0, "", -1, 0
    per_param = {}
    for name in names:
        t = params[name]
        flat = t.data.reshape(-1)
        coords = rng.choice(sizes[name], size=budget[name], replace=False)
        worst = 0.0
        for c in coords:
            c = int(c)
            keep = flat[c]
            flat[c] = keep + h
            f_plus = loss_fn().data.item()
            flat[c] = keep - h
            f_minus = loss_fn().data.item()
            flat[c] = keep
            fd = (f_plus - f_minus) / (2.0 * h)
            an = analytic[name].reshape(-1)[c]
            rel = abs(an - fd) / max(abs(an), abs(fd), floor)
            n_done += 1
            if rel > worst:
                worst = rel
            if rel > max_rel:
                max_rel, worst_param, worst_coord = rel, name, c
        per_param[name] = worst
    return FiniteDifferenceReport(max_rel, worst_param, worst_coord, n_done, per_param)
