"""Reverse-mode differentiation tape over numpy arrays.

Minimal autodiff engine for training stateful spiking layers with
backpropagation through time.  Tensors wrap float64 or complex128 numpy
arrays; operations executed inside an active ``Tape`` append nodes in
forward (topological) order, and ``Tape.backward`` replays them once in
reverse, accumulating gradients additively into ``Tensor.grad``.

Complex tensors carry a "packed" gradient: ``grad = dL/d(re) + 1j * dL/d(im)``.
With this convention the backward rule of any holomorphic primitive
``u = f(x)`` is ``grad_x = grad_u * conj(f'(x))``, and a real parameter that
feeds a complex expression receives the real part of the packed gradient.

The two hard nonlinearities (spiking threshold and reset condition) are
custom nodes: the forward pass emits exact step values while the backward
pass substitutes a boxcar of half-width ``w`` and height ``1/(2w)``.  Each
also has a "smooth" forward variant (the running integral of its boxcar),
used by gradient-correctness tests so finite differences are meaningful.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf

_FLOAT = np.float64
_COMPLEX = np.complex128
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_state = threading.local()


def _active_tape():
    if getattr(_state, "no_grad", False):
        return None
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class no_grad:
    """Context manager suppressing tape recording (forward-only evaluation)."""

    def __enter__(self):
        self._prev = getattr(_state, "no_grad", False)
        _state.no_grad = True
        return self

    def __exit__(self, *exc):
        _state.no_grad = self._prev
        return False


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended in execution order, which is a valid topological
    order of the computation graph.  ``backward`` walks the list once in
    reverse; every node is visited exactly once and gradients accumulate
    additively, so a value consumed by several downstream operations
    receives the sum of their contributions.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.visited = 0

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    def backward(self, loss: "Tensor"):
        """Run the reverse sweep from a real scalar loss."""
        if loss.data.size != 1 or np.iscomplexobj(loss.data):
            raise ValueError("backward() needs a real scalar loss")
        loss.grad = np.ones_like(loss.data)
        self.visited = 0
        for node in reversed(self.nodes):
            if node.grad is None:
                continue  # no path from this node to the loss
            node._backward(node.grad)
            self.visited += 1
            if node is not loss:
                node.grad = None  # free intermediate gradients early


class Tensor:
    """A float64/complex128 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(_COMPLEX, copy=False)
        else:
            arr = arr.astype(_FLOAT, copy=False)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # operator sugar; every route goes through the module-level primitives
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


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    """Create a trainable leaf; rejects non-finite values."""
    t = Tensor(np.array(data), requires_grad=True, name=name)
    if not np.all(np.isfinite(t.data.view(_FLOAT) if t.is_complex else t.data)):
        raise ValueError(f"non-finite values in parameter {name!r}")
    return t


def _make_node(data, inputs: tuple, backward) -> Tensor:
    """Wrap an op result; record on the active tape when gradients are needed."""
    out = Tensor(data)
    tape = _active_tape()
    needs = any(isinstance(t, Tensor) and (t.requires_grad or t._backward is not None)
                for t in inputs)
    if tape is not None and needs:
        out.requires_grad = True
        out._backward = backward
        tape.nodes.append(out)
    return out


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _to_operand_grad(g: np.ndarray, t: Tensor) -> np.ndarray:
    g = _unbroadcast(g, t.data.shape)
    if not t.is_complex and np.iscomplexobj(g):
        g = g.real
    return g


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if _wants_grad(a):
            a.accumulate(_to_operand_grad(g, a))
        if _wants_grad(b):
            b.accumulate(_to_operand_grad(g, b))

    return _make_node(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if _wants_grad(a):
            a.accumulate(_to_operand_grad(g, a))
        if _wants_grad(b):
            b.accumulate(_to_operand_grad(-g, b))

    return _make_node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if _wants_grad(a):
            a.accumulate(_to_operand_grad(g * np.conj(b.data), a))
        if _wants_grad(b):
            b.accumulate(_to_operand_grad(g * np.conj(a.data), b))

    return _make_node(data, (a, b), backward)


def div(a, b) -> Tensor:
    """Elementwise division, real operands only."""
    a, b = as_tensor(a), as_tensor(b)
    if a.is_complex or b.is_complex:
        raise TypeError("div supports real tensors only")
    data = a.data / b.data

    def backward(g):
        if _wants_grad(a):
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if _wants_grad(b):
            b.accumulate(_unbroadcast(-g * data / b.data, b.data.shape))

    return _make_node(data, (a, b), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    data = a.data * a.data

    def backward(g):
        a.accumulate(_to_operand_grad(g * np.conj(2.0 * a.data), a))

    return _make_node(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("sqrt supports real tensors only")
    data = np.sqrt(a.data)

    def backward(g):
        a.accumulate(g * (0.5 / data))

    return _make_node(data, (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape))

    return _make_node(data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    scale = a.data.size / data.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape) / scale)

    return _make_node(data, (a,), backward)


# ---------------------------------------------------------------------------
# shape / indexing


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate(g.reshape(a.data.shape))

    return _make_node(data, (a,), backward)


def expand_last(a) -> Tensor:
    """Append a trailing length-1 axis (broadcast helper)."""
    return reshape(a, a.data.shape + (1,))


def index_time(a, t: int) -> Tensor:
    """Select step ``t`` from a (B, T, ...) tensor."""
    a = as_tensor(a)
    data = a.data[:, t]

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:, t] += g

    return _make_node(data, (a,), backward)


def stack(tensors: list, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, pieces):
            t.accumulate(piece)

    return _make_node(data, tuple(tensors), backward)


def real(a) -> Tensor:
    a = as_tensor(a)
    data = a.data.real.copy()

    def backward(g):
        a.accumulate(g.astype(_COMPLEX))

    return _make_node(data, (a,), backward)


def imag(a) -> Tensor:
    a = as_tensor(a)
    data = a.data.imag.copy()

    def backward(g):
        a.accumulate(1j * g)

    return _make_node(data, (a,), backward)


# ---------------------------------------------------------------------------
# contractions


def linear(x, w) -> Tensor:
    """``y[..., h] = sum_f x[..., f] * w[h, f]`` via BLAS matmul (real)."""
    x, w = as_tensor(x), as_tensor(w)
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    data = (x2 @ w.data.T).reshape(lead + (w.data.shape[0],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if _wants_grad(x):
            x.accumulate((g2 @ w.data).reshape(x.data.shape))
        if _wants_grad(w):
            w.accumulate(g2.T @ x2)

    return _make_node(data, (x, w), backward)


def _adjoint_spec(spec: str):
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s in (sa, sb, out):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index in einsum2 spec {spec!r}")
    if not (set(sa) <= set(out) | set(sb) and set(sb) <= set(out) | set(sa)):
        raise ValueError(f"einsum2 spec {spec!r} has an unpaired index")
    return f"{out},{sb}->{sa}", f"{out},{sa}->{sb}"


def einsum2(spec: str, a, b) -> Tensor:
    """Two-operand einsum with automatic adjoint (real or complex)."""
    a, b = as_tensor(a), as_tensor(b)
    spec_a, spec_b = _adjoint_spec(spec)
    data = np.einsum(spec, a.data, b.data)

    def backward(g):
        if _wants_grad(a):
            ga = np.einsum(spec_a, g, np.conj(b.data))
            a.accumulate(ga.real if not a.is_complex else ga)
        if _wants_grad(b):
            gb = np.einsum(spec_b, g, np.conj(a.data))
            b.accumulate(gb.real if not b.is_complex else gb)

    return _make_node(data, (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def heaviside(x, theta=1.0, w: float = 0.5, smooth: bool = False,
              at_least: bool = False) -> Tensor:
    """Unit step with boxcar surrogate derivative.

    Forward emits 1 where ``x > theta`` (or ``x >= theta`` when
    ``at_least``, the reset-condition convention), else 0.  Backward is the
    boxcar ``1/(2w)`` on ``|x - theta| <= w``.  The smooth variant replaces
    the step by the boxcar's running integral, a ramp from 0 to 1 across
    the surrogate window, so numeric gradient checks see a consistent
    forward/backward pair.
    """
    if w <= 0:
        raise ValueError("surrogate half-width w must be positive")
    x = as_tensor(x)
    if smooth:
        data = np.clip((x.data - theta + w) / (2.0 * w), 0.0, 1.0)
    elif at_least:
        data = (x.data >= theta).astype(_FLOAT)
    else:
        data = (x.data > theta).astype(_FLOAT)

    def backward(g):
        x.accumulate(g * boxcar(x.data, theta, w))

    return _make_node(data, (x,), backward)


def signed_spike(x, theta=1.0, w: float = 0.5, smooth: bool = False) -> Tensor:
    """Ternary step: +1 above ``theta``, -1 below ``-theta``, else 0.

    Backward is the sum of boxcars centred at the two thresholds.
    """
    if theta <= 0:
        raise ValueError("signed_spike needs theta > 0")
    if w <= 0:
        raise ValueError("surrogate half-width w must be positive")
    x = as_tensor(x)
    if smooth:
        up = np.clip((x.data - theta + w) / (2.0 * w), 0.0, 1.0)
        dn = np.clip((-x.data - theta + w) / (2.0 * w), 0.0, 1.0)
        data = up - dn
    else:
        data = (x.data > theta).astype(_FLOAT) - (x.data < -theta).astype(_FLOAT)

    def backward(g):
        x.accumulate(g * (boxcar(x.data, theta, w) + boxcar(x.data, -theta, w)))

    return _make_node(data, (x,), backward)


def boxcar(x: np.ndarray, theta, w: float) -> np.ndarray:
    """Surrogate derivative: ``1/(2w)`` on ``|x - theta| <= w``, else 0."""
    if w <= 0:
        raise ValueError("surrogate half-width w must be positive")
    x = np.asarray(x, dtype=_FLOAT)
    return np.where(np.abs(x - theta) <= w, 1.0 / (2.0 * w), 0.0)


def gelu(x) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit with exact derivative."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    data = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x.accumulate(g * (cdf + x.data * pdf))

    return _make_node(data, (x,), backward)


def l2_norm(y, axis=None) -> Tensor:
    """Euclidean norm: sqrt of the summed squared moduli of the entries."""
    y = as_tensor(y)
    sq = (y.data.real * y.data.real + y.data.imag * y.data.imag) \
        if y.is_complex else y.data * y.data
    data = np.sqrt(sq.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g_e = np.expand_dims(g, axis)
            r_e = np.expand_dims(data, axis)
        else:
            g_e, r_e = g, data
        scale = np.where(r_e > 0.0, g_e / np.where(r_e > 0.0, r_e, 1.0), 0.0)
        y.accumulate(scale * y.data)

    return _make_node(data, (y,), backward)


def modulus_clip(v, cap: float) -> Tensor:
    """Clip complex entries to modulus ``cap``, preserving phase.

    Backward passes gradients only through unclipped entries; the clip is
    a true saturation, not a straight-through estimator.
    """
    v = as_tensor(v)
    mod = np.abs(v.data)
    clipped = mod > cap
    scale = np.where(clipped, cap / np.where(clipped, mod, 1.0), 1.0)
    data = v.data * scale

    def backward(g):
        v.accumulate(np.where(clipped, 0.0, g))

    return _make_node(data, (v,), backward)


def custom_node(data, inputs: tuple, backward) -> Tensor:
    """Expose node creation for fused operations defined in other modules."""
    return _make_node(data, tuple(as_tensor(t) for t in inputs), backward)


# ---------------------------------------------------------------------------
# numeric gradient oracle


def finite_difference_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``x`` is a real 1-D parameter vector; ``f`` must return a finite real
    scalar at every perturbed point.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=_FLOAT).copy()
    grad = np.zeros_like(x)
    for k in range(x.size):
        orig = x[k]
        x[k] = orig + eps
        f_plus = float(f(x))
        x[k] = orig - eps
        f_minus = float(f(x))
        x[k] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite function value at coordinate {k}")
        grad[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad
