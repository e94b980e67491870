"""A small reverse-mode automatic differentiation engine on top of numpy.

Every op records its parents and a backward closure on the output tensor when
any input requires a gradient; ``Tensor.backward`` replays those closures in
reverse topological order. All storage is float64.

Broadcasting is deliberately limited to scalar-with-tensor. The two places a
classifier needs more (a bias row added to every sample, a bias per conv
channel) are explicit ops with their own backward rules.
"""

from __future__ import annotations

from numbers import Real
from typing import Callable, Sequence

import numpy as np

from jitlab.errors import ContractError, DimensionError, DomainError

PROB_FLOOR = 1e-12
NORM_GUARD = 0.0


class Tensor:
    """n-dimensional float64 array participating in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has {self.data.size}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
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

    def __truediv__(self, other):
        if not isinstance(other, Real):
            raise DimensionError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    # -- differentiation ----------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every tensor on the tape.

        Gradients add to whatever is already stored; call ``zero_grad`` on the
        leaves between independent backward passes.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(build_tape(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def build_tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
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
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_pair(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are not compatible")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if _is_scalar(t) and g.ndim:
        return np.asarray(g.sum())
    return g


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, x.data, 0.0), (x,), backward, "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(np.atleast_1d(x.data)).reshape(x.shape)

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor._result(s, (x,), backward, "sigmoid")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    out = np.log(x.data)

    def backward(g):
        return (g / x.data,)

    return Tensor._result(out, (x,), backward, "log")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflowed float64")

    def backward(g):
        return (g * out,)

    return Tensor._result(out, (x,), backward, "exp")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Tensor._result(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._result(out, (x,), backward, "reshape")


def index(x: Tensor, key) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    out = np.array(x.data[key])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return Tensor._result(out, (x,), backward, "index")


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias to every row of an (m, n) tensor."""
    if x.ndim != 2 or bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_bias: cannot add {bias.shape} to rows of {x.shape}")

    def backward(g):
        return g, g.sum(axis=0)

    return Tensor._result(x.data + bias.data, (x, bias), backward, "add_bias")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add_bias(out, bias)


def _conv_out(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise DimensionError(f"kernel extent {k} exceeds padded input extent {size + 2 * padding}")
    if span % stride:
        raise DimensionError(
            f"non-integral output extent: ({size}+2*{padding}-{k})/{stride}+1"
        )
    return span // stride + 1


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (C_in, H, W) or a batch (B, C_in, H, W); ``kernels`` is
    (C_out, C_in, kH, kW); the optional ``bias`` has one entry per output
    channel.
    """
    if stride < 1 or padding < 0:
        raise DimensionError("stride must be >= 1 and padding >= 0")
    single = x.ndim == 3
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks {x.shape} / {kernels.shape}")
    xb = x.data[None] if single else x.data
    n, c_in, h, w = xb.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise DimensionError(f"conv2d: input has {c_in} channels, kernels expect {kc}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape}, expected ({c_out},)")
    ho = _conv_out(h, kh, stride, padding)
    wo = _conv_out(w, kw, stride, padding)

    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # n, c, ho, wo, kh, kw
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c_in * kh * kw, ho * wo)
    kmat = kernels.data.reshape(c_out, -1)
    out = np.matmul(kmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, c_out, ho, wo)
    if single:
        out = out[0]

    def backward(g):
        gb = g[None] if single else g
        gm = gb.reshape(n, c_out, ho * wo)
        gk = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(kernels.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(kmat.T, gm).reshape(n, c_in, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + hi:stride, j:j + wi:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
            if single:
                gx = gx[0]
        grads = (gx, gk)
        if bias is not None:
            grads += (gm.sum(axis=(0, 2)),)
        return grads

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._result(out, parents, backward, "conv2d")


# -- classifier heads -------------------------------------------------------
def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis (a vector, or each row of a matrix)."""
    if logits.ndim not in (1, 2) or logits.shape[-1] < 1:
        raise DimensionError(f"softmax expects [c] or [m, c], got {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._result(p, (logits,), backward, "softmax")


def l2_norm(v: Tensor, axis: int | None = None) -> Tensor:
    """Euclidean norm of the whole tensor, or along ``axis``.

    The derivative at the zero vector is taken to be zero.
    """
    sq = (v.data * v.data).sum(axis=axis, keepdims=axis is not None)
    norm = np.sqrt(sq)

    def backward(g):
        safe = np.where(norm > NORM_GUARD, norm, 1.0)
        scale = np.where(norm > NORM_GUARD, 1.0 / safe, 0.0)
        gg = g if axis is None else np.expand_dims(g, axis)
        return (gg * v.data * scale,)

    out = norm if axis is None else np.squeeze(norm, axis=axis)
    return Tensor._result(np.asarray(out), (v,), backward, "l2_norm")


def cross_entropy(probs: Tensor, label) -> Tensor:
    """-log p[label], with p clamped below at 1e-12.

    ``probs`` may be a single distribution [c] with an integer label, or a
    batch [m, c] with an integer array of labels; the batch form returns the
    mean loss.
    """
    c = probs.shape[-1]
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in "iu":
        raise IndexError("labels must be integers")
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"label out of range for {c} classes")
    batched = probs.ndim == 2
    if batched and labels.shape != (probs.shape[0],):
        raise DimensionError("one label per row is required")
    if not batched and labels.size != 1:
        raise DimensionError("a single distribution takes a single label")
    rows = np.arange(probs.shape[0]) if batched else None
    picked = probs.data[rows, labels] if batched else probs.data[labels[0]]
    clamped = np.maximum(picked, PROB_FLOOR)
    losses = -np.log(clamped)
    m = labels.size
    out = losses.mean() if batched else losses

    def backward(g):
        gp = np.zeros_like(probs.data)
        local = np.where(picked >= PROB_FLOOR, -1.0 / clamped, 0.0)
        if batched:
            gp[rows, labels] = g * local / m
        else:
            gp[labels[0]] = g * local
        return (gp,)

    return Tensor._result(np.asarray(out, dtype=np.float64), (probs,), backward, "cross_entropy")


# -- finite-difference checking --------------------------------------------
def numerical_gradient(fn: Callable[[], Tensor], array: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """max_i |a_i - n_i| / max(|a_i| + |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.abs(a) + np.abs(n), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-4) -> float:
    """Worst relative error between backward() and central differences over ``params``."""
    for p in params:
        p.zero_grad()
    fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_gradient(fn, p.data, step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
