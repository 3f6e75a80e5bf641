"""Reverse-mode automatic differentiation over dense numpy arrays.

Small define-by-run graph: enough for coordinate MLPs, hash-grid feature
gathers and the training losses. Float32 by default; build parameters with
dtype=np.float64 when running gradient checks.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

CHECKPOINT_MAGIC = b"INVE"
CHECKPOINT_VERSION = 1


class ContractViolation(ValueError):
    """An operation was called outside its stated contract."""


class ConfigurationError(ValueError):
    """Bad or unsupported configuration value."""


def _as_array(values, dtype=None) -> np.ndarray:
    arr = np.asarray(values)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.kind != "f":
        return arr.astype(DEFAULT_DTYPE)
    return arr


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of a computation graph holding a dense array."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    _counter = 0

    def __init__(self, values, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], None] | None = None,
                 dtype=None):
        self.values = _as_array(values, dtype)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # -- graph helpers -------------------------------------------------

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(grad, self.values.shape),
                                 dtype=self.values.dtype)
        else:
            self.grad += grad

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(
            np.asarray(other, dtype=self.values.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor(self.values + other.values, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_sum_to_shape(g, self.values.shape))
            if other.requires_grad:
                other._accumulate(_sum_to_shape(g, other.values.shape))
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.values, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)
        out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.values * other.values, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_sum_to_shape(g * other.values, self.values.shape))
            if other.requires_grad:
                other._accumulate(_sum_to_shape(g * self.values, other.values.shape))
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor(self.values / other.values, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_sum_to_shape(g / other.values, self.values.shape))
            if other.requires_grad:
                other._accumulate(_sum_to_shape(
                    -g * self.values / (other.values ** 2), other.values.shape))
        out._backward = backward
        return out

    def __pow__(self, exponent: float):
        out = Tensor(self.values ** exponent, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.values ** (exponent - 1))
        out._backward = backward
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.values.shape[-1] != other.values.shape[0]:
            raise ContractViolation(
                f"matmul inner dimensions disagree: {self.values.shape} @ {other.values.shape}")
        out = Tensor(self.values @ other.values, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.values.T)
            if other.requires_grad:
                other._accumulate(self.values.T @ g)
        out._backward = backward
        return out

    # -- reductions / shaping -------------------------------------------

    def sum(self, axis=None) -> "Tensor":
        out = Tensor(self.values.sum(axis=axis, keepdims=False), parents=(self,))

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.values.shape).copy())
            else:
                self._accumulate(np.broadcast_to(
                    np.expand_dims(g, axis), self.values.shape).copy())
        out._backward = backward
        return out

    def mean(self, axis=None) -> "Tensor":
        n = self.values.size if axis is None else self.values.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.values.reshape(*shape), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.values.shape))
        out._backward = backward
        return out

    def __getitem__(self, key) -> "Tensor":
        out = Tensor(self.values[key], parents=(self,))

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.values)
                np.add.at(full, key, g)
                self._accumulate(full)
        out._backward = backward
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp values; gradient passes only where unclamped."""
        out = Tensor(np.clip(self.values, lo, hi), parents=(self,))
        inside = (self.values > lo) & (self.values < hi)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * inside)
        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.values), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.values)
        out._backward = backward
        return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis),
                 parents=tuple(tensors))
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])
    out._backward = backward
    return out


def stack_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of length n into an [n, k] tensor."""
    return concat([t.reshape(-1, 1) for t in tensors], axis=1)


# -- activations --------------------------------------------------------

_ACTIVATIONS = ("relu", "tanh", "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        out = Tensor(np.maximum(x.values, 0.0), parents=(x,))
        mask = x.values > 0

        def backward(g):
            if x.requires_grad:
                x._accumulate(g * mask)
    elif kind == "tanh":
        y = np.tanh(x.values)
        out = Tensor(y, parents=(x,))

        def backward(g):
            if x.requires_grad:
                x._accumulate(g * (1.0 - y * y))
    elif kind == "sigmoid":
        y = 1.0 / (1.0 + np.exp(-x.values))
        out = Tensor(y, parents=(x,))

        def backward(g):
            if x.requires_grad:
                x._accumulate(g * y * (1.0 - y))
    else:
        raise ConfigurationError(f"unknown activation kind: {kind!r}")
    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


# -- parameters ----------------------------------------------------------

class Parameter:
    """A trainable tensor plus its Adam state and learning-rate group."""

    def __init__(self, values, name: str, group: str = "mlp", dtype=None):
        # 32-bit by default; pass dtype=np.float64 only for gradient checks
        self.tensor = Tensor(_as_array(values, dtype or DEFAULT_DTYPE),
                             requires_grad=True)
        self.name = name
        self.group = group
        self.m = np.zeros_like(self.tensor.values)
        self.v = np.zeros_like(self.tensor.values)
        self.step = 0

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape}, group={self.group!r})"


def affine(x: Tensor, weights: Parameter, bias: Parameter) -> Tensor:
    """x @ W + b for a batch of row vectors."""
    if x.values.shape[-1] != weights.values.shape[0]:
        raise ContractViolation(
            f"affine shape mismatch: input {x.values.shape} vs weights {weights.values.shape}")
    return x.matmul(weights.tensor) + bias.tensor


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into every reachable leaf's .grad.

    Non-leaf gradients are rebuilt on each call, so repeated calls add into
    the leaves (2x after two calls with no reset).
    """
    if root.values.size != 1:
        raise ContractViolation(
            f"backward requires a scalar root, got shape {root.values.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    # reset interior grads so each pass is independent; leaves accumulate
    for node in topo:
        if node._parents:
            node.grad = None
    root.grad = np.ones_like(root.values)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None and node.requires_grad:
            node._backward(node.grad)


def adam_step(params: Iterable[Parameter], lr: float,
              betas: tuple[float, float] = (0.9, 0.99), eps: float = 1e-8):
    """Standard Adam with bias correction; zeroes gradients afterward."""
    b1, b2 = betas
    for p in params:
        if p.tensor.grad is None:
            raise ContractViolation(f"adam_step: parameter {p.name!r} has no gradient")
        g = p.tensor.grad
        p.step += 1
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** p.step)
        v_hat = p.v / (1.0 - b2 ** p.step)
        p.tensor.values -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(
            p.tensor.values.dtype, copy=False)
        p.zero_grad()


class AdamOptimizer:
    """Two learning-rate groups: hash-table entries vs MLP weights."""

    def __init__(self, params: Sequence[Parameter],
                 lr_hash: float = 1e-2, lr_mlp: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.99),
                 eps_hash: float = 1e-15, eps_mlp: float = 1e-8):
        self.hash_params = [p for p in params if p.group == "hash"]
        self.mlp_params = [p for p in params if p.group != "hash"]
        self.lr_hash, self.lr_mlp = lr_hash, lr_mlp
        self.betas = betas
        self.eps_hash, self.eps_mlp = eps_hash, eps_mlp

    def step(self):
        if self.hash_params:
            adam_step(self.hash_params, self.lr_hash, self.betas, self.eps_hash)
        if self.mlp_params:
            adam_step(self.mlp_params, self.lr_mlp, self.betas, self.eps_mlp)


# -- checkpoint I/O ------------------------------------------------------

def _write_str(buf, s: str):
    raw = s.encode("utf-8")
    buf.append(struct.pack("<I", len(raw)))
    buf.append(raw)


def save_checkpoint(path, params: Sequence[Parameter],
                    header: dict[str, int | float] | None = None):
    """Single-file binary checkpoint.

    Layout: magic "INVE", version u32, header field count u32, header fields
    (name, tag u8: 0=u32 / 1=f32, 4-byte value), then one record per
    parameter: name, rank + extents u32, f32 payload, Adam moments, step u32.
    """
    buf: list[bytes] = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    header = header or {}
    buf.append(struct.pack("<I", len(header)))
    for key, value in header.items():
        _write_str(buf, key)
        if isinstance(value, float):
            buf.append(struct.pack("<Bf", 1, value))
        else:
            buf.append(struct.pack("<BI", 0, int(value)))
    for p in params:
        _write_str(buf, p.name)
        shape = p.values.shape
        buf.append(struct.pack("<I", len(shape)))
        buf.append(struct.pack(f"<{len(shape)}I", *shape) if shape else b"")
        for arr in (p.values, p.m, p.v):
            buf.append(arr.astype("<f4", copy=False).tobytes())
        buf.append(struct.pack("<I", p.step))
    with open(path, "wb") as fh:
        fh.write(b"".join(buf))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Returns (header dict, {name: record dict with values/m/v/step})."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos); pos += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n_header,) = struct.unpack_from("<I", data, pos); pos += 4
    header: dict[str, int | float] = {}
    for _ in range(n_header):
        (n,) = struct.unpack_from("<I", data, pos); pos += 4
        key = data[pos:pos + n].decode("utf-8"); pos += n
        (tag,) = struct.unpack_from("<B", data, pos); pos += 1
        if tag == 1:
            (val,) = struct.unpack_from("<f", data, pos)
            header[key] = float(val)
        else:
            (val,) = struct.unpack_from("<I", data, pos)
            header[key] = int(val)
        pos += 4
    records: dict[str, dict] = {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos); pos += 4
        name = data[pos:pos + n].decode("utf-8"); pos += n
        (rank,) = struct.unpack_from("<I", data, pos); pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos); pos += 4 * rank
        count = int(np.prod(shape)) if shape else 1
        arrays = []
        for _ in range(3):
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            arrays.append(arr.copy())
            pos += 4 * count
        (step,) = struct.unpack_from("<I", data, pos); pos += 4
        records[name] = {"values": arrays[0], "m": arrays[1], "v": arrays[2], "step": step}
    return header, records


def restore_parameters(params: Sequence[Parameter], records: dict[str, dict]):
    for p in params:
        if p.name not in records:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        rec = records[p.name]
        if rec["values"].shape != p.values.shape:
            raise CheckpointError(
                f"shape mismatch for {p.name!r}: {rec['values'].shape} vs {p.values.shape}")
        p.tensor.values = rec["values"].astype(p.tensor.values.dtype)
        p.m = rec["m"].astype(p.tensor.values.dtype)
        p.v = rec["v"].astype(p.tensor.values.dtype)
        p.step = rec["step"]
