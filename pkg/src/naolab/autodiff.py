"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are static: building an op only records the node and infers its
output shape (so dimension errors surface at construction).  ``forward_eval``
computes every node in topological order and ``backward`` propagates
adjoints from a seed back to the leaves.  A graph can be re-evaluated after
leaf values change, which is how the training loop reuses one graph across
epochs.

Leading axes broadcast the way ``numpy.matmul`` does, so a batch of samples
is just an extra axis in front.
"""

from __future__ import annotations

import builtins
import itertools
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, StateError

LEAKY_SLOPE = 0.01

_ids = itertools.count()


class Node:
    """One vertex of a computation graph."""

    __slots__ = ("op", "inputs", "shape", "attrs", "value", "grad", "name",
                 "trainable", "id")

    def __init__(self, op, inputs, shape, attrs=None, value=None, name=None,
                 trainable=False):
        self.op = op
        self.inputs = tuple(inputs)
        self.shape = tuple(int(s) for s in shape)
        self.attrs = attrs or {}
        self.value = value
        self.grad = None
        self.name = name
        self.trainable = trainable
        self.id = next(_ids)

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_node(other))

    def __radd__(self, other):
        return add(_as_node(other), self)

    def __sub__(self, other):
        return sub(self, _as_node(other))

    def __rsub__(self, other):
        return sub(_as_node(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_node(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _as_node(other))

    @property
    def T(self):
        return transpose(self)


def _as_node(x):
    if isinstance(x, Node):
        return x
    return constant(x)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {what}")


# ---------------------------------------------------------------- leaves

def leaf(value, name=None, trainable=True):
    """A graph input whose value is set by the caller (a parameter or data)."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    _check_finite(arr, f"leaf {name!r}")
    return Node("leaf", (), arr.shape, value=arr, name=name, trainable=trainable)


def constant(value, name=None):
    return leaf(value, name=name, trainable=False)


def set_value(node, value):
    """Replace a leaf value; the shape must not change."""
    if node.op != "leaf":
        raise StateError("only leaves can be assigned")
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != node.shape:
        raise DimensionError(f"cannot assign shape {arr.shape} to leaf of shape {node.shape}")
    _check_finite(arr, f"leaf {node.name!r}")
    node.value = arr


# ---------------------------------------------------------------- op builders

def _broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    return Node("add", (a, b), _broadcast(a, b, "add"))


def sub(a, b):
    return Node("sub", (a, b), _broadcast(a, b, "sub"))


def mul(a, b):
    return Node("mul", (a, b), _broadcast(a, b, "mul"))


def scale(a, c):
    return Node("scale", (a,), a.shape, {"c": float(c)})


def matmul(a, b):
    if len(a.shape) < 2 or len(b.shape) < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    return Node("matmul", (a, b), batch + (a.shape[-2], b.shape[-1]))


def transpose(a):
    if len(a.shape) < 2:
        raise DimensionError(f"transpose needs rank >= 2, got {a.shape}")
    return Node("transpose", (a,), a.shape[:-2] + (a.shape[-1], a.shape[-2]))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    if axis is None:
        shape = (1,)
    else:
        axis = axis % len(a.shape)
        shape = list(a.shape)
        if keepdims:
            shape[axis] = 1
        else:
            del shape[axis]
        shape = tuple(shape) or (1,)
    return Node("sum", (a,), shape, {"axis": axis, "keepdims": keepdims})


def row_sum(a):
    return sum(a, axis=-1, keepdims=True)


def leaky_relu(a, slope=LEAKY_SLOPE):
    return Node("leaky_relu", (a,), a.shape, {"slope": float(slope)})


def row_softmax(a):
    return Node("row_softmax", (a,), a.shape)


def reshape(a, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != int(np.prod(a.shape)):
        raise DimensionError(f"cannot reshape {a.shape} into {shape}")
    return Node("reshape", (a,), shape)


def concat(nodes, axis):
    nodes = list(nodes)
    ref = nodes[0].shape
    axis = axis % len(ref)
    for n in nodes[1:]:
        if len(n.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(n.shape, ref)) if i != axis):
            raise DimensionError(f"concat along axis {axis}: shapes {ref} and {n.shape} differ")
    shape = list(ref)
    shape[axis] = builtins.sum(n.shape[axis] for n in nodes)
    return Node("concat", nodes, shape, {"axis": axis})


def take(a, axis, start, stop):
    """Contiguous slice ``a[..., start:stop, ...]`` along ``axis``."""
    axis = axis % len(a.shape)
    if not 0 <= start < stop <= a.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    shape = list(a.shape)
    shape[axis] = stop - start
    return Node("take", (a,), shape, {"axis": axis, "start": start, "stop": stop})



# ---------------------------------------------------------------- evaluation

def topological_order(root):
    """Nodes reachable from ``root``, inputs before consumers, deterministic."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for child in reversed(node.inputs):
            if child.id not in seen:
                stack.append((child, False))
    return order


def _compute(node):
    v = [i.value for i in node.inputs]
    op = node.op
    if op == "add":
        return v[0] + v[1]
    if op == "sub":
        return v[0] - v[1]
    if op == "mul":
        return v[0] * v[1]
    if op == "scale":
        return node.attrs["c"] * v[0]
    if op == "matmul":
        return np.matmul(v[0], v[1])
    if op == "transpose":
        return np.swapaxes(v[0], -1, -2)
    if op == "sum":
        ax = node.attrs["axis"]
        if ax is None:
            return np.array([v[0].sum()])
        out = v[0].sum(axis=ax, keepdims=node.attrs["keepdims"])
        return out.reshape(node.shape)
    if op == "leaky_relu":
        x = v[0]
        return np.where(x > 0, x, node.attrs["slope"] * x)
    if op == "row_softmax":
        x = v[0]
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if op == "reshape":
        return v[0].reshape(node.shape)
    if op == "concat":
        return np.concatenate(v, axis=node.attrs["axis"])
    if op == "take":
        sl = [slice(None)] * len(node.shape)
        sl[node.attrs["axis"]] = slice(node.attrs["start"], node.attrs["stop"])
        return v[0][tuple(sl)]
    raise StateError(f"unknown op {op}")


def forward_eval(root):
    """Evaluate every node below ``root`` and return the root value.

    Non-finite values propagate, so only the root is checked; on failure the
    first offending op is located for the error message.
    """
    order = topological_order(root)
    for node in order:
        if node.op == "leaf":
            if node.value is None:
                raise StateError(f"leaf {node.name!r} has no value")
            continue
        node.value = _compute(node)
        node.grad = None
    if not np.all(np.isfinite(root.value)):
        bad = next(n for n in order if n.op != "leaf" and not np.all(np.isfinite(n.value)))
        raise NumericError(f"non-finite value produced by {bad.op}")
    return root.value


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _vjp(node, g, need=None):
    """Adjoint contributions for each input of ``node`` given its adjoint ``g``.

    ``need`` flags the inputs whose adjoint is wanted; the others may be
    returned as None (only honoured where skipping saves real work).
    """
    op = node.op
    ins = node.inputs
    need = need or (True,) * len(ins)
    if op == "add":
        return [_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)]
    if op == "sub":
        return [_unbroadcast(g, ins[0].shape), _unbroadcast(-g, ins[1].shape)]
    if op == "mul":
        a, b = ins[0].value, ins[1].value
        return [_unbroadcast(g * b, ins[0].shape) if need[0] else None,
                _unbroadcast(g * a, ins[1].shape) if need[1] else None]
    if op == "scale":
        return [node.attrs["c"] * g]
    if op == "matmul":
        a, b = ins[0].value, ins[1].value
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), ins[0].shape) if need[0] else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), ins[1].shape) if need[1] else None
        return [ga, gb]
    if op == "transpose":
        return [np.swapaxes(g, -1, -2)]
    if op == "sum":
        shape = ins[0].shape
        ax = node.attrs["axis"]
        if ax is None:
            return [np.full(shape, g.reshape(-1)[0])]
        if not node.attrs["keepdims"]:
            g = np.expand_dims(g.reshape(node.shape), ax)
        return [np.broadcast_to(g, shape).copy()]
    if op == "leaky_relu":
        x = ins[0].value
        return [np.where(x > 0, g, node.attrs["slope"] * g)]
    if op == "row_softmax":
        s = node.value
        return [s * (g - (g * s).sum(axis=-1, keepdims=True))]
    if op == "reshape":
        return [g.reshape(ins[0].shape)]
    if op == "concat":
        ax = node.attrs["axis"]
        bounds = np.cumsum([0] + [i.shape[ax] for i in ins])
        out = []
        for k in range(len(ins)):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(bounds[k], bounds[k + 1])
            out.append(g[tuple(sl)])
        return out
    if op == "take":
        full = np.zeros(ins[0].shape)
        sl = [slice(None)] * g.ndim
        sl[node.attrs["axis"]] = slice(node.attrs["start"], node.attrs["stop"])
        full[tuple(sl)] = g
        return [full]
    raise StateError(f"no adjoint rule for {op}")


def backward(root, seed=None):
    """Reverse sweep from ``root``; returns ``{leaf: gradient}`` for trainable leaves.

    The gradient of each leaf is d<seed, root>/d leaf.  Contributions from
    fan-out are summed in the fixed reverse-topological order.
    """
    if root.value is None:
        raise StateError("backward called before forward_eval")
    if seed is None:
        seed = np.ones(root.shape)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != root.shape:
        raise DimensionError(f"seed shape {seed.shape} differs from root shape {root.shape}")
    order = topological_order(root)
    wants = set()          # ids of nodes with a trainable leaf below them
    for node in order:
        if node.op != "leaf" and node.value is None:
            raise StateError("backward called before forward_eval")
        node.grad = None
        if (node.op == "leaf" and node.trainable) or any(c.id in wants for c in node.inputs):
            wants.add(node.id)
    root.grad = seed.copy()
    for node in reversed(order):
        if node.grad is None or node.op == "leaf":
            continue
        need = tuple(c.id in wants for c in node.inputs)
        if not any(need):
            continue
        for child, ok, g in zip(node.inputs, need, _vjp(node, node.grad, need)):
            if not ok:
                continue
            # adjoints are never modified in place, so sharing arrays is safe
            child.grad = g if child.grad is None else child.grad + g
    return {n: (n.grad if n.grad is not None else np.zeros(n.shape))
            for n in order if n.op == "leaf" and n.trainable}


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` map names to arrays.  Returns new parameter
    arrays; ``state`` is advanced in place and also returned.
    """
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"gradient shape {np.shape(g)} differs from parameter {name!r} shape {np.shape(p)}")
        if name in state.m and state.m[name].shape != np.shape(p):
            raise DimensionError(f"Adam moment shape {state.m[name].shape} differs from parameter {name!r} shape {np.shape(p)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for name in params:
        p = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"NAOCKPT1"


def save_checkpoint(path, params):
    """Write ``{name: array}`` in the NAOCKPT1 binary layout."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a NAOCKPT1 file")
    pos, out = 8, {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = arr.astype(np.float64)
    return out
