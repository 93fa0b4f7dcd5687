"""Deterministic reverse-mode autodiff over flat numpy arrays.

Every differentiable operation goes through ``_apply``, which computes the
forward value and, when a recording tape is active, appends a node
(op kind, input ids, output id, attrs, saved values) to it. ``backward``
walks the tape in reverse topological order; ``Tape.replay`` re-executes the
recorded forward from the leaf snapshots, which must reproduce every output
bit-exactly.

Determinism contract: single-threaded per step, no atomics, fixed reduction
order (leading-axis-major; see kernels module). The global multiply counter
tracks forward ``matmul`` ops only and increments by exactly
batch * m * k * n per call.

Precision is a process-global switch (float32 default, float64 for
verification), not a per-tensor property.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, UsageError

_DTYPE = np.float32

_MUL_COUNT = 0


def set_default_dtype(dtype):
    """Switch the process-global float precision ("float32"/"float64")."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DTYPE = dt.type


def default_dtype():
    return np.dtype(_DTYPE)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the global precision (used by verification tests)."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def reset_mul_count():
    global _MUL_COUNT
    _MUL_COUNT = 0


def mul_count():
    return _MUL_COUNT


class Tensor:
    """Dense n-d float array, optionally a differentiable leaf."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_tid")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self._tid = None

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._tape = None
        t._tid = None
        return t

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

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    __slots__ = ("op", "input_ids", "output_id", "attrs", "saved")

    def __init__(self, op, input_ids, output_id, attrs, saved):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.attrs = attrs
        self.saved = saved


class Tape:
    """Ordered op-node record; inputs of every node precede it."""

    def __init__(self):
        self.nodes = []
        self.values = {}
        self.tensors = {}
        self.leaf_ids = []
        self._next = 0

    def _new_id(self, tensor, is_leaf):
        tid = self._next
        self._next += 1
        tensor._tape = self
        tensor._tid = tid
        self.tensors[tid] = tensor
        if is_leaf:
            self.leaf_ids.append(tid)
            self.values[tid] = tensor.data.copy()
        else:
            self.values[tid] = tensor.data
        return tid

    def ensure_id(self, tensor):
        if tensor._tape is self:
            return tensor._tid
        return self._new_id(tensor, is_leaf=True)

    def replay(self):
        """Re-run the recorded forward from leaf snapshots; returns id->value."""
        vals = {i: self.values[i] for i in self.leaf_ids}
        for node in self.nodes:
            ins = [vals[i] for i in node.input_ids]
            out, _ = _FWD[node.op](ins, node.attrs)
            vals[node.output_id] = out
        return vals


_ACTIVE_TAPE = None


@contextlib.contextmanager
def record():
    """Activate a fresh tape for the duration of the block."""
    global _ACTIVE_TAPE
    if _ACTIVE_TAPE is not None:
        raise UsageError("a tape is already recording; nested tapes are not supported")
    tape = Tape()
    _ACTIVE_TAPE = tape
    try:
        yield tape
    finally:
        _ACTIVE_TAPE = None


def active_tape():
    return _ACTIVE_TAPE


def _apply(op, inputs, attrs=None):
    arrays = [t.data for t in inputs]
    out_arr, saved = _FWD[op](arrays, attrs)
    out = Tensor._wrap(out_arr)
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad or t._tape is tape for t in inputs):
        ids = [tape.ensure_id(t) for t in inputs]
        oid = tape._new_id(out, is_leaf=False)
        tape.nodes.append(Node(op, ids, oid, attrs, saved))
    return out


def backward(loss):
    """Reverse traversal from a scalar loss; accumulates .grad on leaves."""
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss._tape is None:
        raise UsageError("loss was not recorded on a tape; wrap the forward in record()")
    if loss.data.ndim != 0:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    grads = {loss._tid: np.ones((), dtype=loss.data.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        ins = [tape.values[i] for i in node.input_ids]
        out = tape.values[node.output_id]
        gins = _BWD[node.op](g, ins, out, node.saved, node.attrs)
        for iid, gi in zip(node.input_ids, gins):
            if gi is None:
                continue
            if iid in grads:
                grads[iid] = grads[iid] + gi
            else:
                grads[iid] = gi
    for tid in tape.leaf_ids:
        t = tape.tensors[tid]
        if t.requires_grad and tid in grads:
            g = np.asarray(grads[tid], dtype=t.data.dtype)
            t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# op registry
# ---------------------------------------------------------------------------

def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _matmul_fwd(arrays, attrs):
    global _MUL_COUNT
    a, b = arrays
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ConfigError(f"matmul shape mismatch: {a.shape} x {b.shape}")
        batch, m, k, n = 1, a.shape[0], a.shape[1], b.shape[1]
    elif a.ndim == 3 and b.ndim == 2:
        if a.shape[2] != b.shape[0]:
            raise ConfigError(f"matmul shape mismatch: {a.shape} x {b.shape}")
        batch, m, k, n = a.shape[0], a.shape[1], a.shape[2], b.shape[1]
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ConfigError(f"matmul shape mismatch: {a.shape} x {b.shape}")
        batch, m, k, n = a.shape[0], a.shape[1], a.shape[2], b.shape[2]
    else:
        raise ConfigError(f"matmul supports 2d/3d operands, got {a.shape} x {b.shape}")
    _MUL_COUNT += batch * m * k * n
    return a @ b, None


def _matmul_bwd(g, ins, out, saved, attrs):
    a, b = ins
    if a.ndim == 2 and b.ndim == 2:
        return [g @ b.T, a.T @ g]
    if a.ndim == 3 and b.ndim == 2:
        k = a.shape[2]
        n = b.shape[1]
        return [g @ b.T, a.reshape(-1, k).T @ g.reshape(-1, n)]
    return [g @ b.swapaxes(-1, -2), a.swapaxes(-1, -2) @ g]


def _binary_shape_check(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigError(f"{opname} shapes not broadcastable: {a.shape} vs {b.shape}")


def _add_fwd(arrays, attrs):
    a, b = arrays
    _binary_shape_check(a, b, "add")
    return a + b, None


def _add_bwd(g, ins, out, saved, attrs):
    a, b = ins
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _sub_fwd(arrays, attrs):
    a, b = arrays
    _binary_shape_check(a, b, "sub")
    return a - b, None


def _sub_bwd(g, ins, out, saved, attrs):
    a, b = ins
    return [_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)]


def _mul_fwd(arrays, attrs):
    a, b = arrays
    _binary_shape_check(a, b, "hadamard")
    return a * b, None


def _mul_bwd(g, ins, out, saved, attrs):
    a, b = ins
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _neg_fwd(arrays, attrs):
    return -arrays[0], None


def _neg_bwd(g, ins, out, saved, attrs):
    return [-g]


def _scale_fwd(arrays, attrs):
    return arrays[0] * arrays[0].dtype.type(attrs["c"]), None


def _scale_bwd(g, ins, out, saved, attrs):
    return [g * ins[0].dtype.type(attrs["c"])]


def _gelu_fwd(arrays, attrs):
    return kernels.gelu(arrays[0]), None


def _gelu_bwd(g, ins, out, saved, attrs):
    return [kernels.gelu_grad(ins[0], np.ascontiguousarray(g))]


def _tanh_fwd(arrays, attrs):
    return np.tanh(arrays[0]), None


def _tanh_bwd(g, ins, out, saved, attrs):
    return [g * (1.0 - out * out)]


def _softmax_fwd(arrays, attrs):
    x = arrays[0]
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ConfigError(f"softmax needs a non-empty last dim, got shape {x.shape}")
    n = x.shape[-1]
    y = kernels.softmax(np.ascontiguousarray(x.reshape(-1, n)))
    return y.reshape(x.shape), None


def _softmax_bwd(g, ins, out, saved, attrs):
    n = out.shape[-1]
    y2 = np.ascontiguousarray(out.reshape(-1, n))
    g2 = np.ascontiguousarray(g.reshape(-1, n))
    return [kernels.softmax_grad(y2, g2).reshape(out.shape)]


def _layernorm_fwd(arrays, attrs):
    x, gamma, beta = arrays
    eps = attrs["eps"]
    if eps <= 0:
        raise ConfigError(f"layernorm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigError(
            f"layernorm affine shapes {gamma.shape}/{beta.shape} do not match dim {d}")
    x2 = np.ascontiguousarray(x.reshape(-1, d))
    y, mean, rstd = kernels.layernorm(x2, gamma, beta, x.dtype.type(eps))
    return y.reshape(x.shape), (mean, rstd)


def _layernorm_bwd(g, ins, out, saved, attrs):
    x, gamma, beta = ins
    mean, rstd = saved
    d = x.shape[-1]
    x2 = np.ascontiguousarray(x.reshape(-1, d))
    g2 = np.ascontiguousarray(g.reshape(-1, d))
    gx, dgamma, dbeta = kernels.layernorm_grad(x2, gamma, mean, rstd, g2)
    return [gx.reshape(x.shape), dgamma, dbeta]


def _cross_entropy_fwd(arrays, attrs):
    logits = arrays[0]
    labels = attrs["labels"]
    if logits.ndim != 2:
        raise ConfigError(f"cross_entropy expects 2d logits, got shape {logits.shape}")
    C = logits.shape[1]
    bad = np.nonzero((labels < 0) | (labels >= C))[0]
    if bad.size:
        raise DataError(
            f"label {int(labels[bad[0]])} at index {int(bad[0])} outside [0, {C})")
    loss, probs = kernels.cross_entropy(np.ascontiguousarray(logits), labels)
    return np.asarray(loss, dtype=logits.dtype), probs


def _cross_entropy_bwd(g, ins, out, saved, attrs):
    probs = saved
    labels = attrs["labels"]
    B = probs.shape[0]
    gl = probs.copy()
    gl[np.arange(B), labels] -= 1.0
    gl *= g / B
    return [gl]


def _l1_fwd(arrays, attrs):
    x = arrays[0]
    return np.asarray(np.abs(x).sum(dtype=x.dtype)), None


def _l1_bwd(g, ins, out, saved, attrs):
    return [g * np.sign(ins[0])]


def _reshape_fwd(arrays, attrs):
    x = arrays[0]
    shape = attrs["shape"]
    if int(np.prod(shape)) != x.size:
        raise ConfigError(f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape), None


def _reshape_bwd(g, ins, out, saved, attrs):
    return [g.reshape(ins[0].shape)]


def _transpose_last2_fwd(arrays, attrs):
    x = arrays[0]
    if x.ndim < 2:
        raise ConfigError(f"transpose_last2 needs ndim >= 2, got shape {x.shape}")
    return x.swapaxes(-1, -2), None


def _transpose_last2_bwd(g, ins, out, saved, attrs):
    return [g.swapaxes(-1, -2)]


def _concat_fwd(arrays, attrs):
    return np.concatenate(arrays, axis=attrs["axis"]), None


def _concat_bwd(g, ins, out, saved, attrs):
    axis = attrs["axis"]
    sizes = [a.shape[axis] for a in ins]
    offsets = np.cumsum(sizes)[:-1]
    return list(np.split(g, offsets, axis=axis))


def _broadcast_to_fwd(arrays, attrs):
    return np.broadcast_to(arrays[0], attrs["shape"]), None


def _broadcast_to_bwd(g, ins, out, saved, attrs):
    return [_unbroadcast(g, ins[0].shape)]


def _slice_axis0_fwd(arrays, attrs):
    return arrays[0][attrs["index"]], None


def _slice_axis0_bwd(g, ins, out, saved, attrs):
    gx = np.zeros_like(ins[0])
    gx[attrs["index"]] = g
    return [gx]


def _slice_last_fwd(arrays, attrs):
    return arrays[0][..., attrs["start"]:attrs["stop"]], None


def _slice_last_bwd(g, ins, out, saved, attrs):
    gx = np.zeros_like(ins[0])
    gx[..., attrs["start"]:attrs["stop"]] = g
    return [gx]


def _take_axis1_fwd(arrays, attrs):
    x = arrays[0]
    if x.ndim != 3:
        raise ConfigError(f"take_axis1 expects a 3d tensor, got shape {x.shape}")
    idx = np.asarray(attrs["indices"], dtype=np.intp)
    return x[:, idx, :], None


def _take_axis1_bwd(g, ins, out, saved, attrs):
    # indices are unique by contract (token keep-sets), so assignment scatters
    gx = np.zeros_like(ins[0])
    idx = np.asarray(attrs["indices"], dtype=np.intp)
    gx[:, idx, :] = g
    return [gx]


def _mean_axis1_fwd(arrays, attrs):
    return arrays[0].mean(axis=1), None


def _mean_axis1_bwd(g, ins, out, saved, attrs):
    x = ins[0]
    return [np.broadcast_to(g[:, None, :] / x.shape[1], x.shape)]


_FWD = {
    "matmul": _matmul_fwd,
    "add": _add_fwd,
    "sub": _sub_fwd,
    "mul": _mul_fwd,
    "neg": _neg_fwd,
    "scale": _scale_fwd,
    "gelu": _gelu_fwd,
    "tanh": _tanh_fwd,
    "softmax": _softmax_fwd,
    "layernorm": _layernorm_fwd,
    "cross_entropy": _cross_entropy_fwd,
    "l1_norm": _l1_fwd,
    "reshape": _reshape_fwd,
    "transpose_last2": _transpose_last2_fwd,
    "concat": _concat_fwd,
    "broadcast_to": _broadcast_to_fwd,
    "slice_axis0": _slice_axis0_fwd,
    "slice_last": _slice_last_fwd,
    "take_axis1": _take_axis1_fwd,
    "mean_axis1": _mean_axis1_fwd,
}

_BWD = {
    "matmul": _matmul_bwd,
    "add": _add_bwd,
    "sub": _sub_bwd,
    "mul": _mul_bwd,
    "neg": _neg_bwd,
    "scale": _scale_bwd,
    "gelu": _gelu_bwd,
    "tanh": _tanh_bwd,
    "softmax": _softmax_bwd,
    "layernorm": _layernorm_bwd,
    "cross_entropy": _cross_entropy_bwd,
    "l1_norm": _l1_bwd,
    "reshape": _reshape_bwd,
    "transpose_last2": _transpose_last2_bwd,
    "concat": _concat_bwd,
    "broadcast_to": _broadcast_to_bwd,
    "slice_axis0": _slice_axis0_bwd,
    "slice_last": _slice_last_bwd,
    "take_axis1": _take_axis1_bwd,
    "mean_axis1": _mean_axis1_bwd,
}


# ---------------------------------------------------------------------------
# public op wrappers
# ---------------------------------------------------------------------------

def matmul(a, b):
    return _apply("matmul", [a, b])


def add(a, b):
    return _apply("add", [a, b])


def sub(a, b):
    return _apply("sub", [a, b])


def mul(a, b):
    return _apply("mul", [a, b])


def neg(a):
    return _apply("neg", [a])


def scale(a, c):
    return _apply("scale", [a], {"c": float(c)})


def gelu(a):
    return _apply("gelu", [a])


def tanh(a):
    return _apply("tanh", [a])


def softmax_lastdim(a):
    return _apply("softmax", [a])


def layernorm(x, gamma, beta, eps):
    return _apply("layernorm", [x, gamma, beta], {"eps": float(eps)})


def cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    return _apply("cross_entropy", [logits], {"labels": labels})


def l1_norm(a):
    return _apply("l1_norm", [a])


def reshape(a, shape):
    return _apply("reshape", [a], {"shape": tuple(shape)})


def transpose_last2(a):
    return _apply("transpose_last2", [a])


def concat(tensors, axis):
    return _apply("concat", list(tensors), {"axis": int(axis)})


def broadcast_to(a, shape):
    return _apply("broadcast_to", [a], {"shape": tuple(shape)})


def slice_axis0(a, index):
    return _apply("slice_axis0", [a], {"index": int(index)})


def slice_last(a, start, stop):
    return _apply("slice_last", [a], {"start": int(start), "stop": int(stop)})


def take_axis1(a, indices):
    return _apply("take_axis1", [a], {"indices": tuple(int(i) for i in indices)})


def mean_axis1(a):
    return _apply("mean_axis1", [a])
