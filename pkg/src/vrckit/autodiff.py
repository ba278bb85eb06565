"""Reverse-mode differentiation on dense float64 arrays.

A Tensor wraps a numpy array; primitives build a Tape (a flat, topologically
ordered list of nodes) whenever one is active and any input requires a
gradient.  backward() walks the tape once, in reverse, accumulating vector-
Jacobian products.  Tapes are single-use: build graph, call backward, discard.

Design constraints honored throughout:
  * float64 only, so finite-difference checks at eps=1e-5 are meaningful;
  * no implicit broadcasting -- shapes must match exactly (tile explicitly);
  * all index/argmax/argmin decisions are deterministic (first winner on ties)
    so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when primitive inputs do not conform in shape."""


class GatherIndexError(IndexError):
    """Raised when gather indices fall outside the source's first axis."""


class DomainError(ValueError):
    """Raised when a primitive is evaluated outside its numeric domain."""


class Tensor:
    """Dense float64 array with shape metadata and an optional tape handle."""

    __slots__ = ("data", "requires_grad", "node_id", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node_id = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A tensor with the same values, cut off from any tape."""
        return Tensor(self.data)

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class TapeNode:
    """One recorded primitive application: kind, input node ids, backward closure."""

    __slots__ = ("kind", "input_ids", "backward_fn")

    def __init__(self, kind, input_ids, backward_fn):
        self.kind = kind
        self.input_ids = input_ids
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of primitive applications; inputs always precede consumers.

    Use as a context manager around a forward pass:

        with Tape() as tape:
            loss = ...
            grads = backward(loss)
    """

    def __init__(self):
        self.nodes = []
        self._tensor_nodes = {}   # id(tensor) -> node_id
        self._tensor_refs = []    # keep tensors alive so ids stay unique
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        top = _TAPE_STACK.pop()
        if top is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not on top")
        return False

    def leaf_id(self, tensor):
        """Node id for a tensor, registering a leaf node on first sight."""
        nid = self._tensor_nodes.get(id(tensor))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(TapeNode("leaf", (), None))
            self._tensor_nodes[id(tensor)] = nid
            self._tensor_refs.append(tensor)
        return nid

    def record(self, kind, input_ids, backward_fn, out_tensor):
        nid = len(self.nodes)
        self.nodes.append(TapeNode(kind, tuple(input_ids), backward_fn))
        out_tensor.node_id = nid
        out_tensor.tape = self
        self._tensor_nodes[id(out_tensor)] = nid
        self._tensor_refs.append(out_tensor)
        return nid

    def node_of(self, tensor):
        return self._tensor_nodes.get(id(tensor))

    def release(self):
        """Drop node closures and tensor references.

        Tensors recorded on a tape point back at it, so a consumed tape forms
        reference cycles that only the cyclic collector would reclaim; calling
        release() after the gradients have been read frees the saved forward
        values immediately.
        """
        self.nodes.clear()
        self._tensor_nodes.clear()
        self._tensor_refs.clear()
        self.consumed = True


_TAPE_STACK = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _shape_err(kind, msg):
    raise ShapeMismatchError(f"primitive '{kind}': {msg}")


def _same_shape(kind, a, b):
    if a.data.shape != b.data.shape:
        _shape_err(kind, f"operands differ in shape {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# Forward primitives.  Each _fwd_* returns (output_array, backward_fn) where
# backward_fn(g) yields one gradient array per input, in order.  backward_fn
# must never mutate g; returning g itself or views of it is fine.
# ---------------------------------------------------------------------------

def _fwd_linear(inputs, attrs):
    x, w, b = inputs
    xd, wd, bd = x.data, w.data, b.data
    if wd.ndim != 2:
        _shape_err("linear", f"weight must be 2-D, got {wd.shape}")
    if xd.ndim < 1 or xd.shape[-1] != wd.shape[0]:
        _shape_err("linear", f"input last dim {xd.shape} does not match weight {wd.shape}")
    if bd.shape != (wd.shape[1],):
        _shape_err("linear", f"bias shape {bd.shape} does not match weight out dim {wd.shape[1]}")
    out = xd @ wd + bd

    def backward(g):
        x2 = xd.reshape(-1, wd.shape[0])
        g2 = g.reshape(-1, wd.shape[1])
        return (g2 @ wd.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0)

    return out, backward


def _fwd_relu(inputs, attrs):
    x = inputs[0].data
    out = np.maximum(x, 0.0)
    mask = x > 0.0

    def backward(g):
        return (g * mask,)

    return out, backward


def _fwd_concat(inputs, attrs):
    axis = attrs.get("axis", 0)
    arrs = [t.data for t in inputs]
    base = arrs[0].shape
    for a in arrs[1:]:
        if a.ndim != len(base):
            _shape_err("concat", f"rank mismatch {base} vs {a.shape}")
        for d in range(a.ndim):
            if d != axis % a.ndim and a.shape[d] != base[d]:
                _shape_err("concat", f"dim {d} mismatch {base} vs {a.shape}")
    out = np.concatenate(arrs, axis=axis)
    splits = np.cumsum([a.shape[axis] for a in arrs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return out, backward


def _fwd_gather(inputs, attrs):
    x = inputs[0].data
    idx = np.asarray(attrs["indices"], dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise GatherIndexError(f"gather index {bad} out of range for first axis of size {n}")
    out = x[idx]

    def backward(g):
        flat_idx = idx.ravel()
        tail = int(np.prod(x.shape[1:], dtype=np.int64)) if x.ndim > 1 else 1
        if x.ndim == 1:
            acc = np.bincount(flat_idx, weights=g.ravel(), minlength=n)
            return (acc.reshape(x.shape),)
        # bincount over flattened (row, column) linear indices: much faster
        # than np.add.at when indices repeat.
        cols = np.arange(tail, dtype=np.int64)
        lin = (flat_idx[:, None] * tail + cols[None, :]).ravel()
        acc = np.bincount(lin, weights=g.reshape(-1, tail).ravel(), minlength=n * tail)
        return (acc.reshape(x.shape),)

    return out, backward


def _fwd_softmax(inputs, attrs):
    x = inputs[0].data
    axis = attrs.get("axis", -1)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return out, backward


def _fwd_add(inputs, attrs):
    a, b = inputs
    _same_shape("add", a, b)

    def backward(g):
        return g, g

    return a.data + b.data, backward


def _fwd_sub(inputs, attrs):
    a, b = inputs
    _same_shape("sub", a, b)

    def backward(g):
        return g, -g

    return a.data - b.data, backward


def _fwd_mul(inputs, attrs):
    a, b = inputs
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, g * ad

    return ad * bd, backward


def _fwd_scale(inputs, attrs):
    c = float(attrs["factor"])
    x = inputs[0].data

    def backward(g):
        return (g * c,)

    return x * c, backward


def _canonical_sum(x, axis):
    """Sum with a value-canonical accumulation order.

    Sorting the reduced axis first makes the result independent of how the
    caller ordered the inputs, which is what makes permutation-invariance
    claims hold bit-exactly.
    """
    if axis is None:
        return np.sum(np.sort(x, axis=None))
    return np.sum(np.sort(x, axis=axis), axis=axis)


def _reduce_common(inputs, attrs, mean):
    x = inputs[0].data
    axis = attrs.get("axis", None)
    keepdims = bool(attrs.get("keepdims", False))
    if attrs.get("canonical", False):
        out = _canonical_sum(x, axis)
        if keepdims:
            out = np.expand_dims(out, axis) if axis is not None else out.reshape((1,) * x.ndim)
    else:
        out = np.sum(x, axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.shape[axis]
    if mean:
        out = out / count

    def backward(g):
        if axis is None:
            gx = np.full_like(x, float(g.reshape(-1)[0]))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            gx = np.broadcast_to(ge, x.shape).copy()
        if mean:
            gx /= count
        return (gx,)

    return out, backward


def _fwd_sum_reduce(inputs, attrs):
    return _reduce_common(inputs, attrs, mean=False)


def _fwd_mean_reduce(inputs, attrs):
    return _reduce_common(inputs, attrs, mean=True)


def _fwd_max_reduce(inputs, attrs):
    x = inputs[0].data
    axis = attrs.get("axis", None)
    keepdims = bool(attrs.get("keepdims", False))
    if axis is None:
        out = np.max(x)
        arg = int(np.argmax(x))  # first max on ties

        def backward(g):
            gx = np.zeros_like(x)
            gx.ravel()[arg] = float(g.reshape(-1)[0])
            return (gx,)

        return (np.full((1,) * x.ndim, out) if keepdims else out), backward

    out = np.max(x, axis=axis, keepdims=keepdims)
    arg = np.argmax(x, axis=axis)  # first max on ties

    def backward(g):
        gx = np.zeros_like(x)
        ge = np.squeeze(g, axis=axis) if keepdims else g
        index = list(np.indices(arg.shape))
        index.insert(axis % x.ndim, arg)
        gx[tuple(index)] = ge
        return (gx,)

    return out, backward


def _fwd_reshape(inputs, attrs):
    x = inputs[0].data
    shape = tuple(attrs["shape"])
    try:
        out = x.reshape(shape)
    except ValueError:
        _shape_err("reshape", f"cannot reshape {x.shape} to {shape}")

    def backward(g):
        return (g.reshape(x.shape),)

    return out, backward


def _fwd_tile(inputs, attrs):
    x = inputs[0].data
    reps = tuple(int(r) for r in attrs["reps"])
    if len(reps) < x.ndim:
        reps = (1,) * (x.ndim - len(reps)) + reps
    xe = x.reshape((1,) * (len(reps) - x.ndim) + x.shape)
    out = np.tile(xe, reps)

    def backward(g):
        # fold tiled axes only: view as (rep, size) pairs and sum the rep axes
        shape = []
        sum_axes = []
        for r, s in zip(reps, xe.shape):
            if r > 1:
                shape.extend((r, s))
                sum_axes.append(len(shape) - 2)
            else:
                shape.append(s)
        gx = g.reshape(shape).sum(axis=tuple(sum_axes)) if sum_axes else g
        return (gx.reshape(x.shape),)

    return out, backward


def _fwd_exp(inputs, attrs):
    out = np.exp(inputs[0].data)

    def backward(g):
        return (g * out,)

    return out, backward


def _fwd_log(inputs, attrs):
    x = inputs[0].data
    if np.any(x <= 0.0):
        raise DomainError("primitive 'log': input must be strictly positive")

    def backward(g):
        return (g / x,)

    return np.log(x), backward


def _fwd_square(inputs, attrs):
    x = inputs[0].data

    def backward(g):
        return (2.0 * g * x,)

    return x * x, backward


def _fwd_slice(inputs, attrs):
    x = inputs[0].data
    key = attrs["key"]
    out = x[key]

    def backward(g):
        gx = np.zeros_like(x)
        gx[key] = g
        return (gx,)

    return out, backward


_PRIMITIVES = {
    "linear": _fwd_linear,
    "relu": _fwd_relu,
    "concat": _fwd_concat,
    "gather": _fwd_gather,
    "softmax": _fwd_softmax,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "scale": _fwd_scale,
    "mean_reduce": _fwd_mean_reduce,
    "sum_reduce": _fwd_sum_reduce,
    "max_reduce": _fwd_max_reduce,
    "reshape": _fwd_reshape,
    "tile": _fwd_tile,
    "exp": _fwd_exp,
    "log": _fwd_log,
    "square": _fwd_square,
    "slice": _fwd_slice,
}

PRIMITIVE_KINDS = tuple(sorted(_PRIMITIVES))


def forward_primitive(kind, inputs, attrs=None):
    """Apply one primitive, recording it on the active tape when needed."""
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise ValueError(f"unknown primitive kind '{kind}'")
    out_data, backward_fn = fn(inputs, attrs or {})
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    tape = active_tape()
    if tape is not None and needs_grad and not tape.consumed:
        input_ids = []
        for t in inputs:
            if t.requires_grad:
                nid = tape.node_of(t)
                input_ids.append(tape.leaf_id(t) if nid is None else nid)
            else:
                input_ids.append(-1)
        tape.record(kind, input_ids, backward_fn, out)
    return out


# -- thin named wrappers: model code reads better with these -----------------

def linear(x, w, b):
    return forward_primitive("linear", [x, w, b])


def relu(x):
    return forward_primitive("relu", [x])


def concat(tensors, axis=0):
    return forward_primitive("concat", list(tensors), {"axis": axis})


def gather(x, indices):
    return forward_primitive("gather", [x], {"indices": indices})


def softmax(x, axis=-1):
    return forward_primitive("softmax", [x], {"axis": axis})


def add(a, b):
    return forward_primitive("add", [a, b])


def sub(a, b):
    return forward_primitive("sub", [a, b])


def mul(a, b):
    return forward_primitive("mul", [a, b])


def scale(x, factor):
    return forward_primitive("scale", [x], {"factor": factor})


def mean_reduce(x, axis=None, keepdims=False, canonical=False):
    return forward_primitive(
        "mean_reduce", [x], {"axis": axis, "keepdims": keepdims, "canonical": canonical})


def sum_reduce(x, axis=None, keepdims=False, canonical=False):
    return forward_primitive(
        "sum_reduce", [x], {"axis": axis, "keepdims": keepdims, "canonical": canonical})


def max_reduce(x, axis=None, keepdims=False):
    return forward_primitive("max_reduce", [x], {"axis": axis, "keepdims": keepdims})


def reshape(x, shape):
    return forward_primitive("reshape", [x], {"shape": shape})


def tile(x, reps):
    return forward_primitive("tile", [x], {"reps": reps})


def exp(x):
    return forward_primitive("exp", [x])


def log(x):
    return forward_primitive("log", [x])


def square(x):
    return forward_primitive("square", [x])


def slice_(x, key):
    return forward_primitive("slice", [x], {"key": key})


def const(data):
    """Constant tensor (requires_grad=False)."""
    return Tensor(data)


class GradientMap:
    """Gradients keyed by tape node; query by tensor or parameter path."""

    def __init__(self, tape, node_grads):
        self._tape = tape
        self._node_grads = node_grads

    def get(self, tensor):
        """Gradient array for a tensor, or None if it never reached the loss."""
        nid = self._tape.node_of(tensor)
        if nid is None:
            return None
        return self._node_grads.get(nid)

    def by_path(self, registry):
        """Map parameter path -> gradient; unreachable params get zeros."""
        return {
            path: (self.get(p) if self.get(p) is not None else np.zeros_like(p.data))
            for path, p in registry.items()
        }


def backward(loss):
    """Reverse pass from a scalar loss; returns a GradientMap.

    The tape the loss was recorded on is consumed: a second backward raises.
    """
    tape = loss.tape
    if tape is None:
        raise ValueError("backward: loss is not on any tape")
    if tape.consumed:
        raise RuntimeError("backward: tape already consumed")
    if loss.data.size != 1:
        raise ShapeMismatchError(
            f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape.consumed = True

    node_grads = {loss.node_id: np.ones_like(loss.data)}
    owned = {loss.node_id}
    for nid in range(loss.node_id, -1, -1):
        g = node_grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward_fn is None:
            continue
        for in_id, gin in zip(node.input_ids, node.backward_fn(g)):
            if in_id < 0:
                continue
            if in_id not in node_grads:
                node_grads[in_id] = gin
            elif in_id in owned:
                node_grads[in_id] += gin
            else:
                # first accumulation: leave the stored array (possibly a view
                # of someone's g) untouched and switch to an owned buffer
                node_grads[in_id] = node_grads[in_id] + gin
                owned.add(in_id)
    return GradientMap(tape, node_grads)


def grad_check(graph_builder, inputs, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    graph_builder(inputs) must return a scalar loss Tensor.  Error metric per
    coordinate: |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    for t in inputs:
        t.requires_grad = True
        if not t.data.flags["C_CONTIGUOUS"]:
            t.data = np.ascontiguousarray(t.data)
    with Tape() as tape:
        loss = graph_builder(inputs)
        grads = backward(loss)
        analytic = [grads.get(t) for t in inputs]
    tape.release()
    analytic = [np.zeros_like(t.data) if a is None else a
                for t, a in zip(inputs, analytic)]

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.ravel()
        aflat = a.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(graph_builder(inputs).data.reshape(-1)[0])
            flat[i] = orig - eps
            f_minus = float(graph_builder(inputs).data.reshape(-1)[0])
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            an = float(aflat[i])
            err = abs(an - numeric) / max(1.0, abs(an), abs(numeric))
            if err > worst:
                worst = err
    return worst
