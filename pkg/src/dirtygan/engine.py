"""Reverse-mode autodiff on dense float64 arrays, plus the RMSProp optimizer.

Values are numpy float64 arrays: 2-d matrices for data, 0-d for scalar
losses. Every operation returns a new :class:`Node`; nodes carry parent
links and a monotonically increasing id, so the creation order *is* the
tape and ``backward`` replays it in reverse. Gradients are exact for the
recorded forward pass; the only intentional flat spots are the clamp floor
of ``log`` and relu at 0.

The public primitive set (see ``apply_primitive``) is enough to express
masked GAN losses; a few extra structural ops (``transpose``,
``repeat_rows``, ``row_slice``, ``col_slice``, ``sqrt``) exist for graph
builders such as ``input_gradient_graph``.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

LOG_FLOOR = 1e-12

_node_ids = itertools.count()


def as_tensor(value) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (the engine's tensor type)."""
    arr = np.asarray(value, dtype=np.float64)
    # ascontiguousarray promotes 0-d to 1-d, so keep scalars as they are
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Node:
    """One recorded value in the computation graph.

    ``grad`` is populated lazily during backward; nodes never reached from
    the loss keep ``grad=None`` and report zeros.
    """

    __slots__ = ("value", "parents", "primitive", "requires_grad", "grad", "_bwd", "_id")

    def __init__(self, value, parents=(), primitive="leaf", requires_grad=True, bwd=None):
        self.value = as_tensor(value)
        self.parents = tuple(parents)
        self.primitive = primitive
        self.requires_grad = requires_grad
        self.grad = None
        self._bwd = bwd
        self._id = next(_node_ids)

    @property
    def shape(self):
        return self.value.shape

    def grad_or_zero(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.value)

    def _accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        # ``owned`` marks a freshly allocated buffer this node may keep;
        # shared buffers (pass-through/view gradients) are copied on first
        # write so += can never corrupt a sibling's gradient
        if self.grad is None:
            self.grad = g if owned else np.array(g)
        else:
            self.grad += g

    def __repr__(self):
        return f"Node({self.primitive}, shape={self.value.shape}, id={self._id})"


def leaf(value) -> Node:
    """A differentiable leaf (parameter)."""
    return Node(value, primitive="leaf", requires_grad=True)


def const(value) -> Node:
    """A non-differentiable input (data, masks, frozen activations)."""
    return Node(value, primitive="const", requires_grad=False)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _shape_error(primitive, *shapes):
    listed = " and ".join(str(tuple(s)) for s in shapes)
    raise DimensionError(f"{primitive}: incompatible shapes {listed}")


def _unary(x, primitive, fn, dfn, owns_output=True):
    x = _lift(x)
    out_val = fn(x.value)
    if not x.requires_grad:
        return Node(out_val, (x,), primitive, requires_grad=False)

    def bwd(g):
        x._accumulate(dfn(g, x.value, out_val), owned=owns_output)

    return Node(out_val, (x,), primitive, bwd=bwd)


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        _shape_error("matmul", a.value.shape, b.value.shape)
    out = Node(a.value @ b.value, (a, b), "matmul",
               requires_grad=a.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g @ b.value.T, owned=True)
            if b.requires_grad:
                b._accumulate(a.value.T @ g, owned=True)
        out._bwd = bwd
    return out


def affine(x, w, b) -> Node:
    """Fused x @ w + b with a (1, k) bias row; one node instead of three."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if (x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]
            or b.value.shape != (1, w.value.shape[1])):
        _shape_error("affine", x.value.shape, w.value.shape, b.value.shape)
    out = Node(x.value @ w.value + b.value, (x, w, b), "affine",
               requires_grad=x.requires_grad or w.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bwd(g):
            if x.requires_grad:
                x._accumulate(g @ w.value.T, owned=True)
            if w.requires_grad:
                w._accumulate(x.value.T @ g, owned=True)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0, keepdims=True), owned=True)
        out._bwd = bwd
    return out


_DENSE_ACTS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "sigmoid": lambda z: _sigmoid_values(z),
    "linear": lambda z: z,
    "softmax": lambda z: _softmax_values(z),
}


def dense_layer(x, w, b, activation: str) -> Node:
    """Fused activation(x @ w + b); the workhorse of network forwards.

    One node per layer keeps the tape short on the hot training path. The
    activation derivative is recovered from the output value (all four
    supported activations allow that), so no pre-activation is stored.
    """
    x, w, b = _lift(x), _lift(w), _lift(b)
    if (x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]
            or b.value.shape != (1, w.value.shape[1])):
        _shape_error("dense_layer", x.value.shape, w.value.shape, b.value.shape)
    try:
        act = _DENSE_ACTS[activation]
    except KeyError:
        raise ContractError(f"dense_layer: unsupported activation '{activation}'") from None
    out_val = act(x.value @ w.value + b.value)
    out = Node(out_val, (x, w, b), "dense_layer",
               requires_grad=x.requires_grad or w.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bwd(g):
            o = out.value
            if activation == "relu":
                g_pre = g * (o > 0.0)
            elif activation == "sigmoid":
                g_pre = g * o * (1.0 - o)
            elif activation == "softmax":
                g_pre = o * (g - (g * o).sum(axis=1, keepdims=True))
            else:
                g_pre = g
            if x.requires_grad:
                x._accumulate(g_pre @ w.value.T, owned=True)
            if w.requires_grad:
                w._accumulate(x.value.T @ g_pre, owned=True)
            if b.requires_grad:
                b._accumulate(g_pre.sum(axis=0, keepdims=True), owned=True)
        out._bwd = bwd
    return out


def _addition_like(a, b, primitive, sign):
    """Shared core of add/subtract: equal shapes, or one side a (1, k) row."""
    a, b = _lift(a), _lift(b)
    sa, sb = a.value.shape, b.value.shape
    row_b = sa != sb and len(sb) == 2 and sb[0] == 1 and len(sa) == 2 and sa[1] == sb[1]
    row_a = sa != sb and len(sa) == 2 and sa[0] == 1 and len(sb) == 2 and sb[1] == sa[1]
    if not (sa == sb or row_a or row_b):
        _shape_error(primitive, sa, sb)
    val = a.value + sign * b.value
    out = Node(val, (a, b), primitive, requires_grad=a.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                if row_a:
                    a._accumulate(g.sum(axis=0, keepdims=True), owned=True)
                else:
                    a._accumulate(g)
            if b.requires_grad:
                gb = g.sum(axis=0, keepdims=True) if row_b else g
                b._accumulate(sign * gb, owned=True)
        out._bwd = bwd
    return out


def add(a, b) -> Node:
    return _addition_like(a, b, "add", 1.0)


def subtract(a, b) -> Node:
    return _addition_like(a, b, "subtract", -1.0)


def hadamard(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.value.shape != b.value.shape:
        _shape_error("hadamard", a.value.shape, b.value.shape)
    out = Node(a.value * b.value, (a, b), "hadamard",
               requires_grad=a.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * b.value, owned=True)
            if b.requires_grad:
                b._accumulate(g * a.value, owned=True)
        out._bwd = bwd
    return out


def scalar_multiply(a, c: float) -> Node:
    a = _lift(a)
    c = float(c)
    return _unary(a, "scalar_multiply", lambda v: c * v, lambda g, v, o: c * g)


def concat_columns(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[0] != b.value.shape[0]:
        _shape_error("concat_columns", a.value.shape, b.value.shape)
    split = a.value.shape[1]
    out = Node(np.concatenate([a.value, b.value], axis=1), (a, b), "concat_columns",
               requires_grad=a.requires_grad or b.requires_grad)
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g[:, :split])
            if b.requires_grad:
                b._accumulate(g[:, split:])
        out._bwd = bwd
    return out


def relu(a) -> Node:
    return _unary(a, "relu",
                  lambda v: np.maximum(v, 0.0),
                  lambda g, v, o: g * (v > 0.0))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Node:
    return _unary(a, "sigmoid", _sigmoid_values, lambda g, v, o: g * o * (1.0 - o))


def _softmax_values(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a) -> Node:
    a = _lift(a)
    if a.value.ndim != 2:
        _shape_error("softmax_rows", a.value.shape)

    def dfn(g, v, o):
        return o * (g - (g * o).sum(axis=1, keepdims=True))

    return _unary(a, "softmax_rows", _softmax_values, dfn)


def log(a) -> Node:
    # Clamped below at LOG_FLOOR; the flat region has zero derivative.
    def dfn(g, v, o):
        return np.where(v > LOG_FLOOR, g / np.maximum(v, LOG_FLOOR), 0.0)

    return _unary(a, "log", lambda v: np.log(np.maximum(v, LOG_FLOOR)), dfn)


def square(a) -> Node:
    return _unary(a, "square", lambda v: v * v, lambda g, v, o: 2.0 * g * v)


def sqrt(a) -> Node:
    def dfn(g, v, o):
        return g * 0.5 / np.maximum(o, 1e-12)

    return _unary(a, "sqrt", lambda v: np.sqrt(np.maximum(v, 0.0)), dfn)


def sum_all(a) -> Node:
    return _unary(a, "sum", lambda v: np.asarray(v.sum()),
                  lambda g, v, o: np.full_like(v, g.item()))


def mean_all(a) -> Node:
    def dfn(g, v, o):
        return np.full_like(v, g.item() / v.size)

    return _unary(a, "mean", lambda v: np.asarray(v.mean()), dfn)


def row_select_by_mask(a, mask) -> Node:
    """Keep the rows where ``mask`` is truthy. ``mask`` may be a node or array."""
    a = _lift(a)
    mval = mask.value if isinstance(mask, Node) else np.asarray(mask)
    if a.value.ndim != 2 or mval.shape != (a.value.shape[0],):
        _shape_error("row_select_by_mask", a.value.shape, mval.shape)
    keep = mval.astype(bool)

    def dfn(g, v, o):
        full = np.zeros_like(v)
        full[keep] = g
        return full

    return _unary(a, "row_select_by_mask", lambda v: v[keep], dfn)


def transpose(a) -> Node:
    return _unary(a, "transpose", lambda v: np.ascontiguousarray(v.T),
                  lambda g, v, o: g.T, owns_output=False)


def scale_rows(a, col) -> Node:
    """Multiply each row of (n, k) by the matching entry of a (n, 1) column."""
    a, col = _lift(a), _lift(col)
    if a.value.ndim != 2 or col.value.shape != (a.value.shape[0], 1):
        _shape_error("scale_rows", a.value.shape, col.value.shape)
    out = Node(a.value * col.value, (a, col), "scale_rows",
               requires_grad=a.requires_grad or col.requires_grad)
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * col.value, owned=True)
            if col.requires_grad:
                col._accumulate((g * a.value).sum(axis=1, keepdims=True), owned=True)
        out._bwd = bwd
    return out


def repeat_rows(a, times: int) -> Node:
    """Repeat each row ``times`` consecutively: (m, k) -> (m*times, k)."""
    a = _lift(a)
    if a.value.ndim != 2:
        _shape_error("repeat_rows", a.value.shape)
    t = int(times)

    def dfn(g, v, o):
        return g.reshape(v.shape[0], t, v.shape[1]).sum(axis=1)

    return _unary(a, "repeat_rows", lambda v: np.repeat(v, t, axis=0), dfn)


def row_slice(a, start: int, stop: int) -> Node:
    a = _lift(a)
    if a.value.ndim != 2 or not (0 <= start <= stop <= a.value.shape[0]):
        _shape_error("row_slice", a.value.shape, (start, stop))

    def dfn(g, v, o):
        full = np.zeros_like(v)
        full[start:stop] = g
        return full

    return _unary(a, "row_slice", lambda v: v[start:stop].copy(), dfn)


def col_slice(a, start: int, stop: int) -> Node:
    a = _lift(a)
    if a.value.ndim != 2 or not (0 <= start <= stop <= a.value.shape[1]):
        _shape_error("col_slice", a.value.shape, (start, stop))

    def dfn(g, v, o):
        full = np.zeros_like(v)
        full[:, start:stop] = g
        return full

    return _unary(a, "col_slice", lambda v: np.ascontiguousarray(v[:, start:stop]), dfn)


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "hadamard": hadamard,
    "scalar_multiply": scalar_multiply,
    "concat_columns": concat_columns,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax_rows": softmax_rows,
    "log": log,
    "square": square,
    "sum": sum_all,
    "mean": mean_all,
    "row_select_by_mask": row_select_by_mask,
}


def apply_primitive(kind: str, inputs, **params) -> Node:
    """Dispatch by primitive tag. ``inputs`` is a list of nodes (or arrays)."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive kind '{kind}'") from None
    return fn(*inputs, **params)


# ------------------------------------------------------------------ backward

def backward(loss: Node) -> dict:
    """Reverse sweep from a scalar loss.

    Populates ``grad`` on every reachable differentiable node and returns
    a map from reachable leaf nodes to their gradient arrays.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    seen = {id(loss)}
    stack = [loss]
    ordered = []
    while stack:
        node = stack.pop()
        ordered.append(node)
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    ordered.sort(key=lambda n: n._id, reverse=True)

    loss.grad = np.ones_like(loss.value)
    for node in ordered:
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
    return {n: n.grad for n in ordered if n.primitive == "leaf" and n.grad is not None}


# -------------------------------------------------- input-gradient subgraphs

_ACT_DERIVS = {
    "relu": lambda z: (z > 0.0).astype(np.float64),
    "sigmoid": lambda z: (lambda s: s * (1.0 - s))(_sigmoid_values(z)),
    "linear": lambda z: np.ones_like(z),
}


def _layer_masks(layers, x_value):
    """Plain forward pass; returns the frozen activation-derivative masks."""
    a = as_tensor(x_value)
    masks = []
    for w_node, b_node, act in layers:
        if act not in _ACT_DERIVS:
            raise ContractError(f"input gradient unsupported for activation '{act}'")
        z = a @ w_node.value + b_node.value
        masks.append(_ACT_DERIVS[act](z))
        if act == "relu":
            a = np.maximum(z, 0.0)
        elif act == "sigmoid":
            a = _sigmoid_values(z)
        else:
            a = z
    return masks


def masks_from_layer_outputs(activations, outputs):
    """Activation-derivative masks recovered from layer output values."""
    masks = []
    for act, o in zip(activations, outputs):
        if act == "relu":
            masks.append((o > 0.0).astype(np.float64))
        elif act == "sigmoid":
            masks.append(o * (1.0 - o))
        elif act == "linear":
            masks.append(np.ones_like(o))
        else:
            raise ContractError(f"input gradient unsupported for activation '{act}'")
    return masks


def _input_gradient_stack(layers, x_value, unit_start, unit_stop, in_cols, masks=None):
    """Shared builder: stacked input gradients for output units [start, stop).

    Result rows are unit-major: block u (of b rows) holds d(out[:, u])/dx.
    Relu and linear activation-derivative masks are frozen constants of the
    linearization point (exact almost everywhere), so the node
    differentiates only through the weight leaves. A sigmoid output layer
    gets its derivative built as graph nodes instead: freezing it would
    drop a real curvature term from the penalty's weight gradient.
    ``masks`` short-circuits the mask forward pass when the caller already
    has the layer outputs.
    """
    x_value = as_tensor(x_value)
    b = x_value.shape[0]
    n_units = unit_stop - unit_start
    acts = [act for _, _, act in layers]
    w_last = layers[-1][0]
    seed_base = repeat_rows(row_slice(transpose(w_last), unit_start, unit_stop), b)

    if acts[-1] == "sigmoid":
        if n_units != 1:
            raise ContractError("sigmoid-output gradient stacks support a single unit")
        a = const(x_value)
        outs = []
        for w, bias, act in layers:
            a = dense_layer(a, w, bias, act)
            outs.append(a)
        out_col = outs[-1]
        if out_col.value.shape[1] > 1:
            out_col = col_slice(out_col, unit_start, unit_stop)
        sig_mask = hadamard(out_col, subtract(const(np.ones_like(out_col.value)), out_col))
        seed = scale_rows(seed_base, sig_mask)
        hidden_masks = masks_from_layer_outputs(acts[:-1], [o.value for o in outs[:-1]])
        if len(layers) > 1:
            seed = hadamard(seed, const(hidden_masks[-1]))
    else:
        if masks is None:
            masks = _layer_masks(layers, x_value)
        hidden_masks = masks[:-1]
        # flat[u*b + j] = mask_last[j, unit_start + u]
        unit_flat = masks[-1][:, unit_start:unit_stop].T.reshape(-1, 1)
        if len(layers) == 1:
            seed = hadamard(seed_base, np.broadcast_to(unit_flat, seed_base.shape).copy())
        else:
            seed = hadamard(seed_base, unit_flat * np.tile(hidden_masks[-1], (n_units, 1)))

    if len(layers) == 1:
        return seed if in_cols is None else col_slice(seed, in_cols[0], in_cols[1])

    grad = seed
    for k in range(len(layers) - 2, 0, -1):
        grad = matmul(grad, transpose(layers[k][0]))
        grad = hadamard(grad, np.tile(hidden_masks[k - 1], (n_units, 1)))
    w_in = layers[0][0]
    if in_cols is not None:
        w_in = row_slice(w_in, in_cols[0], in_cols[1])
    return matmul(grad, transpose(w_in))


def input_gradient_rows(layers, x_value, units: int, in_cols=None, masks=None) -> Node:
    """Stacked input gradients of the first ``units`` output coordinates.

    ``layers`` is a feed-forward stack of ``(w_node, b_node, activation)``
    triples. Returns a node of shape (units*b, d_in). ``in_cols=(j0, j1)``
    restricts the gradient to input columns j0..j1, which is how penalties
    ignore a concatenated label block.
    """
    n_out = layers[-1][0].value.shape[1]
    if not (1 <= units <= n_out):
        raise ContractError(f"requested {units} output units, network has {n_out}")
    return _input_gradient_stack(layers, x_value, 0, units, in_cols, masks=masks)


def input_gradient_graph(layers, x_value, unit_index: int) -> Node:
    """Gradient of output ``unit_index`` with respect to the input, as a node.

    Shape (b, d_in). Built from first-order primitives so that ``backward``
    can differentiate penalties on it with respect to the weights.
    """
    n_out = layers[-1][0].value.shape[1]
    if not (0 <= unit_index < n_out):
        raise ContractError(f"unit_index {unit_index} out of range for width {n_out}")
    return _input_gradient_stack(layers, x_value, unit_index, unit_index + 1, None)


# ------------------------------------------------------------------ optimizer

class RmsPropState:
    """Per-parameter-set RMSProp accumulators."""

    def __init__(self, params, learning_rate=1e-3, decay=0.9, epsilon=1e-8):
        self.learning_rate = float(learning_rate)
        self.decay = float(decay)
        self.epsilon = float(epsilon)
        self.acc = [np.zeros_like(p) for p in params]


def rmsprop_step(params, grads, state: RmsPropState):
    """acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(acc)+eps), in place."""
    if len(params) != len(grads) or len(params) != len(state.acc):
        raise ContractError("rmsprop_step: parameter/gradient/state length mismatch")
    for p, g, a in zip(params, grads, state.acc):
        if p.shape != g.shape:
            raise ContractError(
                f"rmsprop_step: gradient shape {g.shape} does not match parameter {p.shape}")
        a *= state.decay
        a += (1.0 - state.decay) * g * g
        p -= state.learning_rate * g / (np.sqrt(a) + state.epsilon)
    return params


def clip_weights(params, c: float):
    """Clamp every parameter entry to [-c, c], in place."""
    if not c > 0:
        raise ConfigError(f"clip constant must be positive, got {c}")
    for p in params:
        np.clip(p, -c, c, out=p)
    return params
