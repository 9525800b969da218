"""Dense float64 tensors with reverse-mode automatic differentiation.

A deliberately small kernel: only the operations the dialogue model, the
fusion module and the classifiers need. Everything runs in double precision
so finite-difference checks stay tight. Broadcasting is restricted to
scalar*tensor and bias-row addition; anything else is a shape error.

The tape is the graph of ``parents`` links plus per-node backward rules.
``backward`` walks it once in reverse topological order and returns the
number of nodes visited.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeMismatchError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A numpy float64 array plus an optional tape node.

    Leaf tensors have no parents. Tensors produced by an op carry parent
    references and a backward rule; together those links form the tape.
    """

    __slots__ = ("values", "grad", "requires_grad", "parents", "_rule", "op", "_visits")

    def __init__(self, values, requires_grad=False, parents=(), rule=None, op=""):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = tuple(parents)
        self._rule = rule
        self.op = op
        self._visits = 0

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def detach(self):
        """A tape-free view of the same values."""
        return Tensor(self.values, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.op or ("leaf" if not self.parents else "op")
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, {tag})"

    # operator sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(values):
    """A non-trainable tensor (masks, position tables, fixed weights)."""
    return Tensor(values, requires_grad=False)


def parameter(values):
    """A trainable leaf tensor."""
    return Tensor(values, requires_grad=True)


def _node(values, parents, rule, op):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, parents=parents, rule=rule, op=op)
    return Tensor(values, requires_grad=False)


def _reduce_like(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    out = g
    while out.ndim > len(shape):
        out = out.sum(axis=0)
    for ax, (have, want) in enumerate(zip(out.shape, shape)):
        if want == 1 and have != 1:
            out = out.sum(axis=ax, keepdims=True)
    return out.reshape(shape)


def _check_broadcast(a, b, op):
    """Allow b == a shape, a bias row over a's rows, or a scalar."""
    try:
        res = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        res = None
    if res != a.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    _check_broadcast(a, b, "add")

    def rule(g):
        return _reduce_like(g, a.shape), _reduce_like(g, b.shape)

    return _node(a.values + b.values, (a, b), rule, "add")


def sub(a, b):
    _check_broadcast(a, b, "sub")

    def rule(g):
        return _reduce_like(g, a.shape), -_reduce_like(g, b.shape)

    return _node(a.values - b.values, (a, b), rule, "sub")


def mul(a, b):
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values

    def rule(g):
        return _reduce_like(g * bv, a.shape), _reduce_like(g * av, b.shape)

    return _node(av * bv, (a, b), rule, "mul")


def scale(a, c):
    c = float(c)

    def rule(g):
        return (g * c,)

    return _node(a.values * c, (a,), rule, "scale")


def shift(a, c):
    """Add a python scalar constant (used for the gamma+1 fusion coefficient)."""
    c = float(c)

    def rule(g):
        return (g,)

    return _node(a.values + c, (a,), rule, "shift")


def tanh(a):
    y = np.tanh(a.values)

    def rule(g):
        return (g * (1.0 - y * y),)

    return _node(y, (a,), rule, "tanh")


def relu(a):
    pos = a.values > 0

    def rule(g):
        return (g * pos,)

    return _node(a.values * pos, (a,), rule, "relu")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def rule(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), rule, "matmul")


def transpose(a):
    if a.values.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected matrix, got {a.shape}")

    def rule(g):
        return (g.T,)

    return _node(a.values.T, (a,), rule, "transpose")


def gather_rows(table, ids):
    """Rows ``table[ids]``; backward scatters gradients additively."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ShapeMismatchError(f"gather_rows: ids must be 1-D, got {ids.shape}")
    n = table.shape[0]
    for pos, i in enumerate(ids):
        if i < 0 or i >= n:
            raise IndexError(f"gather_rows: id {i} at position {pos} out of range [0, {n})")

    def rule(g):
        dt = np.zeros_like(table.values)
        np.add.at(dt, ids, g)
        return (dt,)

    out = table.values[ids] if ids.size else np.zeros((0, table.shape[1]))
    return _node(out, (table,), rule, "gather_rows")


def slice_rows(a, start, stop):
    def rule(g):
        da = np.zeros_like(a.values)
        da[start:stop] = g
        return (da,)

    return _node(a.values[start:stop], (a,), rule, "slice_rows")


def slice_cols(a, start, stop):
    def rule(g):
        da = np.zeros_like(a.values)
        da[:, start:stop] = g
        return (da,)

    return _node(a.values[:, start:stop], (a,), rule, "slice_cols")


def concat_rows(parts):
    if not parts:
        raise ContractError("concat_rows: empty part list")
    sizes = [p.shape[0] for p in parts]

    def rule(g):
        grads, at = [], 0
        for s in sizes:
            grads.append(g[at : at + s])
            at += s
        return tuple(grads)

    return _node(np.concatenate([p.values for p in parts], axis=0), tuple(parts), rule, "concat_rows")


def concat_cols(parts):
    if not parts:
        raise ContractError("concat_cols: empty part list")
    sizes = [p.shape[1] for p in parts]

    def rule(g):
        grads, at = [], 0
        for s in sizes:
            grads.append(g[:, at : at + s])
            at += s
        return tuple(grads)

    return _node(np.concatenate([p.values for p in parts], axis=1), tuple(parts), rule, "concat_cols")


# ---------------------------------------------------------------------------
# reductions and normalizations


def tsum(a):
    def rule(g):
        return (np.full_like(a.values, float(g)),)

    return _node(a.values.sum(), (a,), rule, "sum")


def tmean(a):
    n = a.values.size

    def rule(g):
        return (np.full_like(a.values, float(g) / n),)

    return _node(a.values.mean(), (a,), rule, "mean")


def mean_rows(a, mask=None):
    """Mean over (unmasked) rows of a [L, d] matrix -> [1, d]."""
    if mask is None:
        mask = np.ones(a.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (a.shape[0],):
        raise ShapeMismatchError(f"mean_rows: mask {mask.shape} vs rows {a.shape[0]}")
    count = int(mask.sum())
    if count == 0:
        raise ContractError("mean_rows: all positions masked out")

    def rule(g):
        da = np.zeros_like(a.values)
        da[mask] = g / count
        return (da,)

    return _node(a.values[mask].mean(axis=0, keepdims=True), (a,), rule, "mean_rows")


def max_rows(a, mask=None):
    """Columnwise max over (unmasked) rows -> [1, d]; subgradient to the argmax."""
    if mask is None:
        mask = np.ones(a.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("max_rows: all positions masked out")
    rows = np.flatnonzero(mask)
    sub = a.values[rows]
    arg = rows[np.argmax(sub, axis=0)]

    def rule(g):
        da = np.zeros_like(a.values)
        np.add.at(da, (arg, np.arange(a.shape[1])), g[0])
        return (da,)

    return _node(sub.max(axis=0, keepdims=True), (a,), rule, "max_rows")


def softmax(x, axis=-1):
    """Numerically stable softmax (max-subtraction) along ``axis``."""
    v = x.values
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    return _node(y, (x,), rule, "softmax")


def log_softmax_np(v, axis=-1):
    """Plain numpy log-softmax for no-grad scoring paths."""
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def layer_norm(x, gain, bias, eps=1e-5):
    """Per-position normalization over the last axis, then affine."""
    d = x.shape[-1]
    if d < 2:
        raise ContractError(f"layer_norm: last dimension must be >= 2, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatchError(f"layer_norm: gain {gain.shape}, bias {bias.shape}, width {d}")
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    gv = gain.values

    def rule(g):
        dgain = _reduce_like(g * xh, gain.shape)
        dbias = _reduce_like(g, bias.shape)
        dxh = g * gv
        dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _node(xh * gv + bias.values, (x, gain, bias), rule, "layer_norm")


def cross_entropy(logits, targets, ignore_id=None):
    """Mean negative log-likelihood over non-ignored positions.

    Gradient is (softmax - onehot)/count at kept rows, zero elsewhere.
    """
    targets = np.asarray(targets, dtype=np.intp)
    if logits.values.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatchError(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    vsize = logits.shape[1]
    keep = np.ones(targets.shape, dtype=bool) if ignore_id is None else targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise ContractError("cross_entropy: every position is ignored, mean undefined")
    kept_targets = targets[keep]
    if kept_targets.size and (kept_targets.min() < 0 or kept_targets.max() >= vsize):
        bad = int(np.flatnonzero((targets < 0) | (targets >= vsize))[0])
        raise IndexError(f"cross_entropy: target {targets[bad]} at position {bad} out of range [0, {vsize})")

    logp = log_softmax_np(logits.values, axis=-1)
    loss = -logp[keep, kept_targets].mean()

    def rule(g):
        probs = np.exp(logp)
        dl = np.zeros_like(probs)
        dl[keep] = probs[keep]
        dl[keep, kept_targets] -= 1.0
        dl /= count
        return (dl * float(g),)

    return _node(loss, (logits,), rule, "cross_entropy")


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every reachable requires_grad tensor and returns
    the number of tape nodes visited (each exactly once).
    """
    if loss.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")

    topo, seen = [], set()
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    partial = {id(loss): np.ones(())}

    visited = 0
    for node in reversed(topo):
        visited += 1
        node._visits += 1
        g = partial.pop(id(node), None)
        if g is None:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.values)
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.values)
            node.grad = node.grad + g
        if node._rule is None:
            continue
        parent_grads = node._rule(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            acc = partial.get(id(p))
            partial[id(p)] = pg if acc is None else acc + pg
    return visited


def reachable_nodes(loss):
    """All tensors reachable from ``loss`` through parent links (the tape)."""
    seen, out, stack = set(), [], [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        stack.extend(node.parents)
    return out


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers and a shared step counter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]
        self.t = 0


def adam_step(params, grads, state, lr):
    """One Adam update; ``grads=None`` reads each parameter's ``.grad``."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(params) != len(state.m):
        raise ContractError("adam_step: params/grads/state lengths disagree")
    state.t += 1
    b1, b2, eps, t = state.beta1, state.beta2, state.eps, state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.values)
        if g.shape != p.values.shape:
            raise ContractError(f"adam_step: grad shape {g.shape} vs param shape {p.values.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.values -= lr * mhat / (np.sqrt(vhat) + eps)


def zero_grads(params):
    for p in params:
        p.grad = None
