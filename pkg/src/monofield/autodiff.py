"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is deliberately small: a ``Tensor`` wraps an ``np.ndarray``,
every differentiable operation goes through :func:`apply`, which builds an
acyclic graph of ``Node`` records, and :func:`backward` walks that graph
once in reverse topological order accumulating vector-Jacobian products
into the leaves.  The op set is fixed; new ops are added to ``OPS`` with a
forward function and a VJP, nothing else in the engine changes.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _active_tape():
    return getattr(_state, "tape", None)


class no_grad:
    """Context manager that disables graph construction on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Node:
    """One recorded operation: kind, input tensors, and saved attributes."""

    __slots__ = ("kind", "inputs", "attrs", "out_data")

    def __init__(self, kind: str, inputs: tuple, attrs: dict, out_data: np.ndarray):
        self.kind = kind
        self.inputs = inputs
        self.attrs = attrs
        self.out_data = out_data


class Tensor:
    """Dense float array with an optional gradient and graph linkage.

    Leaves are created directly (``Tensor(data, requires_grad=True)``);
    interior tensors are produced by ops and carry a ``node`` back-reference.
    ``grad`` is populated (accumulated) by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "node", "grad")

    # Make ndarray <op> Tensor defer to the reflected operators below
    # instead of numpy coercing the Tensor into a raw buffer.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    # arithmetic sugar; every path funnels through apply()
    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        return apply("mul", self, other)

    def __rmul__(self, other):
        return apply("mul", other, self)

    def __truediv__(self, other):
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def __pow__(self, exponent):
        return apply("power", self, exponent=float(exponent))

    def __neg__(self):
        return apply("mul", self, -1.0)

    def __getitem__(self, key):
        return apply("slice", self, key=key)

    def sum(self, axis=None, keepdims: bool = False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=tuple(shape))


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _expand_reduced(grad: np.ndarray, in_shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast the gradient of a reduction back over the reduced axes."""
    if axis is None:
        return np.broadcast_to(grad, in_shape).copy()
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(in_shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, in_shape).copy()


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))


# ---------------------------------------------------------------------------
# Op registry: kind -> (forward, vjp).
#
# forward(datas, attrs) -> np.ndarray
# vjp(g, datas, attrs, out) -> list of per-input gradients (None for
#   inputs that take no gradient).


def _fw_add(d, a):
    return d[0] + d[1]


def _bw_add(g, d, a, out):
    return [_sum_to_shape(g, d[0].shape), _sum_to_shape(g, d[1].shape)]


def _fw_sub(d, a):
    return d[0] - d[1]


def _bw_sub(g, d, a, out):
    return [_sum_to_shape(g, d[0].shape), _sum_to_shape(-g, d[1].shape)]


def _fw_mul(d, a):
    return d[0] * d[1]


def _bw_mul(g, d, a, out):
    return [_sum_to_shape(g * d[1], d[0].shape), _sum_to_shape(g * d[0], d[1].shape)]


def _fw_div(d, a):
    if np.any(d[1] == 0):
        raise ValueError("div: denominator contains exact zeros")
    return d[0] / d[1]


def _bw_div(g, d, a, out):
    ga = _sum_to_shape(g / d[1], d[0].shape)
    gb = _sum_to_shape(-g * d[0] / (d[1] * d[1]), d[1].shape)
    return [ga, gb]


def _fw_matmul(d, a):
    x, y = d
    if x.ndim != 2 or y.ndim != 2:
        raise ValueError(f"matmul: expected 2-d operands, got {x.shape} @ {y.shape}")
    if x.shape[1] != y.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {x.shape} @ {y.shape}")
    return x @ y


def _bw_matmul(g, d, a, out):
    return [g @ d[1].T, d[0].T @ g]


def _fw_sum(d, a):
    return np.sum(d[0], axis=a["axis"], keepdims=a["keepdims"])


def _bw_sum(g, d, a, out):
    return [_expand_reduced(g, d[0].shape, a["axis"], a["keepdims"])]


def _fw_mean(d, a):
    return np.mean(d[0], axis=a["axis"], keepdims=a["keepdims"])


def _bw_mean(g, d, a, out):
    count = d[0].size // max(out.size, 1)
    expanded = _expand_reduced(g, d[0].shape, a["axis"], a["keepdims"])
    return [expanded / count]


def _fw_exp(d, a):
    return np.exp(d[0])


def _bw_exp(g, d, a, out):
    return [g * out]


def _fw_log(d, a):
    x = d[0]
    eps = a["eps"]
    if eps is not None:
        x = np.maximum(x, eps)
    elif np.any(x <= 0):
        raise ValueError("log: input contains non-positive values and no eps guard set")
    return np.log(x)


def _bw_log(g, d, a, out):
    x = d[0]
    if a["eps"] is not None:
        x = np.maximum(x, a["eps"])
    return [g / x]


def _fw_relu(d, a):
    return np.maximum(d[0], 0)


def _bw_relu(g, d, a, out):
    return [g * (d[0] > 0)]


def _fw_sigmoid(d, a):
    return _stable_sigmoid(d[0])


def _bw_sigmoid(g, d, a, out):
    return [g * out * (1.0 - out)]


def _fw_softplus(d, a):
    x = d[0]
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def _bw_softplus(g, d, a, out):
    return [g * _stable_sigmoid(d[0])]


def _fw_power(d, a):
    x = d[0]
    p = a["exponent"]
    if p != round(p) and np.any(x < 0):
        raise ValueError("power: non-integer exponent on negative base")
    if p < 0 and np.any(x == 0):
        raise ValueError("power: negative exponent on zero base")
    return x ** p


def _bw_power(g, d, a, out):
    p = a["exponent"]
    return [g * p * d[0] ** (p - 1.0)]


def _fw_concat(d, a):
    return np.concatenate(d, axis=a["axis"])


def _bw_concat(g, d, a, out):
    axis = a["axis"]
    sizes = [x.shape[axis] for x in d]
    return list(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _fw_slice(d, a):
    return d[0][a["key"]].copy()


def _bw_slice(g, d, a, out):
    grad = np.zeros_like(d[0])
    grad[a["key"]] += g
    return [grad]


def _fw_gather(d, a):
    table = d[0]
    idx = a["indices"]
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError(
            f"gather: indices outside table of {table.shape[0]} rows"
        )
    return table[idx]


def _bw_gather(g, d, a, out):
    table = d[0]
    idx = a["indices"].ravel()
    cols = table.shape[1] if table.ndim == 2 else 1
    gf = g.reshape(-1, cols)
    grad = np.empty((table.shape[0], cols), dtype=np.float64)
    # bincount gives a deterministic scatter-add, unlike np.add.at's speed
    for c in range(cols):
        grad[:, c] = np.bincount(idx, weights=gf[:, c], minlength=table.shape[0])
    return [grad.reshape(table.shape).astype(table.dtype, copy=False)]


def _fw_cumprod_exclusive(d, a):
    x = np.moveaxis(d[0], a["axis"], -1)
    cp = np.cumprod(x, axis=-1)
    out = np.concatenate([np.ones_like(x[..., :1]), cp[..., :-1]], axis=-1)
    return np.moveaxis(out, -1, a["axis"]).copy()


def _bw_cumprod_exclusive(g, d, a, out):
    # grad_k = out_k * S_k with the reverse scan
    # S_k = g_{k+1} + a_{k+1} * S_{k+1}, S_{n-1} = 0,
    # which avoids dividing by (possibly zero) inputs.
    axis = a["axis"]
    x = np.moveaxis(d[0], axis, -1)
    gm = np.moveaxis(g, axis, -1)
    om = np.moveaxis(out, axis, -1)
    n = x.shape[-1]
    s = np.zeros_like(x)
    for k in range(n - 2, -1, -1):
        s[..., k] = gm[..., k + 1] + x[..., k + 1] * s[..., k + 1]
    return [np.moveaxis(om * s, -1, axis).copy()]


def _fw_broadcast(d, a):
    return np.broadcast_to(d[0], a["shape"]).copy()


def _bw_broadcast(g, d, a, out):
    return [_sum_to_shape(g, d[0].shape)]


def _fw_reshape(d, a):
    return d[0].reshape(a["shape"]).copy()


def _bw_reshape(g, d, a, out):
    return [g.reshape(d[0].shape)]


OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_fw_add, _bw_add),
    "sub": (_fw_sub, _bw_sub),
    "mul": (_fw_mul, _bw_mul),
    "div": (_fw_div, _bw_div),
    "matmul": (_fw_matmul, _bw_matmul),
    "sum": (_fw_sum, _bw_sum),
    "mean": (_fw_mean, _bw_mean),
    "exp": (_fw_exp, _bw_exp),
    "log": (_fw_log, _bw_log),
    "relu": (_fw_relu, _bw_relu),
    "sigmoid": (_fw_sigmoid, _bw_sigmoid),
    "softplus": (_fw_softplus, _bw_softplus),
    "power": (_fw_power, _bw_power),
    "concat": (_fw_concat, _bw_concat),
    "slice": (_fw_slice, _bw_slice),
    "gather": (_fw_gather, _bw_gather),
    "cumprod_exclusive": (_fw_cumprod_exclusive, _bw_cumprod_exclusive),
    "broadcast": (_fw_broadcast, _bw_broadcast),
    "reshape": (_fw_reshape, _bw_reshape),
}

_DEFAULT_ATTRS = {
    "sum": {"axis": None, "keepdims": False},
    "mean": {"axis": None, "keepdims": False},
    "log": {"eps": None},
    "cumprod_exclusive": {"axis": -1},
    "concat": {"axis": 0},
}


def apply(kind: str, *inputs, **attrs) -> Tensor:
    """Run one op of the fixed set and (when enabled) record it on the graph.

    Python scalars and bare arrays among ``inputs`` are promoted to constant
    tensors with the dtype of the first Tensor operand.  All Tensor operands
    must share a dtype; mixing 32- and 64-bit tensors raises.
    """
    if kind not in OPS:
        raise KeyError(f"unknown op kind: {kind!r}")
    base_dtype = None
    for x in inputs:
        if isinstance(x, Tensor):
            base_dtype = x.dtype
            break
    if base_dtype is None:
        base_dtype = np.float64
    tensors = tuple(_as_tensor(x, base_dtype) for x in inputs)
    for t in tensors:
        if t.dtype != base_dtype:
            raise TypeError(
                f"{kind}: mixed dtypes {base_dtype.name} and {t.dtype.name}; "
                "cast operands explicitly"
            )
    merged = dict(_DEFAULT_ATTRS.get(kind, {}))
    merged.update(attrs)

    datas = [t.data for t in tensors]
    forward, _ = OPS[kind]
    out_data = forward(datas, merged)

    out = Tensor(out_data)
    needs_grad = _grad_enabled() and any(t.requires_grad for t in tensors)
    if needs_grad:
        out.requires_grad = True
        out.node = Node(kind, tensors, merged, out_data)
    tape = _active_tape()
    if tape is not None:
        tape._record(kind, tensors, merged, out)
    return out


# ---------------------------------------------------------------------------
# Backward pass


def _topo_order(root: Node) -> list:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for t in node.inputs:
            if t.node is not None and id(t.node) not in seen:
                stack.append((t.node, False))
    return order


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(leaf) into each reachable leaf's ``grad``.

    ``loss`` must be scalar.  Returns a dict mapping each reached leaf
    Tensor to its gradient array for this call (without prior
    accumulation).  Calling backward again on the same graph accumulates
    into ``.grad`` a second time; use ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    leaf_grads: dict[Tensor, np.ndarray] = {}
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = seed if loss.grad is None else loss.grad + seed
            leaf_grads[loss] = seed
        return leaf_grads

    grads: dict[int, np.ndarray] = {id(loss.node): seed}
    for node in reversed(_topo_order(loss.node)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        _, vjp = OPS[node.kind]
        datas = [t.data for t in node.inputs]
        in_grads = vjp(g, datas, node.attrs, node.out_data)
        for t, ig in zip(node.inputs, in_grads):
            if ig is None or not t.requires_grad:
                continue
            ig = np.asarray(ig, dtype=t.dtype)
            if t.node is not None:
                key = id(t.node)
                grads[key] = ig if key not in grads else grads[key] + ig
            else:
                if t in leaf_grads:
                    leaf_grads[t] = leaf_grads[t] + ig
                else:
                    leaf_grads[t] = ig
    for t, g in leaf_grads.items():
        t.grad = g.copy() if t.grad is None else t.grad + g
    return leaf_grads


# ---------------------------------------------------------------------------
# Gradient checking


def gradcheck(
    f: Callable[..., Tensor],
    probes: "Tensor | Sequence[Tensor]",
    eps: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    Args:
        f: callable taking the probe tensors and returning a scalar Tensor.
        probes: one leaf Tensor or a sequence of them; must be float64
            (float32 finite differences are too noisy to certify anything).
        eps: central-difference step.
        max_coords: probe at most this many coordinates per tensor,
            sampled without replacement; all coordinates when None.
        rng: source for coordinate sampling when max_coords is set.

    Returns:
        max over probed coordinates of
        ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    probe_list = [probes] if isinstance(probes, Tensor) else list(probes)
    for p in probe_list:
        if p.dtype != np.float64:
            raise TypeError("gradcheck: probes must be float64")
        p.requires_grad = True
        p.zero_grad()

    y = f(*probe_list)
    if not isinstance(y, Tensor) or y.size != 1:
        raise ValueError("gradcheck: f must return a scalar Tensor")
    if not np.isfinite(y.data).all():
        raise FloatingPointError("gradcheck: f is non-finite at the probe point")
    backward(y)

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p in probe_list:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        coords: Iterable[int] = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for j in coords:
            orig = flat[j]
            with no_grad():
                flat[j] = orig + eps
                hi = float(f(*probe_list).data)
                flat[j] = orig - eps
                lo = float(f(*probe_list).data)
            flat[j] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(
                    "gradcheck: f is non-finite within eps of the probe point"
                )
            numeric = (hi - lo) / (2.0 * eps)
            a = float(aflat[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    for p in probe_list:
        p.zero_grad()
    return worst


# ---------------------------------------------------------------------------
# Recording tape


class ReplayMismatch(AssertionError):
    """Raised when re-running a recorded graph changes any output bit."""


class _Record:
    __slots__ = ("kind", "input_ids", "attrs", "out_id")

    def __init__(self, kind, input_ids, attrs, out_id):
        self.kind = kind
        self.input_ids = input_ids
        self.attrs = attrs
        self.out_id = out_id


class Tape:
    """Append-only record of every op applied while the tape is active.

    The tape stores (op kind, input tensor ids, saved attributes) per op
    plus an id -> Tensor map for the outputs; ids only ever reference
    earlier rows or pre-existing leaves, so the record is acyclic by
    construction.  :meth:`replay` re-executes the rows in order and
    verifies each output is bit-identical to the recorded one.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.tensors: dict[int, Tensor] = {}

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def _record(self, kind, inputs, attrs, out):
        ids = []
        for t in inputs:
            self.tensors.setdefault(id(t), t)
            ids.append(id(t))
        self.tensors[id(out)] = out
        self.records.append(_Record(kind, tuple(ids), dict(attrs), id(out)))

    def replay(self) -> int:
        """Re-run every recorded op; raise ReplayMismatch on any bit diff.

        Returns the number of ops replayed.
        """
        env: dict[int, np.ndarray] = {}
        for i, rec in enumerate(self.records):
            datas = []
            for tid in rec.input_ids:
                datas.append(env.get(tid, self.tensors[tid].data))
            forward, _ = OPS[rec.kind]
            out = forward(datas, rec.attrs)
            want = self.tensors[rec.out_id].data
            same = (
                out.dtype == want.dtype
                and out.shape == want.shape
                and np.ascontiguousarray(out).tobytes()
                == np.ascontiguousarray(want).tobytes()
            )
            if not same:
                raise ReplayMismatch(
                    f"replay diverged at record {i} ({rec.kind})"
                )
            env[rec.out_id] = out
        return len(self.records)
