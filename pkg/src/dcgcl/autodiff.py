"""Reverse-mode automatic differentiation over dense float64 matrices.

Every tensor is two-dimensional; scalars are ``(1, 1)`` and vectors are
``(1, d)`` rows. The graph is built define-by-run: each primitive returns a
new :class:`Tensor` that remembers its parents and a closure that pushes the
output gradient back into them. Creation order is recorded with a global
counter, so sorting ancestors by that id gives a valid reverse topological
order for :meth:`Tensor.backward`.

Broadcasting is deliberately narrow: elementwise binary ops accept either two
same-shape operands or an ``(n, d)`` left operand with a ``(1, d)`` row on the
right. Anything else has to be spelled out (see :func:`expand_cols`).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = _op
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backprop(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar; all of these route through the primitives below
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(_lift(other), self)

    def __truediv__(self, other):
        if np.isscalar(other):
            if other == 0:
                raise DomainError("division by zero scalar")
            return scale(self, 1.0 / float(other))
        return div(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def const(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def param(x) -> Tensor:
    return Tensor(np.array(x, dtype=np.float64, copy=True), requires_grad=True)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def backprop(loss: Tensor) -> None:
    """Populate ``.grad`` on every ancestor of ``loss`` that requires grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backprop needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen.add(node._id)
        order.append(node)
        stack.extend(p for p in node._parents if p.requires_grad and p._id not in seen)
    order.sort(key=lambda t: t._id, reverse=True)
    # interior gradients are scratch; leaves keep (and accumulate) theirs
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in order:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node.grad = None


def _check_binary(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True if ``b`` is a row vector broadcast over ``a``'s rows."""
    if a.shape == b.shape:
        return False
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_rows(g: np.ndarray, bcast: bool) -> np.ndarray:
    return g.sum(axis=0, keepdims=True) if bcast else g


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "add")

    def bw(g):
        a._accumulate(g)
        b._accumulate(_reduce_rows(g, bc))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "sub")

    def bw(g):
        a._accumulate(g)
        b._accumulate(-_reduce_rows(g, bc))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(_reduce_rows(g * a.data, bc))

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError(f"div: zero in denominator of shape {b.shape}")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            b._accumulate(_reduce_rows(-g * out / b.data, bc))

    return _make(out, (a, b), "div", bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), "scale", lambda g: a._accumulate(g * c))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", bw)


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), "transpose", lambda g: a._accumulate(g.T))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0  # gradient at exactly 0 is 0
    return _make(np.where(keep, a.data, 0.0), (a,), "relu", lambda g: a._accumulate(g * keep))


def maximum(a: Tensor, c: float) -> Tensor:
    """Elementwise ``max(a, c)``; ties send no gradient to ``a``."""
    keep = a.data > c
    return _make(np.where(keep, a.data, c), (a,), "maximum", lambda g: a._accumulate(g * keep))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise DomainError("exp overflow")
    return _make(out, (a,), "exp", lambda g: a._accumulate(g * out))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"log of nonpositive entry (min {a.data.min()!r})")
    return _make(np.log(a.data), (a,), "log", lambda g: a._accumulate(g / a.data))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError(f"sqrt needs positive entries (min {a.data.min()!r})")
    out = np.sqrt(a.data)
    return _make(out, (a,), "sqrt", lambda g: a._accumulate(g * 0.5 / out))


def sum(a: Tensor) -> Tensor:  # noqa: A001
    return _make(a.data.sum().reshape(1, 1), (a,), "sum",
                 lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(a.data.mean().reshape(1, 1), (a,), "mean",
                 lambda g: a._accumulate(np.broadcast_to(g / n, a.shape)))


def row_sum(a: Tensor) -> Tensor:
    return _make(a.data.sum(axis=1, keepdims=True), (a,), "row_sum",
                 lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def row_mean(a: Tensor) -> Tensor:
    d = a.shape[1]
    return _make(a.data.mean(axis=1, keepdims=True), (a,), "row_mean",
                 lambda g: a._accumulate(np.broadcast_to(g / d, a.shape)))


def row_norm(a: Tensor) -> Tensor:
    """Per-row L2 norm, shape ``(n, 1)``. Zero rows are a domain error."""
    out = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    if np.any(out == 0):
        raise DomainError("row_norm: zero-norm row")
    return _make(out, (a,), "row_norm", lambda g: a._accumulate(g * a.data / out))


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, cuts[:-1], cuts[1:]):
            p._accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), "concat", bw)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if not 0 <= lo <= hi <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{lo}, {hi}) out of range for {a.shape}")

    def bw(g):
        full = np.zeros(a.shape)
        full[:, lo:hi] = g
        a._accumulate(full)

    return _make(a.data[:, lo:hi].copy(), (a,), "slice_cols", bw)


def gather_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape}")

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(a.data[idx], (a,), "gather_rows", bw)


def scatter_add_rows(a: Tensor, index, num_rows: int) -> Tensor:
    """Row ``i`` of ``a`` is added into output row ``index[i]``."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape[0] != a.shape[0]:
        raise ShapeError(f"scatter_add_rows: {idx.shape[0]} indices for {a.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ShapeError("scatter_add_rows: index out of range")
    out = np.zeros((num_rows, a.shape[1]))
    np.add.at(out, idx, a.data)
    return _make(out, (a,), "scatter_add_rows", lambda g: a._accumulate(g[idx]))


def row_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along each row.

    ``mask`` (boolean, same shape) restricts every row to its True entries;
    masked-out entries are exactly 0 in the output. Each row needs at least
    one True entry.
    """
    x = a.data
    if mask is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"row_softmax: mask {mask.shape} vs input {a.shape}")
        if not mask.any(axis=1).all():
            raise DomainError("row_softmax: a row has no unmasked entries")
        z = np.where(mask, x, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=1, keepdims=True)))

    return _make(out, (a,), "row_softmax", bw)


def grouped_attention(q: Tensor, k: Tensor, v: Tensor, sizes: Sequence[int], num_heads: int,
                      head_keep: Sequence[int] | None = None) -> Tensor:
    """Multi-head scaled dot-product attention restricted to contiguous row groups.

    Rows ``0..sizes[0]-1`` form the first group, and so on; a row attends only
    within its group. Heads are column blocks of width ``d / num_heads`` and
    use the ``1/sqrt(d / num_heads)`` scale. Columns of a head whose keep bit
    is 0 are exactly zero. Equivalent to a masked dense softmax per head, but
    costs ``O(sum n_g^2)`` instead of ``O((sum n_g)^2)``.
    """
    n, d = q.shape
    if k.shape != (n, d) or v.shape != (n, d):
        raise ShapeError(f"grouped_attention: shapes {q.shape}, {k.shape}, {v.shape}")
    if d % num_heads:
        raise ShapeError(f"width {d} not divisible by {num_heads} heads")
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.sum() != n or np.any(sizes < 1):
        raise ShapeError("group sizes must be positive and sum to the row count")
    dh = d // num_heads
    keep = np.ones(num_heads) if head_keep is None else np.asarray(head_keep, dtype=np.float64)
    g_count, m = len(sizes), int(sizes.max())
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    slot = np.arange(m)[None, :]
    valid = slot < sizes[:, None]
    rows = np.where(valid, offsets[:, None] + slot, 0)

    def pad(x):
        # (n, d) -> (graphs, heads, slots, dh), zero in empty slots
        blocks = np.where(valid[:, :, None], x[rows], 0.0).reshape(g_count, m, num_heads, dh)
        return blocks.transpose(0, 2, 1, 3)

    def unpad(x4):
        return x4.transpose(0, 2, 1, 3).reshape(g_count, m, d)[valid]

    q4, k4, v4 = pad(q.data), pad(k.data), pad(v.data)
    key_ok = valid[:, None, None, :]
    scores = np.where(key_ok, q4 @ k4.transpose(0, 1, 3, 2) / np.sqrt(dh), -np.inf)
    scores -= scores.max(axis=3, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=3, keepdims=True)
    attn *= keep[None, :, None, None]
    out = np.zeros((n, d))
    out[rows[valid]] = unpad(attn @ v4)

    def bw(g):
        g4 = pad(g)
        d_attn = g4 @ v4.transpose(0, 1, 3, 2)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=3, keepdims=True)) / np.sqrt(dh)
        grads = (d_scores @ k4, d_scores.transpose(0, 1, 3, 2) @ q4, attn.transpose(0, 1, 3, 2) @ g4)
        for t, g_pad in zip((q, k, v), grads):
            if t.requires_grad:
                full = np.zeros((n, d))
                full[rows[valid]] = unpad(g_pad)
                t._accumulate(full)

    return _make(out, (q, k, v), "grouped_attention", bw)


def expand_cols(col: Tensor, width: int) -> Tensor:
    """Repeat an ``(n, 1)`` column ``width`` times, as an explicit matmul."""
    if col.shape[1] != 1:
        raise ShapeError(f"expand_cols needs a column, got {col.shape}")
    return matmul(col, const(np.ones((1, width))))


def detach(a: Tensor) -> Tensor:
    return const(a.data)


# --------------------------------------------------------------------------
# gradient checking


class NonDeterministicClosure(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    num_coords: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max relative error {self.max_rel_error:.3e} "
                f"over {self.num_coords} coordinates (tolerance {self.tolerance:g})")


def finite_diff_check(
    closure: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    num_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients with central differences.

    ``closure`` must rebuild the loss from the current contents of ``params``
    and be deterministic; it is called twice up front to confirm that.
    Relative error is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    first = closure().item()
    second = closure().item()
    if first != second:
        raise NonDeterministicClosure(
            f"closure returned {first!r} then {second!r} at identical parameters")

    for p in params.values():
        p.zero_grad()
    closure().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
                for k, p in params.items()}

    coords = [(k, i) for k, p in params.items() for i in range(p.data.size)]
    take = min(num_coords, len(coords))
    picks = rng.choice(len(coords), size=take, replace=False)
    per_param: dict[str, float] = {}
    for j in sorted(picks):
        name, flat = coords[j]
        arr = params[name].data.reshape(-1)
        orig = arr[flat]
        arr[flat] = orig + step
        up = closure().item()
        arr[flat] = orig - step
        down = closure().item()
        arr[flat] = orig
        g_fd = (up - down) / (2 * step)
        g_ad = analytic[name].reshape(-1)[flat]
        err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
        per_param[name] = max(per_param.get(name, 0.0), err)
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(worst, per_param, take, tolerance)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ShapeError(f"adam: grad {g.shape} vs param {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape:
            raise ShapeError(f"adam: moment shape {m.shape} vs param {p.shape} for {name!r}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def collect_grads(params: dict[str, Tensor], names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    names = params.keys() if names is None else names
    return {k: (params[k].grad if params[k].grad is not None else np.zeros(params[k].shape))
            for k in names}
