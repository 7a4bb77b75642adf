"""
Dense-matrix numerics with reverse-mode differentiation.

A Matrix is a 2-D float64 numpy array. Matrices created through ``Tape.leaf``
require gradients; every operation with at least one gradient-requiring operand
is appended to that operand's tape together with its local gradient rule.
Matrices with no tape attachment are plain immutable values, so constants (a
frozen network, an input cloud) never allocate gradient buffers.

Operations also report their multiply-accumulate counts to an active
``MacCounter`` (see ``count_macs``), which the cost model uses as an oracle.
"""
import contextvars
import logging
from contextlib import contextmanager
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractError, DimensionError, DomainError

logger = logging.getLogger(__name__)

Rule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Matrix:
    """2-D real array, optionally attached to a Tape"""

    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value, tape: "Tape" = None, requires_grad: bool = False, name: str = None):
        value = np.array(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise DimensionError(f"Matrix must be 2-D, got shape {value.shape}")
        value.setflags(write=False)
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return np.array(self.value)

    def __repr__(self):
        return f"Matrix(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Matrix):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("output", "operands", "rule", "op")

    def __init__(self, output: Matrix, operands: Sequence[Matrix], rule: Rule, op: str):
        self.output = output
        self.operands = tuple(operands)
        self.rule = rule
        self.op = op


class Tape:
    """Ordered record of operations; operands always precede the nodes using them"""

    def __init__(self):
        self.nodes: List[_Node] = []
        self.leaves: List[Matrix] = []

    def leaf(self, value, name: str = None) -> Matrix:
        m = Matrix(value, tape=self, requires_grad=True, name=name or f"leaf{len(self.leaves)}")
        self.leaves.append(m)
        return m

    def record(self, output: Matrix, operands: Sequence[Matrix], rule: Rule, op: str):
        self.nodes.append(_Node(output, operands, rule, op))

    def __len__(self):
        return len(self.nodes)


# ---------- MAC accounting ----------

class MacCounter:
    """Accumulates multiply-accumulate counts, optionally split by stage"""

    def __init__(self):
        self.total = 0
        self.by_stage: Dict[str, int] = {}
        self._stage = "unstaged"

    def add(self, macs: int):
        self.total += int(macs)
        self.by_stage[self._stage] = self.by_stage.get(self._stage, 0) + int(macs)

    @contextmanager
    def stage(self, name: str):
        previous, self._stage = self._stage, name
        try:
            yield self
        finally:
            self._stage = previous


_ACTIVE_COUNTER: contextvars.ContextVar = contextvars.ContextVar("lightn_mac_counter", default=None)


@contextmanager
def count_macs():
    """Count the MACs of every matrix product executed inside the block"""
    counter = MacCounter()
    token = _ACTIVE_COUNTER.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER.reset(token)


def active_counter() -> Optional[MacCounter]:
    return _ACTIVE_COUNTER.get()


def _count(macs: int):
    counter = active_counter()
    if counter is not None:
        counter.add(macs)


# ---------- graph plumbing ----------

def _as_matrix(x) -> Matrix:
    return x if isinstance(x, Matrix) else Matrix(x)


def _result(value: np.ndarray, operands: Sequence[Matrix], rule: Rule, op: str) -> Matrix:
    tape = None
    for operand in operands:
        if operand.requires_grad:
            if tape is not None and operand.tape is not tape:
                raise ContractError(f"{op}: operands belong to different tapes")
            tape = operand.tape
    out = Matrix(value)
    if tape is not None:
        out.tape = tape
        out.requires_grad = True
        tape.record(out, operands, rule, op)
    return out


def _same_shape(a: Matrix, b: Matrix, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def _non_empty(x: Matrix, op: str):
    if x.rows == 0 or x.cols == 0:
        raise DomainError(f"{op} on empty matrix of shape {x.shape}")


# ---------- linear algebra ----------

def matmul(a: Matrix, b: Matrix) -> Matrix:
    a, b = _as_matrix(a), _as_matrix(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    _count(a.rows * a.cols * b.cols)
    av, bv = a.value, b.value

    def rule(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), rule, "matmul")


def transpose(a: Matrix) -> Matrix:
    a = _as_matrix(a)
    return _result(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def gram(x: Matrix, symmetric: bool = True) -> Matrix:
    """
    A = x·xᵀ.

    With ``symmetric`` only the upper triangle is evaluated (n(n+1)/2·d MACs)
    and mirrored, so A is exactly symmetric. Otherwise this is a full matmul.
    """
    x = _as_matrix(x)
    if not symmetric:
        return matmul(x, transpose(x))
    xv = x.value
    n, d = xv.shape
    a = np.empty((n, n))
    for i in range(n):
        row = xv[i:] @ xv[i]
        a[i, i:] = row
        a[i:, i] = row
    _count(n * (n + 1) // 2 * d)

    def rule(g):
        return ((g + g.T) @ xv,)

    return _result(a, (x,), rule, "gram")


def add_row(x: Matrix, b: Matrix) -> Matrix:
    """x + b with the 1×cols row b broadcast over rows"""
    x, b = _as_matrix(x), _as_matrix(b)
    if b.rows != 1 or b.cols != x.cols:
        raise DimensionError(f"row bias shape {b.shape} does not fit {x.shape}")

    def rule(g):
        return g, g.sum(axis=0, keepdims=True)

    return _result(x.value + b.value, (x, b), rule, "add_row")


def linear(x: Matrix, w: Matrix, b: Matrix) -> Matrix:
    """x·w + b, b broadcast over rows"""
    x, w, b = _as_matrix(x), _as_matrix(w), _as_matrix(b)
    if x.cols != w.rows:
        raise DimensionError(f"linear shape mismatch: x {x.shape} x w {w.shape}")
    if b.cols != w.cols:
        raise DimensionError(f"linear bias shape {b.shape} does not fit w {w.shape}")
    return add_row(matmul(x, w), b)


# ---------- pointwise ----------

def add(a: Matrix, b: Matrix) -> Matrix:
    a, b = _as_matrix(a), _as_matrix(b)
    _same_shape(a, b, "add")
    return _result(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Matrix, b: Matrix) -> Matrix:
    a, b = _as_matrix(a), _as_matrix(b)
    _same_shape(a, b, "sub")
    return _result(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Matrix, b: Matrix) -> Matrix:
    a, b = _as_matrix(a), _as_matrix(b)
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(x: Matrix, factor: float) -> Matrix:
    x = _as_matrix(x)
    return _result(x.value * factor, (x,), lambda g: (g * factor,), "scale")


def shift(x: Matrix, constant: float) -> Matrix:
    x = _as_matrix(x)
    return _result(x.value + constant, (x,), lambda g: (g,), "shift")


def relu(x: Matrix) -> Matrix:
    x = _as_matrix(x)
    mask = x.value > 0
    return _result(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x: Matrix) -> Matrix:
    x = _as_matrix(x)
    out = np.exp(x.value)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def square(x: Matrix) -> Matrix:
    x = _as_matrix(x)
    xv = x.value
    return _result(xv * xv, (x,), lambda g: (2.0 * xv * g,), "square")


def divide(x: Matrix, s: Matrix) -> Matrix:
    """x / s for a 1×1 matrix s; gradients flow to both"""
    x, s = _as_matrix(x), _as_matrix(s)
    if s.shape != (1, 1):
        raise DimensionError(f"divide needs a 1x1 divisor, got {s.shape}")
    xv, sv = x.value, s.value[0, 0]

    def rule(g):
        return g / sv, np.array([[-(g * xv).sum() / (sv * sv)]])

    return _result(xv / sv, (x, s), rule, "divide")


def elementwise(x: Matrix, kind: str, other: Matrix = None, factor: float = None) -> Matrix:
    """Dispatch for the pointwise kinds; binary kinds take ``other``, scale takes ``factor``"""
    if kind == "relu":
        return relu(x)
    if kind == "exp":
        return exp(x)
    if kind == "square":
        return square(x)
    if kind in ("add", "mul"):
        if other is None:
            raise DimensionError(f"elementwise {kind} needs a second operand")
        return add(x, other) if kind == "add" else mul(x, other)
    if kind == "scale":
        return scale(x, 1.0 if factor is None else factor)
    raise DomainError(f"unknown elementwise kind '{kind}'")


# ---------- normalizations ----------

def row_softmax(m: Matrix) -> Matrix:
    m = _as_matrix(m)
    _non_empty(m, "row_softmax")
    z = m.value - m.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _result(out, (m,), rule, "row_softmax")


def layer_norm(x: Matrix, gain: Matrix, bias: Matrix, eps: float = 1e-5) -> Matrix:
    """Per-row normalization over the columns with per-column gain and shift"""
    x, gain, bias = _as_matrix(x), _as_matrix(gain), _as_matrix(bias)
    if gain.shape != (1, x.cols) or bias.shape != (1, x.cols):
        raise DimensionError(f"layer_norm params {gain.shape}/{bias.shape} do not fit {x.shape}")
    xv = x.value
    mu = xv.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(xv.var(axis=1, keepdims=True) + eps)
    xhat = (xv - mu) * inv
    gv = gain.value

    def rule(g):
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _result(xhat * gv + bias.value, (x, gain, bias), rule, "layer_norm")


# ---------- reductions ----------

def reduce(x: Matrix, kind: str) -> Matrix:
    """
    Reduce x.

    sum/mean give a 1×1 matrix; max_over_rows/min_over_rows give the
    column-wise extremum (1×cols) and route gradients to the selected row,
    lowest index on ties.
    """
    x = _as_matrix(x)
    _non_empty(x, f"reduce({kind})")
    xv = x.value
    if kind == "sum":
        shape = xv.shape
        return _result(np.array([[xv.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum")
    if kind == "mean":
        shape, count = xv.shape, xv.size
        return _result(np.array([[xv.mean()]]), (x,), lambda g: (np.full(shape, g[0, 0] / count),), "mean")
    if kind in ("max_over_rows", "min_over_rows"):
        idx = xv.argmax(axis=0) if kind == "max_over_rows" else xv.argmin(axis=0)
        cols = np.arange(xv.shape[1])
        shape = xv.shape

        def rule(g):
            grad = np.zeros(shape)
            grad[idx, cols] = g[0]
            return (grad,)

        return _result(xv[idx, cols][None, :], (x,), rule, kind)
    raise DomainError(f"unknown reduce kind '{kind}'")


def max_over_segments(x: Matrix, segment: int) -> Matrix:
    """Column-wise max over consecutive blocks of ``segment`` rows (batched pooling)"""
    x = _as_matrix(x)
    _non_empty(x, "max_over_segments")
    if segment < 1 or x.rows % segment:
        raise DimensionError(f"{x.rows} rows do not split into segments of {segment}")
    blocks = x.value.reshape(x.rows // segment, segment, x.cols)
    idx = blocks.argmax(axis=1)
    b_idx = np.arange(blocks.shape[0])[:, None]
    c_idx = np.arange(x.cols)[None, :]
    shape = blocks.shape

    def rule(g):
        grad = np.zeros(shape)
        grad[b_idx, idx, c_idx] = g
        return (grad.reshape(-1, shape[2]),)

    return _result(blocks[b_idx, idx, c_idx], (x,), rule, "max_over_segments")


# ---------- shape plumbing ----------

def reshape(x: Matrix, rows: int, cols: int) -> Matrix:
    x = _as_matrix(x)
    if rows * cols != x.value.size:
        raise DimensionError(f"cannot reshape {x.shape} to ({rows}, {cols})")
    shape = x.shape
    return _result(x.value.reshape(rows, cols), (x,), lambda g: (g.reshape(shape),), "reshape")


def concat_rows(parts: Sequence[Matrix]) -> Matrix:
    parts = [_as_matrix(p) for p in parts]
    if not parts:
        raise DomainError("concat_rows of nothing")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise DimensionError(f"concat_rows column mismatch: {p.shape} vs {cols} cols")
    bounds = np.cumsum([p.rows for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=0))

    return _result(np.vstack([p.value for p in parts]), parts, rule, "concat_rows")


def gather_cols(x: Matrix, idx: np.ndarray) -> Matrix:
    """out[i, j] = x[i, idx[i, j]]"""
    x = _as_matrix(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[0] != x.rows:
        raise DimensionError(f"gather index shape {idx.shape} does not fit {x.shape}")
    rows = np.arange(x.rows)[:, None]
    shape = x.shape

    def rule(g):
        grad = np.zeros(shape)
        np.add.at(grad, (np.broadcast_to(rows, idx.shape), idx), g)
        return (grad,)

    return _result(x.value[rows, idx], (x,), rule, "gather_cols")


def scatter_cols(w: Matrix, idx: np.ndarray, ncols: int) -> Matrix:
    """Inverse of gather_cols for distinct indices per row: out[i, idx[i, j]] = w[i, j]"""
    w = _as_matrix(w)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != w.shape:
        raise DimensionError(f"scatter index shape {idx.shape} does not match {w.shape}")
    rows = np.arange(w.rows)[:, None]
    out = np.zeros((w.rows, ncols))
    out[rows, idx] = w.value
    return _result(out, (w,), lambda g: (g[rows, idx],), "scatter_cols")


# ---------- geometry and losses ----------

def pairwise_sq_dist(a: Matrix, b: Matrix) -> Matrix:
    """D[i, j] = ‖a_i − b_j‖², differentiable in both point sets"""
    a, b = _as_matrix(a), _as_matrix(b)
    if a.cols != b.cols:
        raise DimensionError(f"pairwise_sq_dist dimension mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    diff = av[:, None, :] - bv[None, :, :]
    d = (diff * diff).sum(axis=2)

    def rule(g):
        ga = 2.0 * (av * g.sum(axis=1, keepdims=True) - g @ bv)
        gb = 2.0 * (bv * g.sum(axis=0)[:, None] - g.T @ av)
        return ga, gb

    return _result(d, (a, b), rule, "pairwise_sq_dist")


def softmax_cross_entropy(logits: Matrix, labels: Sequence[int]) -> Matrix:
    """Mean softmax cross-entropy over the rows of ``logits``"""
    logits = _as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (logits.rows,):
        raise DimensionError(f"{labels.shape[0]} labels for {logits.rows} logit rows")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(logits.rows)
    loss = -log_p[rows, labels].mean()

    def rule(g):
        grad = np.exp(log_p)
        grad[rows, labels] -= 1.0
        return (grad * (g[0, 0] / logits.rows),)

    return _result(np.array([[loss]]), (logits,), rule, "softmax_cross_entropy")


# ---------- reverse pass ----------

def backward(tape: Tape, loss: Matrix) -> Dict[str, np.ndarray]:
    """
    Populate gradients of ``loss`` for every leaf of ``tape``.

    Leaves unreachable from the loss receive zero buffers. Returns a dict of
    leaf name -> gradient.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad or loss.tape is not tape:
        raise ContractError("loss is not recorded on this tape")

    for node in tape.nodes:
        node.output.grad = None
    for leaf in tape.leaves:
        leaf.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        for operand, operand_grad in zip(node.operands, node.rule(g)):
            if operand_grad is None or not operand.requires_grad:
                continue
            operand.grad = operand_grad if operand.grad is None else operand.grad + operand_grad

    grads = {}
    for leaf in tape.leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros(leaf.shape)
        grads[leaf.name] = leaf.grad
    return grads


def grad_check(f: Callable[[Matrix], Matrix], x, step: float = 1e-5) -> float:
    """
    Max over entries of |analytic − central difference| / max(1, |central difference|).

    ``f`` must build its result from the Matrix it is given using the ops of this
    module, so it works both on a tape leaf and on a plain constant.
    """
    x0 = np.array(x.value if isinstance(x, Matrix) else x, dtype=np.float64)
    if x0.ndim == 1:
        x0 = x0.reshape(1, -1)
    tape = Tape()
    leaf = tape.leaf(x0, name="x")
    backward(tape, f(leaf))
    analytic = leaf.grad

    worst = 0.0
    for index in np.ndindex(*x0.shape):
        plus, minus = x0.copy(), x0.copy()
        plus[index] += step
        minus[index] -= step
        numeric = (f(Matrix(plus)).item() - f(Matrix(minus)).item()) / (2.0 * step)
        err = abs(analytic[index] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


# ---------- optimizer ----------

class Adam:
    """Adam over a dict of named numpy arrays, updated in place"""

    def __init__(self, params: Dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise DomainError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = 0

    def step(self, grads: Dict[str, np.ndarray]):
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for name, g in grads.items():
            if name not in self.params:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            self.params[name] -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
