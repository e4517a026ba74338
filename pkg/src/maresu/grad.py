"""A small define-then-run reverse-mode tape over matrix primitives.

Build a graph with the :class:`Tape` methods, evaluate it with
:func:`tape_eval`, then pull adjoints back with :func:`tape_grad`::

    tape = Tape()
    q, k, v = tape.input("Q"), tape.input("K"), tape.input("V")
    tape.sum(tape.linear_attention(q, k, v))
    loss = tape_eval(tape, {"Q": Q, "K": K, "V": V})
    grads = tape_grad(tape)          # {"Q": dL/dQ, "K": ..., "V": ...}

The last node added is the loss and must evaluate to a 1 x 1 matrix.
Composite attention ops are expanded into primitives so each adjoint
is small enough to audit on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .attention import AttentionDims
from .errors import ParameterError, ShapeError, StateError
from .numerics import DEFAULT_EPS, Rng, as_matrix, seeded_fill


class Node:
    __slots__ = ("index", "op", "inputs", "attrs", "label")

    def __init__(self, index: int, op: str, inputs: tuple[int, ...], attrs: dict, label: str):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.label = label

    def __repr__(self):
        return f"Node({self.label})"


def _need(cond: bool, node: Node, msg: str):
    if not cond:
        raise ShapeError(f"node {node.label}: {msg}")


# -- forward rules ---------------------------------------------------------


def _fwd_matmul(node, a, b):
    _need(a.shape[1] == b.shape[0], node, f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _fwd_same(fn):
    def rule(node, a, b):
        _need(a.shape == b.shape, node, f"operand shapes differ: {a.shape} vs {b.shape}")
        return fn(a, b)

    return rule


def _fwd_scale(node, a, s):
    _need(s.shape == (1, 1), node, f"scale factor must be 1x1, got {s.shape}")
    return s[0, 0] * a


def _fwd_add_row(node, a, r):
    _need(r.shape == (1, a.shape[1]), node, f"row {r.shape} does not broadcast over {a.shape}")
    return a + r


def _fwd_div_rows(node, a, d):
    _need(d.shape == (a.shape[0], 1), node, f"divisor {d.shape} does not match rows of {a.shape}")
    return a / d


def _fwd_softmax(node, a):
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _fwd_l2(node, a):
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    return a / np.maximum(norms, node.attrs["eps"])


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "transpose": lambda node, a: np.ascontiguousarray(a.T),
    "add": _fwd_same(np.add),
    "sub": _fwd_same(np.subtract),
    "mul": _fwd_same(np.multiply),
    "scale": _fwd_scale,
    "add_row": _fwd_add_row,
    "add_const": lambda node, a: a + node.attrs["value"],
    "clamp_min": lambda node, a: np.maximum(a, node.attrs["floor"]),
    "div_rows": _fwd_div_rows,
    "sum": lambda node, a: np.array([[a.sum()]]),
    "row_sum": lambda node, a: a.sum(axis=1, keepdims=True),
    "col_sum": lambda node, a: a.sum(axis=0, keepdims=True),
    "append_ones": lambda node, a: np.hstack([a, np.ones((a.shape[0], 1))]),
    "row_softmax": _fwd_softmax,
    "l2_normalize_rows": _fwd_l2,
}


# -- backward rules: (node, g, out, *args) -> adjoint per input ------------


def _bwd_l2(node, g, y, a):
    eps = node.attrs["eps"]
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    active = norms > eps
    radial = (g * y).sum(axis=1, keepdims=True)
    return (np.where(active, (g - y * radial) / np.maximum(norms, eps), g / eps),)


_BACKWARD: dict[str, Callable] = {
    "matmul": lambda node, g, y, a, b: (g @ b.T, a.T @ g),
    "transpose": lambda node, g, y, a: (g.T,),
    "add": lambda node, g, y, a, b: (g, g),
    "sub": lambda node, g, y, a, b: (g, -g),
    "mul": lambda node, g, y, a, b: (g * b, g * a),
    "scale": lambda node, g, y, a, s: (s[0, 0] * g, np.array([[(g * a).sum()]])),
    "add_row": lambda node, g, y, a, r: (g, g.sum(axis=0, keepdims=True)),
    "add_const": lambda node, g, y, a: (g,),
    # strict inequality: the clamped branch (including the tie) has zero slope
    "clamp_min": lambda node, g, y, a: (g * (a > node.attrs["floor"]),),
    "div_rows": lambda node, g, y, a, d: (g / d, -(g * a).sum(axis=1, keepdims=True) / (d * d)),
    "sum": lambda node, g, y, a: (np.full(a.shape, g[0, 0]),),
    "row_sum": lambda node, g, y, a: (np.broadcast_to(g, a.shape).copy(),),
    "col_sum": lambda node, g, y, a: (np.broadcast_to(g, a.shape).copy(),),
    "append_ones": lambda node, g, y, a: (g[:, :-1].copy(),),
    "row_softmax": lambda node, g, y, a: (y * (g - (g * y).sum(axis=1, keepdims=True)),),
    "l2_normalize_rows": _bwd_l2,
}


class Tape:
    """Ordered list of primitive nodes; inputs are bound at evaluation time."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._input_names: dict[str, int] = {}
        self._values: list[np.ndarray] | None = None

    def _add(self, op: str, *inputs: Node, label: str | None = None, **attrs) -> Node:
        for node in inputs:
            if not isinstance(node, Node) or node.index >= len(self.nodes) or self.nodes[node.index] is not node:
                raise ParameterError(f"{op}: operand {node!r} does not belong to this tape")
        index = len(self.nodes)
        node = Node(index, op, tuple(n.index for n in inputs), attrs, label or f"{op}#{index}")
        self.nodes.append(node)
        self._values = None
        return node

    @property
    def input_names(self) -> list[str]:
        return list(self._input_names)

    def input(self, name: str) -> Node:
        if name in self._input_names:
            return self.nodes[self._input_names[name]]
        node = self._add("input", label=name, name=name)
        self._input_names[name] = node.index
        return node

    # primitives
    def matmul(self, a, b, label=None):
        return self._add("matmul", a, b, label=label)

    def transpose(self, a, label=None):
        return self._add("transpose", a, label=label)

    def add(self, a, b, label=None):
        return self._add("add", a, b, label=label)

    def sub(self, a, b, label=None):
        return self._add("sub", a, b, label=label)

    def mul(self, a, b, label=None):
        return self._add("mul", a, b, label=label)

    def scale(self, a, s, label=None):
        """Multiply ``a`` by the 1 x 1 node ``s``."""
        return self._add("scale", a, s, label=label)

    def add_row(self, a, r, label=None):
        return self._add("add_row", a, r, label=label)

    def add_const(self, a, value: float, label=None):
        return self._add("add_const", a, label=label, value=float(value))

    def clamp_min(self, a, floor: float, label=None):
        return self._add("clamp_min", a, label=label, floor=float(floor))

    def div_rows(self, a, d, label=None):
        """Divide each row of ``a`` by the matching entry of column ``d``."""
        return self._add("div_rows", a, d, label=label)

    def sum(self, a, label=None):
        return self._add("sum", a, label=label)

    def row_sum(self, a, label=None):
        return self._add("row_sum", a, label=label)

    def col_sum(self, a, label=None):
        return self._add("col_sum", a, label=label)

    def append_ones(self, a, label=None):
        return self._add("append_ones", a, label=label)

    def row_softmax(self, a, label=None):
        return self._add("row_softmax", a, label=label)

    def l2_normalize_rows(self, a, eps: float = DEFAULT_EPS, label=None):
        return self._add("l2_normalize_rows", a, label=label, eps=float(eps))

    # composites
    def softmax_attention(self, q, k, v):
        scores = self.matmul(q, self.transpose(k), label="softmax.scores")
        return self.matmul(self.row_softmax(scores), v, label="softmax.out")

    def linear_attention(self, q, k, v, eps: float = DEFAULT_EPS):
        """LAM via the feature map ``phi(x) = [x / ||x||, 1]``.

        ``phi(q)^T phi(k) = 1 + cos(q, k)``, so the numerator
        ``phi(Q) (phi(K)^T V)`` already contains the plain value sum and the
        denominator ``phi(Q) phi(K)^T 1`` contains ``n``.
        """
        phi_q = self.append_ones(self.l2_normalize_rows(q, eps, label="lam.q_hat"))
        phi_k = self.append_ones(self.l2_normalize_rows(k, eps, label="lam.k_hat"))
        kv = self.matmul(self.transpose(phi_k), v, label="lam.kT_v")
        k_sum = self.transpose(self.col_sum(phi_k), label="lam.k_sum")
        num = self.matmul(phi_q, kv, label="lam.numerator")
        den = self.clamp_min(self.matmul(phi_q, k_sum), eps, label="lam.denominator")
        return self.div_rows(num, den, label="lam.out")

    def channel_attention(self, x):
        gram = self.matmul(self.transpose(x), x, label="channel.gram")
        a = self.row_softmax(gram, label="channel.map")
        return self.matmul(x, self.transpose(a), label="channel.out")

    def attention_block(self, x, w_q, w_k, w_v, gamma_p, gamma_c, eps: float = DEFAULT_EPS):
        q = self.matmul(x, w_q, label="block.q")
        k = self.matmul(x, w_k, label="block.k")
        v = self.matmul(x, w_v, label="block.v")
        positional = self.scale(self.linear_attention(q, k, v, eps), gamma_p)
        channel = self.scale(self.channel_attention(x), gamma_c)
        return self.add(self.add(x, positional), channel, label="block.out")

    # evaluation
    def forward(self, inputs: Mapping[str, np.ndarray]) -> float:
        if not self.nodes:
            raise StateError("tape is empty")
        missing = set(self._input_names) - set(inputs)
        if missing:
            raise ParameterError(f"missing inputs: {sorted(missing)}")
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "input":
                values.append(as_matrix(inputs[node.attrs["name"]], node.label))
            else:
                values.append(_FORWARD[node.op](node, *(values[i] for i in node.inputs)))
        last = self.nodes[-1]
        _need(values[-1].shape == (1, 1), last, f"final node must be 1x1, got {values[-1].shape}")
        self._values = values
        return float(values[-1][0, 0])

    def backward(self) -> dict[str, np.ndarray]:
        if self._values is None:
            raise StateError("backward called before a successful forward")
        values = self._values
        adjoints: list[np.ndarray | None] = [None] * len(self.nodes)
        adjoints[-1] = np.ones((1, 1))
        for node in reversed(self.nodes):
            g = adjoints[node.index]
            if g is None or node.op == "input":
                continue
            args = [values[i] for i in node.inputs]
            for i, gi in zip(node.inputs, _BACKWARD[node.op](node, g, values[node.index], *args)):
                adjoints[i] = gi if adjoints[i] is None else adjoints[i] + gi
        return {
            name: adjoints[idx] if adjoints[idx] is not None else np.zeros_like(values[idx])
            for name, idx in self._input_names.items()
        }


def tape_eval(tape: Tape, inputs: Mapping[str, np.ndarray]) -> float:
    """Run the forward pass, cache every node value, return the scalar loss."""
    return tape.forward(inputs)


def tape_grad(tape: Tape) -> dict[str, np.ndarray]:
    """Adjoint of the loss with respect to every named input."""
    return tape.backward()


def finite_diff(f: Callable[[np.ndarray], float], x, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    The default step is ``1e-6 * (1 + |x_ij|)`` per entry.
    """
    x = as_matrix(x)
    if h is not None and not h > 0:
        raise ParameterError(f"step must be positive, got {h}")
    grad = np.empty_like(x)
    probe = x.copy()
    for idx in np.ndindex(x.shape):
        step = h if h is not None else 1e-6 * (1.0 + abs(x[idx]))
        probe[idx] = x[idx] + step
        up = f(probe)
        probe[idx] = x[idx] - step
        down = f(probe)
        probe[idx] = x[idx]
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max over entries of ``|a - n| / max(|a|, |n|, 1e-8)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / scale).max())


@dataclass
class GradReport:
    op: str
    errors: dict[str, float] = field(default_factory=dict)
    threshold: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    def __str__(self):
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        status = "pass" if self.passed else "FAIL"
        return f"{self.op}: max rel err {self.max_error:.3e} [{status}] ({parts})"


GRADCHECK_OPS = ("softmax_attention", "linear_attention", "channel_attention", "attention_block")


def _rows_away_from_zero(rng: Rng, rows: int, cols: int, min_norm: float = 1e-3) -> np.ndarray:
    m = seeded_fill(rng, rows, cols)
    for i in range(rows):
        while np.linalg.norm(m[i]) < min_norm:
            m[i] = seeded_fill(rng, 1, cols)[0]
    return m


def build_gradcheck_tape(op_name: str) -> tuple[Tape, list[str]]:
    """Tape computing ``sum(probe * op(...))``; returns it with the names to check."""
    if op_name not in GRADCHECK_OPS:
        raise ParameterError(f"unknown op {op_name!r}; choose from {', '.join(GRADCHECK_OPS)}")
    tape = Tape()
    if op_name == "softmax_attention":
        names = ["Q", "K", "V"]
        out = tape.softmax_attention(*(tape.input(n) for n in names))
    elif op_name == "linear_attention":
        names = ["Q", "K", "V"]
        out = tape.linear_attention(*(tape.input(n) for n in names))
    elif op_name == "channel_attention":
        names = ["X"]
        out = tape.channel_attention(tape.input("X"))
    else:
        names = ["X", "W_q", "W_k", "W_v", "gamma_p", "gamma_c"]
        out = tape.attention_block(*(tape.input(n) for n in names))
    tape.sum(tape.mul(out, tape.input("probe")), label="loss")
    return tape, names


def gradcheck_inputs(op_name: str, dims: AttentionDims, seed: int, gammas: tuple[float, float] | None = None):
    """Seeded inputs for :func:`gradcheck`, kept clear of the eps guards."""
    rng = Rng(seed)
    n, c, dk, dv = dims.n, dims.c, dims.d_k, dims.d_v
    if op_name in ("softmax_attention", "linear_attention"):
        inputs = {
            "Q": _rows_away_from_zero(rng, n, dk),
            "K": _rows_away_from_zero(rng, n, dk),
            "V": seeded_fill(rng, n, dv),
        }
        out_shape = (n, dv)
    elif op_name == "channel_attention":
        inputs = {"X": seeded_fill(rng, n, c)}
        out_shape = (n, c)
    elif op_name == "attention_block":
        gp, gc = gammas if gammas is not None else tuple(rng.generator.uniform(0.5, 1.5, size=2))
        inputs = {
            "X": seeded_fill(rng, n, c),
            "W_q": seeded_fill(rng, c, dk),
            "W_k": seeded_fill(rng, c, dk),
            "W_v": seeded_fill(rng, c, c),
            "gamma_p": np.array([[gp]]),
            "gamma_c": np.array([[gc]]),
        }
        out_shape = (n, c)
    else:
        raise ParameterError(f"unknown op {op_name!r}; choose from {', '.join(GRADCHECK_OPS)}")
    inputs["probe"] = seeded_fill(rng, *out_shape, lo=0.5, hi=1.5)
    return inputs


def gradcheck(
    op_name: str,
    dims: AttentionDims,
    seed: int = 0,
    threshold: float = 1e-5,
    gammas: tuple[float, float] | None = None,
) -> GradReport:
    """Compare tape adjoints with central differences on a seeded instance.

    The loss is ``sum(probe * op(inputs))`` with a fixed random positive
    probe, so that no gradient entry vanishes by symmetry.
    """
    tape, names = build_gradcheck_tape(op_name)
    inputs = gradcheck_inputs(op_name, dims, seed, gammas)
    tape_eval(tape, inputs)
    analytic = tape_grad(tape)
    report = GradReport(op=op_name, threshold=threshold)
    for name in names:

        def f(x, name=name):
            return tape_eval(tape, {**inputs, name: x})

        report.errors[name] = relative_error(analytic[name], finite_diff(f, inputs[name]))
    return report


def lam_descent(
    dims: AttentionDims, seed: int = 0, steps: int = 50, rate: float = 0.05
) -> list[float]:
    """Plain gradient descent on ``||LAM(Q, K, V) - T||^2`` over Q, K and V.

    Returns the ``steps + 1`` losses seen, starting with the initial one.
    """
    if steps < 1 or not rate > 0:
        raise ParameterError(f"need steps >= 1 and rate > 0, got {steps}, {rate}")
    rng = Rng(seed)
    values = {
        "Q": _rows_away_from_zero(rng, dims.n, dims.d_k),
        "K": _rows_away_from_zero(rng, dims.n, dims.d_k),
        "V": seeded_fill(rng, dims.n, dims.d_v),
        "T": seeded_fill(rng, dims.n, dims.d_v),
    }
    tape = Tape()
    out = tape.linear_attention(tape.input("Q"), tape.input("K"), tape.input("V"))
    resid = tape.sub(out, tape.input("T"))
    tape.sum(tape.mul(resid, resid), label="loss")
    losses = []
    for step in range(steps + 1):
        losses.append(tape_eval(tape, values))
        if step == steps:
            break
        grads = tape_grad(tape)
        for name in ("Q", "K", "V"):
            values[name] = values[name] - rate * grads[name]
    return losses
