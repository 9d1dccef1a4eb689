"""Minimal symbolic reverse-mode differentiation over 2-D float64 arrays.

A :class:`Graph` is built once from named inputs and primitive ops. Gradients
are themselves expressed as new graph nodes, so differentiating a gradient
(double backward, needed by the gradient penalty) is just another call to
:func:`gradients`. Evaluation walks a cached topological program and keeps all
intermediate values local to the call, which makes a finished graph safe to
evaluate from several threads.

Every value is a 2-D ``numpy.ndarray`` of dtype float64. Scalars are ``(1, 1)``.
The only implicit broadcasting is the bias add (``(b, c) + (1, c)``); every
other broadcast is an explicit op (``bcast_rows``, ``bcast_cols``, ``fill``).

Relu and leaky-relu use the slope of the positive branch exactly at 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError

Tensor = np.ndarray

ROW_NORM_EPS = 1e-12


def as_tensor(value, name: str = "value") -> Tensor:
    """Coerce ``value`` into a 2-D float64 array (scalars become ``(1, 1)``)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ConfigError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    return arr


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "attrs", "name")

    def __init__(self, graph: "Graph", id: int, op: str, inputs: tuple, attrs: dict, name: Optional[str]):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.name = name

    def label(self) -> str:
        return self.name or f"{self.op}#{self.id}"

    def __repr__(self) -> str:
        args = ", ".join(n.label() for n in self.inputs)
        return f"Node({self.label()} = {self.op}({args}))"

    # operator sugar; scalars are folded into an affine node
    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return sub(self, other)
        return affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return div(self, other)
        return affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Graph:
    """Append-only container of nodes; node ids double as topological order."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.inputs: Dict[str, Node] = {}
        self._programs: Dict[tuple, "_Program"] = {}

    def input(self, name: str) -> Node:
        if name in self.inputs:
            raise ConfigError(f"duplicate graph input {name!r}")
        node = self._add("input", (), {}, name)
        self.inputs[name] = node
        return node

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._add("const", (), {"value": as_tensor(value, "constant")}, name)

    def _add(self, op: str, inputs: tuple, attrs: dict, name: Optional[str] = None) -> Node:
        for n in inputs:
            if n.graph is not self:
                raise ContractError(f"{op}: input {n.label()} belongs to another graph")
        node = Node(self, len(self.nodes), op, inputs, attrs, name)
        self.nodes.append(node)
        return node

    def __len__(self) -> int:
        return len(self.nodes)


# --------------------------------------------------------------------------
# op table

@dataclass(frozen=True)
class OpDef:
    forward: Callable
    # backward(node, upstream) -> per-input adjoint nodes (None = no contribution);
    # a missing backward marks the op as non-differentiable.
    backward: Optional[Callable] = None


OPS: Dict[str, OpDef] = {}


def _register(name, forward, backward=None):
    OPS[name] = OpDef(forward, backward)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ConfigError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _f_matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return a @ b


def _f_add(a, b):
    _same_shape("add", a, b)
    return a + b


def _f_sub(a, b):
    _same_shape("sub", a, b)
    return a - b


def _f_mul(a, b):
    _same_shape("mul", a, b)
    return a * b


def _f_div(a, b):
    _same_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        return a / b


def _f_add_bias(a, bias):
    if bias.shape != (1, a.shape[1]):
        raise ConfigError(f"add_bias: bias shape {bias.shape} does not fit {a.shape}")
    return a + bias


def _f_bcast_rows(v, like):
    if v.shape != (1, like.shape[1]):
        raise ConfigError(f"bcast_rows: {v.shape} cannot fill {like.shape}")
    return np.broadcast_to(v, like.shape)


def _f_bcast_cols(v, like):
    if v.shape != (like.shape[0], 1):
        raise ConfigError(f"bcast_cols: {v.shape} cannot fill {like.shape}")
    return np.broadcast_to(v, like.shape)


def _f_fill(s, like):
    if s.shape != (1, 1):
        raise ConfigError(f"fill: expected a (1, 1) value, got {s.shape}")
    return np.full(like.shape, s[0, 0])


def _f_fill_mean(s, like):
    if s.shape != (1, 1):
        raise ConfigError(f"fill_mean: expected a (1, 1) value, got {s.shape}")
    return np.full(like.shape, s[0, 0] / like.size)


def _f_argmin_mask(a):
    out = np.zeros_like(a)
    out.flat[np.argmin(a)] = 1.0
    return out


def _f_leaky_relu(a, slope):
    # valid for 0 <= slope <= 1
    return np.maximum(a, slope * a)


def _f_row_norm(a, eps):
    return np.sqrt(np.sum(a * a, axis=1, keepdims=True) + eps)


def _f_softplus(a):
    return np.logaddexp(0.0, a)


def _f_sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


_register("matmul", _f_matmul, lambda n, g: (g @ n.inputs[1].T, n.inputs[0].T @ g))
_register("transpose", lambda a: a.T, lambda n, g: (transpose(g),))
_register("add", _f_add, lambda n, g: (g, g))
_register("sub", _f_sub, lambda n, g: (g, -g))
_register("mul", _f_mul, lambda n, g: (g * n.inputs[1], g * n.inputs[0]))
_register("div", _f_div, lambda n, g: (g / n.inputs[1], -(g * n / n.inputs[1])))
_register(
    "affine",
    lambda a, scale, shift: a * scale + shift,
    lambda n, g: (affine(g, n.attrs["scale"], 0.0),),
)
_register("add_bias", _f_add_bias, lambda n, g: (g, sum_rows(g)))
_register("sum_rows", lambda a: a.sum(axis=0, keepdims=True), lambda n, g: (bcast_rows(g, n.inputs[0]),))
_register("bcast_rows", _f_bcast_rows, lambda n, g: (sum_rows(g), None))
_register("sum_cols", lambda a: a.sum(axis=1, keepdims=True), lambda n, g: (bcast_cols(g, n.inputs[0]),))
_register("bcast_cols", _f_bcast_cols, lambda n, g: (sum_cols(g), None))
_register("sum", lambda a: np.array([[a.sum()]]), lambda n, g: (fill(g, n.inputs[0]),))
_register("mean", lambda a: np.array([[a.mean()]]), lambda n, g: (fill_mean(g, n.inputs[0]),))
_register("fill", _f_fill, lambda n, g: (sum_(g), None))
_register("fill_mean", _f_fill_mean, lambda n, g: (mean(g), None))
_register("relu", lambda a: np.maximum(a, 0.0), lambda n, g: (g * relu_mask(n.inputs[0]),))
_register(
    "leaky_relu",
    _f_leaky_relu,
    lambda n, g: (g * leaky_relu_mask(n.inputs[0], n.attrs["slope"]),),
)
_register("tanh", np.tanh, lambda n, g: (g * affine(square(n), -1.0, 1.0),))
_register("sigmoid", _f_sigmoid, lambda n, g: (g * (n * affine(n, -1.0, 1.0)),))
_register("softplus", _f_softplus, lambda n, g: (g * sigmoid(n.inputs[0]),))
_register("square", lambda a: a * a, lambda n, g: (g * affine(n.inputs[0], 2.0, 0.0),))
_register(
    "row_norm",
    _f_row_norm,
    lambda n, g: (n.inputs[0] * bcast_cols(g / n, n.inputs[0]),),
)
_register("min", lambda a: np.array([[a.min()]]), lambda n, g: (fill(g, n.inputs[0]) * argmin_mask(n.inputs[0]),))

# piecewise-constant ops: zero derivative wherever defined
_zero = lambda n, g: tuple(None for _ in n.inputs)  # noqa: E731
_register("relu_mask", lambda a: (a >= 0.0).astype(np.float64), _zero)
_register("leaky_relu_mask", lambda a, slope: (a >= 0.0) * (1.0 - slope) + slope, _zero)
_register("argmin_mask", _f_argmin_mask, _zero)
_register("stop_gradient", lambda a: a, _zero)

# comparisons are not differentiable at all; asking for a gradient is an error
_register("greater_equal", lambda a, b: (a >= b).astype(np.float64))


# --------------------------------------------------------------------------
# builders

def _graph_of(*nodes) -> Graph:
    for n in nodes:
        if isinstance(n, Node):
            return n.graph
    raise ContractError("op needs at least one graph node")


def _op(op, *inputs, **attrs) -> Node:
    g = _graph_of(*inputs)
    return g._add(op, tuple(inputs), attrs)


def matmul(a, b): return _op("matmul", a, b)
def transpose(a): return _op("transpose", a)
def add(a, b): return _op("add", a, b)
def sub(a, b): return _op("sub", a, b)
def mul(a, b): return _op("mul", a, b)
def div(a, b): return _op("div", a, b)
def affine(a, scale: float, shift: float): return _op("affine", a, scale=float(scale), shift=float(shift))
def add_bias(a, bias): return _op("add_bias", a, bias)
def sum_rows(a): return _op("sum_rows", a)
def bcast_rows(v, like): return _op("bcast_rows", v, like)
def sum_cols(a): return _op("sum_cols", a)
def bcast_cols(v, like): return _op("bcast_cols", v, like)
def sum_(a): return _op("sum", a)
def mean(a): return _op("mean", a)
def fill(s, like): return _op("fill", s, like)
def fill_mean(s, like): return _op("fill_mean", s, like)
def relu(a): return _op("relu", a)
def leaky_relu(a, slope: float = 0.2): return _op("leaky_relu", a, slope=float(slope))
def tanh(a): return _op("tanh", a)
def sigmoid(a): return _op("sigmoid", a)
def softplus(a): return _op("softplus", a)
def square(a): return _op("square", a)
def row_norm(a, eps: float = ROW_NORM_EPS): return _op("row_norm", a, eps=float(eps))
def min_(a): return _op("min", a)
def relu_mask(a): return _op("relu_mask", a)
def leaky_relu_mask(a, slope: float): return _op("leaky_relu_mask", a, slope=float(slope))
def argmin_mask(a): return _op("argmin_mask", a)
def stop_gradient(a): return _op("stop_gradient", a)
def greater_equal(a, b): return _op("greater_equal", a, b)


maximum0 = relu


# --------------------------------------------------------------------------
# evaluation

class _Program:
    __slots__ = ("steps", "input_slots", "size")

    def __init__(self, graph: Graph, outputs: Sequence[Node]):
        needed = set()
        stack = [n.id for n in outputs]
        while stack:
            i = stack.pop()
            if i in needed:
                continue
            needed.add(i)
            stack.extend(p.id for p in graph.nodes[i].inputs)
        self.steps = []
        self.input_slots = []
        for i in sorted(needed):
            node = graph.nodes[i]
            if node.op == "input":
                self.input_slots.append((node.name, i))
            elif node.op == "const":
                self.steps.append((None, (), node.attrs, i))
            else:
                ids = tuple(p.id for p in node.inputs)
                self.steps.append((OPS[node.op].forward, ids, node.attrs, i))
        self.size = max(needed) + 1


def _program(graph: Graph, outputs: Sequence[Node]) -> _Program:
    key = tuple(n.id for n in outputs)
    prog = graph._programs.get(key)
    if prog is None:
        prog = _Program(graph, outputs)
        graph._programs[key] = prog
    return prog


def evaluate(graph: Graph, inputs: Mapping[str, Tensor], outputs: Sequence[Node]) -> List[Tensor]:
    """Forward values of ``outputs`` given bound ``inputs``.

    Raises ConfigError on unbound inputs or shape mismatches and NumericError,
    naming the first offending node, when an output is not finite.
    """
    prog = _program(graph, outputs)
    vals: List[Optional[Tensor]] = [None] * prog.size
    for name, i in prog.input_slots:
        if name not in inputs:
            raise ConfigError(f"graph input {name!r} is not bound")
        v = inputs[name]
        if not (isinstance(v, np.ndarray) and v.ndim == 2 and v.dtype == np.float64):
            v = as_tensor(v, name)
        vals[i] = v
    for fn, ids, attrs, i in prog.steps:
        if fn is None:
            vals[i] = attrs["value"]
            continue
        try:
            vals[i] = fn(*[vals[j] for j in ids], **attrs)
        except ConfigError as exc:
            raise ConfigError(f"node {graph.nodes[i].label()}: {exc}") from None
    result = [vals[n.id] for n in outputs]
    for out in result:
        if not np.all(np.isfinite(out)):
            _raise_non_finite(graph, prog, vals)
    return result


def _raise_non_finite(graph, prog, vals):
    for name, i in prog.input_slots:
        if not np.all(np.isfinite(vals[i])):
            raise NumericError(f"non-finite value in graph input {name!r}")
    for _, _, _, i in prog.steps:
        if not np.all(np.isfinite(vals[i])):
            raise NumericError(f"non-finite value produced by node {graph.nodes[i]!r}")
    raise NumericError("non-finite graph output")  # pragma: no cover


def eval_node(graph: Graph, inputs: Mapping[str, Tensor], output: Node) -> Tensor:
    return evaluate(graph, inputs, [output])[0]


# --------------------------------------------------------------------------
# differentiation

def gradients(output: Node, wrt: Sequence[Node], grad_output: Optional[Node] = None) -> List[Node]:
    """Symbolic gradients of ``output`` with respect to each node in ``wrt``.

    ``output`` should evaluate to a (1, 1) scalar unless ``grad_output`` is
    given. The returned nodes live in the same graph and can be differentiated
    again. Nodes in ``wrt`` that ``output`` does not depend on get a zero node.
    """
    graph = output.graph
    wrt_ids = {n.id for n in wrt}
    # forward reachability from wrt, restricted to ancestors of output
    ancestors = set()
    stack = [output.id]
    while stack:
        i = stack.pop()
        if i in ancestors:
            continue
        ancestors.add(i)
        stack.extend(p.id for p in graph.nodes[i].inputs)
    live = set()
    for i in sorted(ancestors):
        node = graph.nodes[i]
        if i in wrt_ids or any(p.id in live for p in node.inputs):
            live.add(i)

    if grad_output is None:
        grad_output = fill(graph.constant(1.0), output)
    adjoint: Dict[int, Node] = {output.id: grad_output}
    for i in sorted(live, reverse=True):
        node = graph.nodes[i]
        g = adjoint.get(i)
        if g is None or not node.inputs:
            continue
        if not any(p.id in live for p in node.inputs):
            continue
        rule = OPS[node.op].backward
        if rule is None:
            raise ContractError(f"op {node.op!r} (node {node.label()}) has no gradient")
        for parent, pg in zip(node.inputs, rule(node, g)):
            if pg is None or parent.id not in live:
                continue
            prev = adjoint.get(parent.id)
            adjoint[parent.id] = pg if prev is None else add(prev, pg)
    out = []
    for n in wrt:
        g = adjoint.get(n.id)
        if g is None:
            g = fill(graph.constant(0.0), n)
        out.append(g)
    return out


def _check_scalar(graph, inputs, output):
    value = eval_node(graph, inputs, output)
    if value.shape != (1, 1):
        raise ContractError(f"gradient requires a scalar output, {output.label()} has shape {value.shape}")


def grad(graph: Graph, inputs: Mapping[str, Tensor], output: Node, wrt: Sequence[Node]) -> List[Tensor]:
    """Numeric reverse-mode gradients of a scalar ``output``."""
    _check_scalar(graph, inputs, output)
    return evaluate(graph, inputs, gradients(output, wrt))


def grad_of_grad(graph: Graph, inputs: Mapping[str, Tensor], output: Node, wrt: Sequence[Node]) -> List[Tensor]:
    """Gradients of a scalar that was itself built from :func:`gradients` nodes.

    Identical to :func:`grad`; it exists so call sites can state the intent.
    """
    return grad(graph, inputs, output, wrt)
