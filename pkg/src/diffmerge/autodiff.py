"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Graph` is a tape of :class:`Node` records.  Operations compute
their value eagerly with numpy and register a node together with the
vector-Jacobian product needed by :meth:`Graph.backward`.  The op set is
deliberately small: exactly what an MLP noise predictor needs (matmul,
add, sub, mul, scale, silu, mse, sumall, concat).  Broadcasting is limited
to exact shape match or a single-element scalar operand.

A graph is confined to one thread; node values and gradients are plain
``np.ndarray`` and may be shared freely once backward() has run.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

Array = np.ndarray


def as_tensor(x) -> Array:
    """Coerce to a C-contiguous float64 array (the carrier for all model math)."""
    return np.ascontiguousarray(x, dtype=np.float64)


def sigmoid(x: Array) -> Array:
    """Numerically stable logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Node:
    """One tape record: operation kind, input node ids, cached output value.

    After ``Graph.backward`` the ``grad`` slot holds d(loss)/d(value) with
    the same shape as ``value`` (zeros for nodes the loss does not reach).
    """

    __slots__ = ("graph", "id", "op", "inputs", "value", "grad", "_vjp")

    def __init__(self, graph: "Graph", nid: int, op: str, inputs: tuple, value: Array, vjp):
        self.graph = graph
        self.id = nid
        self.op = op
        self.inputs = inputs  # tuple of parent Nodes; ids are inputs[k].id
        self.value = value
        self.grad: Array | None = None
        self._vjp: Callable[[Array], Sequence[Array]] | None = vjp

    # Operator sugar; all dispatch through the owning graph.
    def __add__(self, other: "Node") -> "Node":
        return self.graph.add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return self.graph.sub(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return self.graph.mul(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return self.graph.matmul(self, other)

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


def _broadcast_pair(a: Array, b: Array, op: str) -> None:
    """Allow exact shape match or a single-element operand; else raise."""
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: Array, shape: tuple) -> Array:
    """Sum a gradient down to a broadcast (single-element) operand's shape."""
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum())


class Graph:
    """Computation tape.  Node ids are topologically ordered by construction."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    # ------------------------------------------------------------------
    # node registration
    # ------------------------------------------------------------------
    def _register(self, op: str, inputs: tuple, value: Array, vjp=None) -> Node:
        node = Node(self, len(self.nodes), op, inputs, value, vjp)
        self.nodes.append(node)
        return node

    def leaf(self, array, name: str | None = None) -> Node:
        """Add a leaf holding ``array``.

        Named leaves are parameters whose gradients can be collected with
        :meth:`parameter_grads`; unnamed leaves are constant inputs.
        """
        node = self._register("leaf", (), as_tensor(array))
        if name is not None:
            if name in self._params:
                raise ContractError(f"duplicate parameter leaf {name!r}")
            self._params[name] = node
        return node

    # ------------------------------------------------------------------
    # operations
    # ------------------------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise DimensionError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

        def vjp(g):
            return g @ bv.T, av.T @ g

        return self._register("matmul", (a, b), av @ bv, vjp)

    def add(self, a: Node, b: Node) -> Node:
        _broadcast_pair(a.value, b.value, "add")
        ash, bsh = a.value.shape, b.value.shape

        def vjp(g):
            return _reduce_to(g, ash), _reduce_to(g, bsh)

        return self._register("add", (a, b), a.value + b.value, vjp)

    def sub(self, a: Node, b: Node) -> Node:
        _broadcast_pair(a.value, b.value, "sub")
        ash, bsh = a.value.shape, b.value.shape

        def vjp(g):
            return _reduce_to(g, ash), _reduce_to(-g, bsh)

        return self._register("sub", (a, b), a.value - b.value, vjp)

    def mul(self, a: Node, b: Node) -> Node:
        _broadcast_pair(a.value, b.value, "mul")
        av, bv = a.value, b.value

        def vjp(g):
            return _reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)

        return self._register("mul", (a, b), av * bv, vjp)

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)

        def vjp(g):
            return (g * c,)

        return self._register("scale", (a,), a.value * c, vjp)

    def silu(self, a: Node) -> Node:
        s = sigmoid(a.value)
        out = a.value * s

        def vjp(g):
            return (g * (s + out * (1.0 - s)),)

        return self._register("silu", (a,), out, vjp)

    def mse(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise DimensionError(f"mse: incompatible shapes {a.value.shape} and {b.value.shape}")
        diff = a.value - b.value
        n = diff.size

        def vjp(g):
            d = (2.0 / n) * g * diff
            return d, -d

        return self._register("mse", (a, b), np.asarray(np.mean(diff * diff)), vjp)

    def sumall(self, a: Node) -> Node:
        shape = a.value.shape

        def vjp(g):
            return (np.full(shape, float(g)),)

        return self._register("sumall", (a,), np.asarray(a.value.sum()), vjp)

    def transpose(self, a: Node) -> Node:
        if a.value.ndim != 2:
            raise DimensionError(f"transpose: expected a matrix, got shape {a.value.shape}")

        def vjp(g):
            return (g.T,)

        return self._register("transpose", (a,), a.value.T.copy(), vjp)

    def concat(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[0] != bv.shape[0]:
            raise DimensionError(f"concat: incompatible shapes {av.shape} and {bv.shape}")
        split = av.shape[1]

        def vjp(g):
            return g[:, :split], g[:, split:]

        return self._register("concat", (a, b), np.concatenate([av, bv], axis=1), vjp)

    # ------------------------------------------------------------------
    # backward pass
    # ------------------------------------------------------------------
    def backward(self, loss: Node) -> None:
        """Populate every node's gradient slot with d(loss)/d(node).

        The loss must be scalar.  Accumulation runs in reverse node-id
        order with a fixed child order, so two runs on the same graph are
        bitwise identical.  Nodes the loss does not reach receive zeros.
        """
        if loss.graph is not self:
            raise ContractError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.value.shape}")

        reachable = np.zeros(len(self.nodes), dtype=bool)
        reachable[loss.id] = True
        # Node ids are topologically ordered, so one reverse sweep marks
        # every ancestor of the loss.
        for nid in range(loss.id, -1, -1):
            if reachable[nid]:
                for parent in self.nodes[nid].inputs:
                    reachable[parent.id] = True

        for node in self.nodes:
            node.grad = np.zeros_like(node.value)
        loss.grad = np.ones_like(loss.value)

        for nid in range(loss.id, -1, -1):
            node = self.nodes[nid]
            if not reachable[nid] or node._vjp is None:
                continue
            contributions = node._vjp(node.grad)
            for parent, contrib in zip(node.inputs, contributions):
                parent.grad += contrib

    def parameter_grads(self) -> dict[str, Array]:
        """Gradients of all named leaves, keyed by name (after backward)."""
        out = {}
        for name, node in self._params.items():
            if node.grad is None:
                raise ContractError("parameter_grads called before backward")
            out[name] = node.grad
        return out

    @property
    def parameters(self) -> dict[str, Node]:
        return dict(self._params)


# Module-level aliases so expression-style code reads naturally.
def silu(a: Node) -> Node:
    return a.graph.silu(a)


def mse(a: Node, b: Node) -> Node:
    return a.graph.mse(a, b)


def sumall(a: Node) -> Node:
    return a.graph.sumall(a)


def concat(a: Node, b: Node) -> Node:
    return a.graph.concat(a, b)


def scale(a: Node, c: float) -> Node:
    return a.graph.scale(a, c)
