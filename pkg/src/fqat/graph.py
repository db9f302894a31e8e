"""Minimal reverse-mode autodiff over small dense networks.

A Graph is an ordered list of primitive nodes (matmul, bias add, relu,
softmax cross-entropy, elementwise add, constant scale, fake-quantize);
construction order is topological order.  Forward caches every activation,
backward walks the list in reverse.  Everything is float64 and
single-threaded; independent Graph instances share no state.
"""

from __future__ import annotations

import numpy as np

from .quantizer import ScaleFactor, scale_grad, ste_input_grad, fake_quantize


class GraphError(Exception):
    """Structural or usage error; the message names the offending node."""


class Parameter:
    """A trainable tensor with a gradient accumulator of the same shape."""

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(self.value)):
            raise GraphError(f"parameter {name!r} has non-finite values")
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable


class Node:
    def __init__(self, name: str, inputs: tuple["Node", ...] = ()):
        self.name = name
        self.inputs = inputs

    def compute(self, vals: dict, graph: "Graph") -> np.ndarray:
        raise NotImplementedError

    def backprop(self, vals: dict, grads: dict, graph: "Graph") -> None:
        raise NotImplementedError

    def _in(self, vals: dict, i: int) -> np.ndarray:
        return vals[self.inputs[i]]

    @staticmethod
    def _acc(grads: dict, node: "Node", g: np.ndarray) -> None:
        if node in grads:
            grads[node] = grads[node] + g
        else:
            grads[node] = g


class InputNode(Node):
    def __init__(self, name: str, dim: int):
        super().__init__(name)
        self.dim = dim

    def compute(self, vals, graph):
        raise GraphError(f"input node {self.name!r} was not fed")

    def backprop(self, vals, grads, graph):
        pass  # gradients w.r.t. data are discarded


class ConstNode(Node):
    def __init__(self, name: str, value: np.ndarray):
        super().__init__(name)
        self.value = np.array(value, dtype=np.float64)

    def compute(self, vals, graph):
        return self.value

    def backprop(self, vals, grads, graph):
        pass


class ParamNode(Node):
    def __init__(self, param: Parameter):
        super().__init__(param.name)
        self.param = param

    def compute(self, vals, graph):
        return self.param.value

    def backprop(self, vals, grads, graph):
        if self.param.trainable and self in grads:
            self.param.grad += grads[self]


class MatMulNode(Node):
    def __init__(self, name: str, a: Node, b: Node):
        super().__init__(name, (a, b))

    def compute(self, vals, graph):
        a, b = self._in(vals, 0), self._in(vals, 1)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise GraphError(
                f"matmul node {self.name!r}: incompatible shapes {a.shape} x {b.shape}"
            )
        return a @ b

    def backprop(self, vals, grads, graph):
        g = grads[self]
        a, b = self._in(vals, 0), self._in(vals, 1)
        self._acc(grads, self.inputs[0], g @ b.T)
        self._acc(grads, self.inputs[1], a.T @ g)


class BiasAddNode(Node):
    """Adds a length-H bias vector to every row of a (B, H) activation."""

    def __init__(self, name: str, x: Node, b: Node):
        super().__init__(name, (x, b))

    def compute(self, vals, graph):
        x, b = self._in(vals, 0), self._in(vals, 1)
        if x.ndim != 2 or b.shape != (x.shape[1],):
            raise GraphError(
                f"bias node {self.name!r}: bias {b.shape} does not fit input {x.shape}"
            )
        return x + b

    def backprop(self, vals, grads, graph):
        g = grads[self]
        self._acc(grads, self.inputs[0], g)
        self._acc(grads, self.inputs[1], g.sum(axis=0))


class ReluNode(Node):
    def __init__(self, name: str, x: Node):
        super().__init__(name, (x,))

    def compute(self, vals, graph):
        return np.maximum(self._in(vals, 0), 0.0)

    def backprop(self, vals, grads, graph):
        x = self._in(vals, 0)
        self._acc(grads, self.inputs[0], grads[self] * (x > 0.0))


class AddNode(Node):
    """Elementwise add of two same-shape values."""

    def __init__(self, name: str, a: Node, b: Node):
        super().__init__(name, (a, b))

    def compute(self, vals, graph):
        a, b = self._in(vals, 0), self._in(vals, 1)
        if a.shape != b.shape:
            raise GraphError(
                f"add node {self.name!r}: shape mismatch {a.shape} vs {b.shape}"
            )
        return a + b

    def backprop(self, vals, grads, graph):
        g = grads[self]
        self._acc(grads, self.inputs[0], g)
        self._acc(grads, self.inputs[1], g)


class ScaleNode(Node):
    """Multiply by a fixed python float."""

    def __init__(self, name: str, x: Node, c: float):
        super().__init__(name, (x,))
        self.c = float(c)

    def compute(self, vals, graph):
        return self.c * self._in(vals, 0)

    def backprop(self, vals, grads, graph):
        self._acc(grads, self.inputs[0], self.c * grads[self])


class FakeQuantNode(Node):
    """Fake-quantize hook: STE input gradient, LSQ scale gradient."""

    def __init__(self, name: str, x: Node, sf: ScaleFactor, lsq_norm: bool = False):
        super().__init__(name, (x,))
        self.sf = sf
        self.lsq_norm = lsq_norm

    def compute(self, vals, graph):
        try:
            return fake_quantize(self._in(vals, 0), self.sf)
        except ValueError as e:
            raise GraphError(f"fake-quantize node {self.name!r}: {e}") from e

    def backprop(self, vals, grads, graph):
        g = grads[self]
        v = self._in(vals, 0)
        self._acc(grads, self.inputs[0], ste_input_grad(g, v, self.sf))
        graph.scale_grads[self.sf.id] += scale_grad(g, v, self.sf, self.lsq_norm)


class SoftmaxXEntNode(Node):
    """Mean softmax cross-entropy over the batch; labels fed at forward time."""

    def __init__(self, name: str, logits: Node):
        super().__init__(name, (logits,))

    def _probs(self, logits: np.ndarray) -> np.ndarray:
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def compute(self, vals, graph):
        logits = self._in(vals, 0)
        y = graph._labels
        if y is None:
            raise GraphError(f"loss node {self.name!r}: no labels fed")
        if logits.ndim != 2 or y.shape != (logits.shape[0],):
            raise GraphError(
                f"loss node {self.name!r}: logits {logits.shape} vs labels {y.shape}"
            )
        if y.size and (y.min() < 0 or y.max() >= logits.shape[1]):
            raise GraphError(
                f"loss node {self.name!r}: labels must lie in [0, {logits.shape[1]})"
            )
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return np.array(-np.mean(logp[np.arange(len(y)), y]))

    def backprop(self, vals, grads, graph):
        logits = self._in(vals, 0)
        y = graph._labels
        p = self._probs(logits)
        p[np.arange(len(y)), y] -= 1.0
        self._acc(grads, self.inputs[0], grads[self] * p / len(y))


class Graph:
    """Ordered node list with one designated scalar output node."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: Node | None = None
        self.parameters: list[Parameter] = []
        self.scale_factors: list[ScaleFactor] = []
        self.scale_grads: dict[str, float] = {}
        self._labels: np.ndarray | None = None
        self._vals: dict | None = None

    def add(self, node: Node) -> Node:
        self.nodes.append(node)
        if isinstance(node, ParamNode):
            self.parameters.append(node.param)
        if isinstance(node, FakeQuantNode):
            self.scale_factors.append(node.sf)
            self.scale_grads.setdefault(node.sf.id, 0.0)
        return node

    def set_output(self, node: Node) -> None:
        self.output = node

    def run(self, target: Node, feeds: dict | None = None,
            labels: np.ndarray | None = None) -> np.ndarray:
        """Evaluate up to `target`, caching every computed activation."""
        self._labels = None if labels is None else np.asarray(labels)
        vals: dict = {}
        for node, x in (feeds or {}).items():
            x = np.asarray(x, dtype=np.float64)
            if not np.all(np.isfinite(x)):
                raise GraphError(f"input node {node.name!r} fed non-finite values")
            vals[node] = x
        for node in self.nodes:
            if node in vals:
                continue
            vals[node] = node.compute(vals, self)
            if node is target:
                break
        self._vals = vals
        return vals[target]

    def run_backward(self) -> None:
        if self._vals is None or self.output is None or self.output not in self._vals:
            raise GraphError("backward requires a completed forward pass")
        for p in self.parameters:
            p.grad[...] = 0.0
        for sid in self.scale_grads:
            self.scale_grads[sid] = 0.0
        grads: dict = {self.output: np.array(1.0)}
        for node in reversed(self.nodes):
            if node in grads and node in self._vals:
                node.backprop(self._vals, grads, self)
        self._vals = None  # a second backward needs a fresh forward


def forward(graph: Graph, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy of the batch through the graph.

    The graph's output must be a softmax cross-entropy node; activations are
    cached for the following backward call.
    """
    if not isinstance(graph.output, SoftmaxXEntNode):
        raise GraphError("forward requires a softmax cross-entropy output node")
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise GraphError(f"input batch must be non-empty 2-D, got shape {inputs.shape}")
    input_nodes = [n for n in graph.nodes if isinstance(n, InputNode)]
    if len(input_nodes) != 1:
        raise GraphError("forward expects exactly one input node")
    inp = input_nodes[0]
    if inputs.shape[1] != inp.dim:
        raise GraphError(
            f"input node {inp.name!r} expects dim {inp.dim}, got {inputs.shape[1]}"
        )
    if labels.shape != (inputs.shape[0],):
        raise GraphError(f"labels shape {labels.shape} does not match batch")
    loss = graph.run(graph.output, feeds={inp: inputs}, labels=labels.astype(np.int64))
    return float(loss)


def backward(graph: Graph) -> None:
    """Populate every trainable Parameter.grad and per-scale gradients."""
    graph.run_backward()
