"""Small reverse-mode autodiff engine over dense float64 arrays.

A :class:`Graph` is a Wengert list built once and evaluated many times.
Every node value is a 2-D array ``(batch, width)``: the engine always works
on a batch of inputs, which is what makes ball sampling affordable.  A 1-D
input is treated as a batch of one and results are squeezed back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "softplus", "relu")
SMOOTH_ACTIVATIONS = ("tanh", "sigmoid", "softplus")


class ShapeError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


def as_tensor(values, name="input") -> np.ndarray:
    """Convert to a float64 array, rejecting NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act_forward(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def _act_backward(kind, z, y, dy):
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "softplus":
        return dy * _sigmoid(z)
    if kind == "relu":
        return dy * (z > 0)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    width: int
    params: dict = field(default_factory=dict)


class Graph:
    """Directed acyclic computation over a single input node (node 0).

    Builder methods append a node and return its id; the last node added is
    the output unless :meth:`set_output` says otherwise.
    """

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise ShapeError("input_dim must be >= 1")
        self.input_dim = int(input_dim)
        self.nodes: list[Node] = [Node("input", (), self.input_dim)]
        self.output: int = 0
        self.values: list[np.ndarray] | None = None

    # -- construction -------------------------------------------------

    def _append(self, node: Node) -> int:
        for i in node.inputs:
            if not 0 <= i < len(self.nodes):
                raise ShapeError(f"node {i} does not exist")
        self.nodes.append(node)
        self.output = len(self.nodes) - 1
        return self.output

    def width(self, node: int) -> int:
        return self.nodes[node].width

    def affine(self, src: int, weight, bias=None) -> int:
        weight = as_tensor(weight, "weight")
        if weight.ndim != 2 or weight.shape[1] != self.width(src):
            raise ShapeError(
                f"affine weight shape {weight.shape} does not accept width {self.width(src)}"
            )
        bias = np.zeros(weight.shape[0]) if bias is None else as_tensor(bias, "bias")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        return self._append(Node("affine", (src,), weight.shape[0], {"W": weight, "b": bias}))

    def matmul(self, src: int, matrix) -> int:
        """Right-multiply each row by ``matrix`` of shape (width, out)."""
        matrix = as_tensor(matrix, "matrix")
        if matrix.ndim != 2 or matrix.shape[0] != self.width(src):
            raise ShapeError(f"matmul shape {matrix.shape} does not accept width {self.width(src)}")
        return self._append(Node("matmul", (src,), matrix.shape[1], {"M": matrix}))

    def _binary(self, op, a, b):
        if self.width(a) != self.width(b):
            raise ShapeError(f"{op}: widths {self.width(a)} and {self.width(b)} differ")
        return self._append(Node(op, (a, b), self.width(a)))

    def add(self, a: int, b: int) -> int:
        return self._binary("add", a, b)

    def sub(self, a: int, b: int) -> int:
        return self._binary("sub", a, b)

    def mul(self, a: int, b: int) -> int:
        return self._binary("mul", a, b)

    def activation(self, src: int, kind: str) -> int:
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        return self._append(Node("act", (src,), self.width(src), {"kind": kind}))

    def index(self, src: int, i: int) -> int:
        if not 0 <= i < self.width(src):
            raise ShapeError(f"index {i} out of range for width {self.width(src)}")
        return self._append(Node("index", (src,), 1, {"i": int(i)}))

    def sum(self, src: int) -> int:
        return self._append(Node("sum", (src,), 1))

    def scale(self, src: int, c: float) -> int:
        return self._append(Node("scale", (src,), self.width(src), {"c": float(c)}))

    def shift(self, src: int, c) -> int:
        c = np.broadcast_to(as_tensor(c, "shift"), (self.width(src),)).copy()
        return self._append(Node("shift", (src,), self.width(src), {"c": c}))

    def set_output(self, node: int) -> None:
        if not 0 <= node < len(self.nodes):
            raise ShapeError(f"node {node} does not exist")
        self.output = node

    @property
    def output_width(self) -> int:
        return self.width(self.output)

    def activation_kinds(self) -> set[str]:
        return {n.params["kind"] for n in self.nodes if n.op == "act"}

    @property
    def twice_differentiable(self) -> bool:
        return "relu" not in self.activation_kinds()

    # -- evaluation -----------------------------------------------------

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"expected input shape ({self.input_dim},), got {x.shape}")
        return X, single

    def _run(self, X: np.ndarray) -> list[np.ndarray]:
        vals: list[np.ndarray] = [X]
        for node in self.nodes[1:]:
            a = vals[node.inputs[0]]
            op = node.op
            if op == "affine":
                v = a @ node.params["W"].T + node.params["b"]
            elif op == "matmul":
                v = a @ node.params["M"]
            elif op == "add":
                v = a + vals[node.inputs[1]]
            elif op == "sub":
                v = a - vals[node.inputs[1]]
            elif op == "mul":
                v = a * vals[node.inputs[1]]
            elif op == "act":
                v = _act_forward(node.params["kind"], a)
            elif op == "index":
                i = node.params["i"]
                v = a[:, i : i + 1]
            elif op == "sum":
                v = a.sum(axis=1, keepdims=True)
            elif op == "scale":
                v = a * node.params["c"]
            elif op == "shift":
                v = a + node.params["c"]
            else:  # pragma: no cover
                raise ValueError(f"unknown op {op}")
            vals.append(v)
        return vals

    def _backprop(self, vals: list[np.ndarray], seed: np.ndarray) -> np.ndarray:
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[self.output] = seed

        def acc(i, g):
            grads[i] = g if grads[i] is None else grads[i] + g

        for k in range(self.output, 0, -1):
            g = grads[k]
            if g is None:
                continue
            node = self.nodes[k]
            src = node.inputs[0]
            op = node.op
            if op == "affine":
                acc(src, g @ node.params["W"])
            elif op == "matmul":
                acc(src, g @ node.params["M"].T)
            elif op == "add":
                acc(src, g)
                acc(node.inputs[1], g)
            elif op == "sub":
                acc(src, g)
                acc(node.inputs[1], -g)
            elif op == "mul":
                other = node.inputs[1]
                acc(src, g * vals[other])
                acc(other, g * vals[src])
            elif op == "act":
                acc(src, _act_backward(node.params["kind"], vals[src], vals[k], g))
            elif op == "index":
                full = np.zeros_like(vals[src])
                full[:, node.params["i"]] = g[:, 0]
                acc(src, full)
            elif op == "sum":
                acc(src, np.broadcast_to(g, vals[src].shape))
            elif op == "scale":
                acc(src, g * node.params["c"])
            elif op == "shift":
                acc(src, g)
        g0 = grads[0]
        return np.zeros_like(vals[0]) if g0 is None else np.array(g0, dtype=np.float64)

    def forward(self, x) -> np.ndarray:
        """Evaluate the output node; intermediates are cached on ``self.values``."""
        X, single = self._batch(x)
        vals = self._run(X)
        self.values = vals
        out = vals[self.output]
        return out[0] if single else out

    def gradient(self, x, output_index: int | None = None) -> np.ndarray:
        """Gradient of one scalar output w.r.t. the input, per batch row.

        ``output_index`` selects a column of a vector output; it may be
        omitted only when the output is already scalar.
        """
        width = self.output_width
        if output_index is None:
            if width != 1:
                raise ShapeError(f"gradient needs a scalar output, got width {width}")
            output_index = 0
        if not 0 <= output_index < width:
            raise ShapeError(f"output_index {output_index} out of range for width {width}")
        seed = np.zeros(width)
        seed[output_index] = 1.0
        return self.vjp(x, seed)

    def vjp(self, x, cotangent) -> np.ndarray:
        """Gradient of ``cotangent . output`` w.r.t. the input.

        ``cotangent`` is ``(width,)`` (shared by all rows) or ``(n, width)``.
        """
        X, single = self._batch(x)
        vals = self._run(X)
        self.values = vals
        seed = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), (X.shape[0], self.output_width))
        g = self._backprop(vals, seed)
        return g[0] if single else g

    def hvp(self, x, v, step: float | None = None, output_index: int | None = None) -> np.ndarray:
        """Hessian-vector product by central differences of gradients.

        ``step`` defaults to ``1e-4 * (1 + ||x||_inf)`` per row.
        """
        X, single = self._batch(x)
        V = np.asarray(v, dtype=np.float64)
        if V.shape != np.shape(x):
            raise ShapeError(f"v shape {V.shape} != input shape {np.shape(x)}")
        V = V.reshape(X.shape)
        if step is None:
            h = 1e-4 * (1.0 + np.abs(X).max(axis=1, keepdims=True))
        else:
            if step <= 0:
                raise ValueError("step must be positive")
            h = np.full((X.shape[0], 1), float(step))
        both = np.concatenate([X + h * V, X - h * V])
        g = self.gradient(both, output_index)
        n = X.shape[0]
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient inside Hessian-vector product")
        hv = (g[:n] - g[n:]) / (2.0 * h)
        return hv[0] if single else hv


def forward(graph: Graph, x) -> np.ndarray:
    return graph.forward(x)


def gradient(graph: Graph, x, output_index: int | None = None) -> np.ndarray:
    return graph.gradient(x, output_index)


def hvp(graph: Graph, x, v, step: float | None = None) -> np.ndarray:
    return graph.hvp(x, v, step)
