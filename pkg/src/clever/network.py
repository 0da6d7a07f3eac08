"""Classifier models, their JSON schema, and the targeted margin function."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ACTIVATIONS, Graph, ShapeError, as_tensor


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Affine:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Activation:
    kind: str


@dataclass
class Model:
    """K-class classifier producing logits; never applies a softmax."""

    input_dim: int
    num_classes: int
    layers: list
    name: str = "model"
    input_range: tuple[float, float] = (0.0, 1.0)
    _graph: Graph | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ModelError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ModelError("num_classes must be >= 2")
        lo, hi = self.input_range
        if not hi > lo:
            raise ModelError(f"input_range {self.input_range} must have hi > lo")
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Affine):
                if layer.in_dim != width:
                    raise ModelError(
                        f"layer {i}: affine expects {layer.in_dim} inputs but receives {width}"
                    )
                if layer.bias.shape != (layer.out_dim,):
                    raise ModelError(f"layer {i}: bias length {layer.bias.shape[0]} != {layer.out_dim}")
                if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                    raise ModelError(f"layer {i}: non-finite weight")
                width = layer.out_dim
            elif isinstance(layer, Activation):
                if layer.kind not in ACTIVATIONS:
                    raise ModelError(f"layer {i}: unknown activation {layer.kind!r}")
            else:
                raise ModelError(f"layer {i}: unsupported layer {layer!r}")
        if width != self.num_classes:
            raise ModelError(f"final width {width} != num_classes {self.num_classes}")

    @property
    def graph(self) -> Graph:
        if self._graph is None:
            g = Graph(self.input_dim)
            node = 0
            for layer in self.layers:
                if isinstance(layer, Affine):
                    node = g.affine(node, layer.weight, layer.bias)
                else:
                    node = g.activation(node, layer.kind)
            g.set_output(node)
            self._graph = g
        return self._graph

    @property
    def twice_differentiable(self) -> bool:
        return all(l.kind != "relu" for l in self.layers if isinstance(l, Activation))


def model_from_dict(doc: dict) -> Model:
    try:
        input_dim = int(doc["input_dim"])
        num_classes = int(doc["num_classes"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"model document missing or malformed field: {exc}") from None
    layers = []
    for i, spec in enumerate(raw_layers):
        kind = spec.get("type")
        if kind == "affine":
            try:
                w = np.array(spec["weight"], dtype=np.float64)
                b = np.array(spec["bias"], dtype=np.float64)
            except (KeyError, ValueError) as exc:
                raise ModelError(f"layer {i}: malformed affine layer ({exc})") from None
            if w.ndim != 2 or b.ndim != 1:
                raise ModelError(f"layer {i}: weight must be 2-D and bias 1-D")
            layers.append(Affine(w, b))
        elif kind == "activation":
            layers.append(Activation(spec.get("kind")))
        else:
            raise ModelError(f"layer {i}: unknown layer type {kind!r}")
    lo, hi = doc.get("input_range", (0.0, 1.0))
    return Model(
        input_dim=input_dim,
        num_classes=num_classes,
        layers=layers,
        name=doc.get("name", "model"),
        input_range=(float(lo), float(hi)),
    )


def load_model(document) -> Model:
    """Parse a model from JSON text (or an already-decoded dict)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model document is not valid JSON: {exc}") from None
    return model_from_dict(document)


def model_to_dict(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        if isinstance(layer, Affine):
            layers.append(
                {"type": "affine", "weight": layer.weight.tolist(), "bias": layer.bias.tolist()}
            )
        else:
            layers.append({"type": "activation", "kind": layer.kind})
    return {
        "name": model.name,
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "input_range": list(model.input_range),
        "layers": layers,
    }


def save_model(model: Model) -> str:
    # json writes floats with repr(), which round-trips float64 exactly
    return json.dumps(model_to_dict(model))


def read_model(path) -> Model:
    with open(path) as fh:
        return load_model(fh.read())


def logits(model: Model, x) -> np.ndarray:
    return model.graph.forward(as_tensor(x))


def predict(model: Model, x) -> int:
    # argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(logits(model, x)))


class MarginFn:
    """g(x) = f_c(x) - f_t(x) on the logits of ``model``.

    ``value``, ``grad`` and ``hvp`` accept one input ``(d,)`` or a batch
    ``(n, d)``.
    """

    def __init__(self, model: Model, c: int, t: int):
        K = model.num_classes
        if not (0 <= c < K and 0 <= t < K):
            raise ValueError(f"classes must lie in [0, {K}), got c={c}, t={t}")
        if c == t:
            raise ValueError("true class and target class must differ")
        self.model = model
        self.c = int(c)
        self.t = int(t)
        g = Graph(model.input_dim)
        g.nodes = list(model.graph.nodes)
        out = model.graph.output
        g.sub(g.index(out, self.c), g.index(out, self.t))
        self.graph = g

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    @property
    def twice_differentiable(self) -> bool:
        return self.model.twice_differentiable

    def value(self, x):
        out = self.graph.forward(x)
        return float(out[0]) if np.ndim(x) == 1 else out[:, 0]

    def grad(self, x) -> np.ndarray:
        return self.graph.gradient(x)

    def hvp(self, x, v, step=None) -> np.ndarray:
        return self.graph.hvp(x, v, step)


class ScalarFunction:
    """Adapter giving any scalar-output :class:`Graph` the margin interface."""

    def __init__(self, graph: Graph):
        if graph.output_width != 1:
            raise ShapeError("ScalarFunction needs a graph with a scalar output")
        self.graph = graph

    @property
    def input_dim(self) -> int:
        return self.graph.input_dim

    @property
    def twice_differentiable(self) -> bool:
        return self.graph.twice_differentiable

    def value(self, x):
        out = self.graph.forward(x)
        return float(out[0]) if np.ndim(x) == 1 else out[:, 0]

    def grad(self, x) -> np.ndarray:
        return self.graph.gradient(x)

    def hvp(self, x, v, step=None) -> np.ndarray:
        return self.graph.hvp(x, v, step)


def margin(m: MarginFn, x) -> float:
    return m.value(as_tensor(x))


def margin_grad(m: MarginFn, x) -> np.ndarray:
    return m.grad(as_tensor(x))


def quadratic_margin(x0, gamma: float, direction, D) -> ScalarFunction:
    """g(x) = gamma + direction.(x - x0) + 0.5 (x - x0)^T D (x - x0) as a graph."""
    x0 = as_tensor(x0)
    direction = as_tensor(direction)
    D = as_tensor(D)
    if not np.allclose(D, D.T):
        raise ValueError("D must be symmetric")
    d = x0.shape[0]
    g = Graph(d)
    delta = g.shift(0, -x0)
    quad = g.scale(g.sum(g.mul(delta, g.matmul(delta, D))), 0.5)
    lin = g.matmul(delta, direction.reshape(d, 1))
    g.shift(g.add(quad, lin), [gamma])
    return ScalarFunction(g)

