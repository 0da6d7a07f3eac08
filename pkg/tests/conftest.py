import json
import math
from pathlib import Path

import numpy as np
import pytest

from clever.network import Activation, Affine, Model, read_model

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def mlp():
    return read_model(FIXTURES / "mlp_tanh.json")


@pytest.fixture(scope="session")
def blobs():
    return json.loads((FIXTURES / "blobs.json").read_text())["records"]


def linear_model(W, b=None, input_range=(0.0, 1.0)):
    W = np.asarray(W, dtype=np.float64)
    b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return Model(W.shape[1], W.shape[0], [Affine(W, b)], input_range=input_range)


def random_mlp(rng, dims, kind="tanh"):
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(Affine(rng.standard_normal((b, a)) / math.sqrt(a), 0.1 * rng.standard_normal(b)))
        if i < len(dims) - 2:
            layers.append(Activation(kind))
    return Model(dims[0], dims[-1], layers)


def hyperplane_distance(W, b, x0, c, t):
    """Distance from x0 to {f_c = f_t} for logits W x + b."""
    w = np.asarray(W[c]) - np.asarray(W[t])
    gap = float(w @ x0 + b[c] - b[t])
    return gap / math.sqrt(float(w @ w))


def central_diff_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
