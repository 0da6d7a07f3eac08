"""Train the small tanh MLP shipped as a test fixture.

Produces tests/fixtures/mlp_tanh.json (model schema) and
tests/fixtures/blobs.json (dataset schema).  Inputs live on the byte grid
k/255 so the 8-bit staircase leaves them unchanged.

    python scripts/make_fixture.py
"""

import json
from pathlib import Path

import numpy as np

D, K, HIDDEN = 8, 3, 16
N_TRAIN, N_TEST = 600, 60
SEED = 20181018

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def make_blobs(rng, n, centers):
    labels = rng.integers(K, size=n)
    x = centers[labels] + 0.15 * rng.standard_normal((n, D))
    x = np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0
    return x, labels


def init(rng, fan_in, fan_out):
    return rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in), np.zeros(fan_out)


def forward(params, x):
    (W1, b1), (W2, b2), (W3, b3) = params
    h1 = np.tanh(x @ W1.T + b1)
    h2 = np.tanh(h1 @ W2.T + b2)
    return h1, h2, h2 @ W3.T + b3


def train(x, y, rng, steps=300, lr=0.01):
    params = [init(rng, D, HIDDEN), init(rng, HIDDEN, HIDDEN), init(rng, HIDDEN, K)]
    flat = [p for layer in params for p in layer]
    m = [np.zeros_like(p) for p in flat]
    v = [np.zeros_like(p) for p in flat]
    onehot = np.eye(K)[y]
    for step in range(1, steps + 1):
        h1, h2, z = forward(params, x)
        z = z - z.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        dz = (prob - onehot) / len(x)
        (W1, b1), (W2, b2), (W3, b3) = params
        gW3, gb3 = dz.T @ h2, dz.sum(0)
        d2 = (dz @ W3) * (1 - h2**2)
        gW2, gb2 = d2.T @ h1, d2.sum(0)
        d1 = (d2 @ W2) * (1 - h1**2)
        gW1, gb1 = d1.T @ x, d1.sum(0)
        grads = [gW1, gb1, gW2, gb2, gW3, gb3]
        for i, (p, g) in enumerate(zip(flat, grads)):
            m[i] = 0.9 * m[i] + 0.1 * g
            v[i] = 0.999 * v[i] + 0.001 * g * g
            p -= lr * (m[i] / (1 - 0.9**step)) / (np.sqrt(v[i] / (1 - 0.999**step)) + 1e-8)
    return params


def main():
    rng = np.random.default_rng(SEED)
    centers = rng.uniform(0.25, 0.75, size=(K, D))
    xtr, ytr = make_blobs(rng, N_TRAIN, centers)
    xte, yte = make_blobs(rng, N_TEST, centers)
    params = train(xtr, ytr, rng)
    acc = (forward(params, xte)[2].argmax(1) == yte).mean()
    print(f"test accuracy {acc:.3f}")

    layers = []
    for i, (W, b) in enumerate(params):
        layers.append({"type": "affine", "weight": W.tolist(), "bias": b.tolist()})
        if i < len(params) - 1:
            layers.append({"type": "activation", "kind": "tanh"})
    model = {
        "name": "blobs-tanh-mlp",
        "input_dim": D,
        "num_classes": K,
        "input_range": [0.0, 1.0],
        "layers": layers,
    }
    records = [
        {"id": f"blob-{i:03d}", "values": xte[i].tolist(), "label": int(yte[i])} for i in range(N_TEST)
    ]
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "mlp_tanh.json").write_text(json.dumps(model, indent=1) + "\n")
    (OUT / "blobs.json").write_text(json.dumps({"records": records}, indent=1) + "\n")


if __name__ == "__main__":
    main()
