"""Input transformations h(x) used as gradient-masking defenses, and BPDA.

Only two transforms exist: the identity and a bit-depth staircase that
quantizes each value to a byte and zeroes its low ``8 - k`` bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import as_tensor
from .network import MarginFn, Model, margin_grad

# Guards floor() against values like (200/255)*255 = 199.99999999999997.
_BYTE_EPS = 1e-9


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "identity"
    bits: int = 8
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "bit_depth"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not 1 <= self.bits <= 16:
            raise ValueError(f"bits must be in [1, 16], got {self.bits}")
        if not self.hi > self.lo:
            raise ValueError("transform range needs hi > lo")

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def with_range(self, lo: float, hi: float) -> "TransformSpec":
        return TransformSpec(self.kind, self.bits, float(lo), float(hi))

    def __str__(self) -> str:
        return "identity" if self.is_identity else f"bitdepth:{self.bits}"


def parse_transform(text: str, lo: float = 0.0, hi: float = 1.0) -> TransformSpec:
    """Parse the CLI syntax ``identity`` or ``bitdepth:k``."""
    text = text.strip().lower()
    if text == "identity":
        return TransformSpec("identity", lo=lo, hi=hi)
    if text.startswith("bitdepth:"):
        try:
            bits = int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad bit count in transform {text!r}") from None
        return TransformSpec("bit_depth", bits, lo, hi)
    raise ValueError(f"unknown transform {text!r}; expected 'identity' or 'bitdepth:k'")


def apply(spec: TransformSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if spec.is_identity:
        return x
    span = spec.hi - spec.lo
    clamped = np.clip(x, spec.lo, spec.hi)
    # bits > 8 keeps every bit of the byte
    drop = max(0, 8 - spec.bits)
    byte = np.clip(np.floor((clamped - spec.lo) / span * 255.0 + _BYTE_EPS), 0, 255).astype(np.int64)
    byte = (byte >> drop) << drop
    return spec.lo + (byte / 255.0) * span


def bpda_gradient(model: Model, spec: TransformSpec, m: MarginFn, x) -> np.ndarray:
    """Gradient of the margin taken at h(x), standing in for d(g o h)/dx."""
    return margin_grad(m, apply(spec, as_tensor(x)))


def true_composed_gradient(model: Model, spec: TransformSpec, m: MarginFn, x) -> np.ndarray:
    """The literal chain-rule gradient of g(h(x)).

    The staircase has zero derivative almost everywhere, so this is the
    zero vector for ``bit_depth``; it exists to show what BPDA replaces.
    """
    x = as_tensor(x)
    # elementwise derivative of h: 1 for identity, 0 on every staircase tread
    h_prime = np.ones_like(x) if spec.is_identity else np.zeros_like(x)
    return h_prime * margin_grad(m, apply(spec, x))
