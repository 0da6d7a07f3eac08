"""First- and second-order CLEVER scores.

Both scores plug an extreme-value estimate into a closed-form bound on the
targeted margin g = f_c - f_t around x0:

* first order:  min(g(x0) / L, R), L = max ||grad g|| over the ball;
* second order: min((-b + sqrt(b^2 + 2 a g(x0))) / a, R) with
  b = ||grad g(x0)|| and a = max ||Hessian of g||_2 over the ball.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import as_tensor
from .evt import EvtFit, SamplePlan, estimate_max
from .network import MarginFn, Model, logits
from .transforms import TransformSpec, apply

logger = logging.getLogger(__name__)

ZERO_CURVATURE = 1e-12


class MisclassifiedInput(ValueError):
    """x0 is not on the safe side of the margin; callers skip such inputs."""


@dataclass(frozen=True)
class ScoreParams:
    order: str = "first"
    plan: SamplePlan = field(default_factory=SamplePlan)
    power_iters: int = 1000
    power_tol: float = 1e-8
    hvp_step: float | None = None
    # "center": sample around h(x0), gradients at the samples.
    # "sample": sample around x0, gradients at h(sample).
    bpda_mode: str = "center"
    workers: int = 1

    def __post_init__(self):
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")
        if not self.power_tol > 0:
            raise ValueError("power_tol must be positive")
        if self.bpda_mode not in ("center", "sample"):
            raise ValueError(f"unknown bpda_mode {self.bpda_mode!r}")

    @property
    def radius(self) -> float:
        return self.plan.radius


@dataclass(frozen=True)
class BoundInputs:
    gamma: float
    b: float = 0.0
    a: float = 0.0
    L: float = 0.0


def first_order_score(gamma: float, L: float, R: float) -> float:
    if gamma < 0:
        raise MisclassifiedInput(f"negative margin {gamma:.6g}: input already crosses the target boundary")
    if L < 0 or not R > 0:
        raise ValueError("need L >= 0 and R > 0")
    if gamma == 0:
        return 0.0
    if L == 0:
        return float(R)
    return float(min(gamma / L, R))


def second_order_score(bi: BoundInputs, R: float) -> float:
    gamma, b = bi.gamma, bi.b
    a = max(bi.a, 0.0)
    if gamma < 0:
        raise MisclassifiedInput(f"negative margin {gamma:.6g}: input already crosses the target boundary")
    if b < 0 or not R > 0:
        raise ValueError("need b >= 0 and R > 0")
    if gamma == 0:
        return 0.0
    if a < ZERO_CURVATURE:
        return float(R) if b < ZERO_CURVATURE else float(min(gamma / b, R))
    # (-b + sqrt(b^2 + 2 a gamma)) / a, rewritten without cancellation
    root = 2.0 * gamma / (b + math.sqrt(b * b + 2.0 * a * gamma))
    return float(min(root, R))


def spectral_norms(fn, X, params: ScoreParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Batched power iteration for ||H(x)||_2 at every row of X.

    Returns ``(norms, converged)``.  The estimate at each step is ``||H v||``
    for the current unit vector v, which tends to the largest |eigenvalue|
    even when +lambda and -lambda compete for dominance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    V = rng.standard_normal((n, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    est = np.zeros(n)
    converged = np.zeros(n, dtype=bool)
    prev = np.full(n, -1.0)
    active = np.arange(n)
    for _ in range(params.power_iters):
        HV = fn.hvp(X[active], V[active], params.hvp_step)
        nrm = np.linalg.norm(HV, axis=1)
        est[active] = nrm
        zero = nrm == 0.0
        done = zero | (np.abs(nrm - prev[active]) <= params.power_tol * nrm)
        converged[active[done]] = True
        keep = ~done
        V[active[keep]] = HV[keep] / nrm[keep, None]
        prev[active] = nrm
        active = active[keep]
        if active.size == 0:
            break
    if active.size:
        logger.debug("power iteration: %d of %d points did not converge", active.size, n)
    return est, converged


def hessian_spectral_norm(fn, x, params: ScoreParams, rng: np.random.Generator, return_info: bool = False):
    if not getattr(fn, "twice_differentiable", True):
        raise ValueError("Hessian norm requested on a function with ReLU activations")
    est, conv = spectral_norms(fn, as_tensor(x)[None, :], params, rng)
    if return_info:
        return float(est[0]), bool(conv[0])
    return float(est[0])


@dataclass
class ScoreResult:
    order: str
    gamma: float
    score: float
    L: float | None = None
    a: float | None = None
    b: float | None = None
    fit: EvtFit | None = None
    wall_time: float = 0.0
    power_unconverged: int = 0


def score_function(fn, x0, params: ScoreParams, point_map=None, anchor=None) -> ScoreResult:
    """Score any object exposing ``value``/``grad``/``hvp`` around ``x0``.

    The ball is centred on ``x0``; ``point_map`` is applied to each sample
    before differentiation.  The margin and b are read at ``anchor``
    (default ``x0``).
    """
    start = time.perf_counter()
    x0 = as_tensor(x0)
    anchor = x0 if anchor is None else as_tensor(anchor)
    R = params.radius
    gamma = float(fn.value(anchor))
    if gamma < 0:
        raise MisclassifiedInput(f"negative margin {gamma:.6g}")
    mapped = (lambda P: P) if point_map is None else point_map

    if params.order == "first":

        def grad_norms(P, rng):
            return np.linalg.norm(fn.grad(mapped(P)), axis=1)

        est = estimate_max(grad_norms, x0, params.plan, params.workers)
        L = est.estimate
        score = first_order_score(gamma, L, R)
        return ScoreResult("first", gamma, score, L=L, fit=est.fit, wall_time=time.perf_counter() - start)

    if not getattr(fn, "twice_differentiable", True):
        raise ValueError("second-order score needs a twice differentiable model (no ReLU)")
    unconverged = 0

    def hess_norms(P, rng):
        nonlocal unconverged
        norms, conv = spectral_norms(fn, mapped(P), params, rng)
        unconverged += int((~conv).sum())
        return norms

    b = float(np.linalg.norm(fn.grad(anchor)))
    est = estimate_max(hess_norms, x0, params.plan, params.workers)
    a = est.estimate
    score = second_order_score(BoundInputs(gamma, b=b, a=a), R)
    return ScoreResult(
        "second", gamma, score, a=a, b=b, fit=est.fit,
        wall_time=time.perf_counter() - start, power_unconverged=unconverged,
    )


def clever_score(
    model: Model,
    spec: TransformSpec,
    x0,
    t: int,
    params: ScoreParams,
    true_class: int | None = None,
) -> ScoreResult:
    """Targeted CLEVER score of the defended classifier f(h(.)) at x0.

    The margin is measured on the logits at h(x0).  Gradients come from
    BPDA: the network gradient is taken at transformed points and used as
    if it were the gradient of f o h.
    """
    x0 = as_tensor(x0)
    hx0 = apply(spec, x0)
    c = int(np.argmax(logits(model, hx0)))
    if true_class is not None and c != true_class:
        raise MisclassifiedInput(f"predicted class {c} != label {true_class}")
    if t == c:
        raise MisclassifiedInput(f"input is already classified as target {t}")
    if params.order == "second" and not model.twice_differentiable:
        raise ValueError("second-order score needs a twice differentiable model (no ReLU)")
    m = MarginFn(model, c, t)
    if spec.is_identity or params.bpda_mode == "center":
        return score_function(m, hx0, params)
    return score_function(m, x0, params, point_map=lambda P: apply(spec, P), anchor=hx0)


def select_targets(model: Model, spec: TransformSpec, x0, rng: np.random.Generator) -> dict[str, int]:
    """Runner-up, uniformly random and least-likely target classes."""
    z = logits(model, apply(spec, as_tensor(x0)))
    c = int(np.argmax(z))
    others = [k for k in range(model.num_classes) if k != c]
    masked = z.astype(np.float64).copy()
    masked[c] = -np.inf
    runner_up = int(np.argmax(masked))
    masked[c] = np.inf
    least_likely = int(np.argmin(masked))
    random = int(others[rng.integers(len(others))])
    return {"runner_up": runner_up, "random": random, "least_likely": least_likely}
