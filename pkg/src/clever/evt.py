"""Extreme-value estimate of max f(x) over an l2 ball.

Block maxima of f over uniform ball samples are fitted with a reverse
Weibull distribution by maximum likelihood; the fitted location (the
right end of the support) is the estimate of the maximum.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

DEGENERATE_ATOL = 1e-12
MAX_ITER = 2000
SIMPLEX_TOL = 1e-9
START_SHAPES = (1.0, 3.0, 10.0)

# value_fn(points (n, d), rng) -> values (n,)
ValueFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class SamplePlan:
    n_batches: int = 100
    n_samples: int = 200
    radius: float = 2.0
    p: float = 2
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.n_batches < 2:
            raise ValueError("n_batches must be >= 2")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.p != 2:
            raise NotImplementedError("only l2 balls (p=2) are supported")

    def batch_rng(self, index: int) -> np.random.Generator:
        entropy = list(self.seed) if isinstance(self.seed, tuple) else self.seed
        return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(index,)))


@dataclass
class EvtFit:
    location: float
    scale: float
    shape: float
    log_likelihood: float
    batch_maxima: list[float] = field(default_factory=list)
    degenerate: bool = False
    converged: bool = True
    iterations: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class EvtConvergenceError(RuntimeError):
    """Simplex search hit its iteration cap; ``fit`` holds the best point found."""

    def __init__(self, fit: EvtFit):
        super().__init__(f"reverse Weibull fit did not converge in {MAX_ITER} iterations")
        self.fit = fit


@dataclass
class MaxEstimate:
    estimate: float
    fit: EvtFit


def sample_ball(x0, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniformly distributed in the l2 ball of ``radius`` around x0."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[0]
    dirs = rng.standard_normal((n, d))
    norms = np.linalg.norm(dirs, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        dirs[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(dirs, axis=1)
    radii = radius * rng.random(n) ** (1.0 / d)
    return x0 + dirs * (radii / norms)[:, None]


def _one_batch(value_fn: ValueFn, x0, plan: SamplePlan, b: int) -> float:
    rng = plan.batch_rng(b)
    pts = sample_ball(x0, plan.radius, plan.n_samples, rng)
    vals = np.asarray(value_fn(pts, rng), dtype=np.float64).reshape(-1)
    if vals.shape[0] != plan.n_samples:
        raise ValueError(f"value_fn returned {vals.shape[0]} values for {plan.n_samples} points")
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise FloatingPointError(f"non-finite value in batch {b}, sample {int(bad[0])}")
    return float(vals.max())


def batch_maxima(value_fn: ValueFn, x0, plan: SamplePlan, workers: int = 1) -> np.ndarray:
    """Per-batch maxima of ``value_fn`` over fresh ball samples.

    Batch ``b`` always draws from the same RNG substream, so the result does
    not depend on ``workers``.
    """
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(lambda b: _one_batch(value_fn, x0, plan, b), range(plan.n_batches)))
    else:
        out = [_one_batch(value_fn, x0, plan, b) for b in range(plan.n_batches)]
    return np.array(out)


def reverse_weibull_loglik(x, loc: float, scale: float, shape: float) -> float:
    """Log-likelihood of samples x under the reverse Weibull (support x < loc)."""
    x = np.asarray(x, dtype=np.float64)
    gap = loc - x
    if scale <= 0 or shape <= 0 or np.any(gap <= 0):
        return -math.inf
    n = x.shape[0]
    log_gap = np.log(gap)
    log_z = log_gap - math.log(scale)
    return float(
        n * math.log(shape)
        - n * shape * math.log(scale)
        + (shape - 1.0) * log_gap.sum()
        - np.exp(shape * log_z).sum()
    )


def fit_reverse_weibull(maxima) -> EvtFit:
    """Maximum-likelihood reverse Weibull fit with location above the data.

    Raises :class:`EvtConvergenceError` if no start converges.
    """
    x = np.asarray(maxima, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2:
        raise ValueError("need at least two maxima")
    if not np.all(np.isfinite(x)):
        raise ValueError("maxima must be finite")
    top = float(x.max())
    raw = [float(v) for v in x]
    if top - float(x.min()) <= DEGENERATE_ATOL:
        return EvtFit(top, 0.0, 1.0, math.inf, raw, degenerate=True)

    std = float(x.std())
    # keeps loc - max strictly positive so shape < 1 cannot drive the
    # likelihood to +inf at loc == max
    floor = 1e-10 * max(std, abs(top), 1e-300)

    def unpack(theta):
        m, s, a = theta
        return top + floor + math.exp(min(m, 700.0)), math.exp(min(s, 700.0)), math.exp(min(a, 700.0))

    def nll(theta):
        ll = reverse_weibull_loglik(x, *unpack(theta))
        return -ll if math.isfinite(ll) else 1e300

    mu0_gap = max(0.1 * std, 1e-6)
    best = None
    for a0 in START_SHAPES:
        theta0 = np.array([math.log(mu0_gap), math.log(std), math.log(a0)])
        simplex = np.vstack([theta0, theta0 + 0.5 * np.eye(3)])
        res = minimize(
            nll,
            theta0,
            method="Nelder-Mead",
            options={
                "maxiter": MAX_ITER,
                "maxfev": 4 * MAX_ITER,
                "xatol": SIMPLEX_TOL,
                "fatol": math.inf,
                "initial_simplex": simplex,
            },
        )
        cand = (float(res.fun), bool(res.nit < MAX_ITER and res.success), res)
        if best is None or (cand[1], -cand[0]) > (best[1], -best[0]):
            best = cand
    fun, ok, res = best
    loc, scale, shape = unpack(res.x)
    fit = EvtFit(loc, scale, shape, -fun, raw, degenerate=False, converged=ok, iterations=int(res.nit))
    if not ok:
        raise EvtConvergenceError(fit)
    return fit


def estimate_max(value_fn: ValueFn, x0, plan: SamplePlan, workers: int = 1) -> MaxEstimate:
    """Estimate max of ``value_fn`` over the ball as the fitted location.

    A non-converged fit is kept (with ``converged=False``) rather than raised.
    """
    maxima = batch_maxima(value_fn, x0, plan, workers)
    try:
        fit = fit_reverse_weibull(maxima)
    except EvtConvergenceError as exc:
        logger.warning("%s; using best-so-far location %.6g", exc, exc.fit.location)
        fit = exc.fit
    return MaxEstimate(fit.location, fit)
