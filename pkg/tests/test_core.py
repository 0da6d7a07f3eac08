import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clever.core import (
    BoundInputs,
    MisclassifiedInput,
    ScoreParams,
    clever_score,
    first_order_score,
    hessian_spectral_norm,
    score_function,
    second_order_score,
    select_targets,
    spectral_norms,
)
from clever.evt import SamplePlan
from clever.network import MarginFn, logits, quadratic_margin
from clever.transforms import TransformSpec, parse_transform

from conftest import hyperplane_distance, linear_model, random_mlp

IDENTITY = TransformSpec()
pos = st.floats(1e-6, 1e3, allow_nan=False)


def quick(order="first", radius=5.0, **kw):
    return ScoreParams(order=order, plan=SamplePlan(20, 20, radius, seed=0), **kw)


class TestFormulas:
    def test_first_order_examples(self):
        assert first_order_score(2.0, 4.0, 5.0) == 0.5
        assert first_order_score(10.0, 1.0, 0.3) == 0.3
        assert first_order_score(0.0, 3.0, 1.0) == 0.0
        assert first_order_score(1.0, 0.0, 2.5) == 2.5

    def test_negative_margin(self):
        with pytest.raises(MisclassifiedInput):
            first_order_score(-0.1, 1.0, 1.0)
        with pytest.raises(MisclassifiedInput):
            second_order_score(BoundInputs(-0.1, b=1.0, a=1.0), 1.0)

    @pytest.mark.parametrize(
        "gamma,b,a,R,expected",
        [
            (1.0, 0.0, 2.0, 10.0, 1.0),
            (4.0, 2.0, 0.0, 10.0, 2.0),
            (4.0, 1.0, 2.0, 10.0, (-1 + math.sqrt(17)) / 2),
            (4.0, 0.0, 0.0, 3.0, 3.0),
            (0.0, 1.0, 1.0, 3.0, 0.0),
        ],
    )
    def test_second_order_examples(self, gamma, b, a, R, expected):
        assert second_order_score(BoundInputs(gamma, b=b, a=a), R) == pytest.approx(expected, rel=1e-12)

    def test_second_order_known_value(self):
        assert second_order_score(BoundInputs(4.0, b=1.0, a=2.0), 10.0) == pytest.approx(1.5615528, abs=1e-7)

    def test_continuous_at_zero_curvature(self):
        lin = second_order_score(BoundInputs(3.0, b=2.0, a=0.0), 10.0)
        near = second_order_score(BoundInputs(3.0, b=2.0, a=1e-11), 10.0)
        assert near == pytest.approx(lin, rel=1e-9)

    @settings(max_examples=200)
    @given(pos, pos, pos, pos)
    def test_second_order_solves_quadratic(self, gamma, b, a, R):
        s = second_order_score(BoundInputs(gamma, b=b, a=a), R)
        assert 0 < s <= R
        if s < R:
            assert 0.5 * a * s * s + b * s == pytest.approx(gamma, rel=1e-9)

    @settings(max_examples=200)
    @given(pos, pos, pos, pos, st.floats(1.0, 10.0))
    def test_second_order_monotone(self, gamma, b, a, R, k):
        base = second_order_score(BoundInputs(gamma, b=b, a=a), R)
        assert second_order_score(BoundInputs(gamma * k, b=b, a=a), R) >= base
        assert second_order_score(BoundInputs(gamma, b=b * k, a=a), R) <= base
        assert second_order_score(BoundInputs(gamma, b=b, a=a * k), R) <= base

    @settings(max_examples=200)
    @given(pos, pos, pos, st.floats(1.0, 10.0))
    def test_first_order_monotone(self, gamma, L, R, k):
        base = first_order_score(gamma, L, R)
        assert 0 < base <= R
        assert first_order_score(gamma * k, L, R) >= base
        assert first_order_score(gamma, L * k, R) <= base


class TestSpectralNorm:
    def _quad(self, D):
        d = D.shape[0]
        return quadratic_margin(np.zeros(d), 1.0, np.zeros(d), D)

    def test_linear_is_zero(self):
        m = MarginFn(linear_model([[1.0, 2.0], [3.0, -1.0]]), 0, 1)
        assert hessian_spectral_norm(m, np.array([0.2, 0.3]), ScoreParams(), np.random.default_rng(0)) == 0.0

    def test_indefinite_diagonal(self):
        f = self._quad(np.diag([3.0, -5.0]))
        est = hessian_spectral_norm(f, np.zeros(2), ScoreParams(), np.random.default_rng(1))
        assert est == pytest.approx(5.0, rel=1e-6)

    def test_symmetric_pm_eigenvalues(self):
        # +4 and -4 tie in magnitude; ||Hv|| still equals 4 for every v
        f = self._quad(np.diag([4.0, -4.0, 1.0]))
        est = hessian_spectral_norm(f, np.zeros(3), ScoreParams(), np.random.default_rng(2))
        assert est == pytest.approx(4.0, rel=1e-6)

    def test_random_matrix(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((50, 50))
        D = (M + M.T) / 2
        est, conv = hessian_spectral_norm(self._quad(D), np.zeros(50), ScoreParams(), rng, return_info=True)
        assert est == pytest.approx(np.abs(np.linalg.eigvalsh(D)).max(), rel=1e-3)

    def test_batched_rows_independent(self):
        f = self._quad(np.diag([2.0, -1.0]))
        est, conv = spectral_norms(f, np.zeros((5, 2)), ScoreParams(), np.random.default_rng(4))
        np.testing.assert_allclose(est, 2.0, rtol=1e-6)
        assert conv.all()

    def test_budget_exhausted_reports_unconverged(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((30, 30))
        f = self._quad((M + M.T) / 2)
        _, conv = hessian_spectral_norm(f, np.zeros(30), ScoreParams(power_iters=2, power_tol=1e-14), rng, True)
        assert not conv

    def test_relu_rejected(self):
        model = random_mlp(np.random.default_rng(0), [3, 4, 2], kind="relu")
        with pytest.raises(ValueError):
            hessian_spectral_norm(MarginFn(model, 0, 1), np.zeros(3), ScoreParams(), np.random.default_rng(0))


class TestParams:
    @pytest.mark.parametrize("kw", [dict(order="third"), dict(power_iters=0), dict(power_tol=0.0), dict(bpda_mode="x")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ScoreParams(**kw)


def _linear_case(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)
    model = linear_model(W, b)
    x0 = rng.uniform(0, 1, 4)
    z = logits(model, x0)
    c = int(np.argmax(z))
    t = int(np.argmin(z))
    return model, W, b, x0, c, t


class TestCleverScore:
    @pytest.mark.parametrize("seed", range(5))
    def test_linear_first_order_exact(self, seed):
        model, W, b, x0, c, t = _linear_case(seed)
        truth = hyperplane_distance(W, b, x0, c, t)
        res = clever_score(model, IDENTITY, x0, t, quick(radius=100.0))
        assert res.score == pytest.approx(truth, rel=1e-9)
        assert res.fit.degenerate

    @pytest.mark.parametrize("seed", range(3))
    def test_linear_second_order_matches_first(self, seed):
        model, W, b, x0, c, t = _linear_case(seed)
        first = clever_score(model, IDENTITY, x0, t, quick(radius=100.0))
        second = clever_score(model, IDENTITY, x0, t, quick("second", radius=100.0))
        assert second.a < 1e-6
        assert second.score == pytest.approx(first.score, rel=1e-6)

    def test_radius_caps(self):
        model, W, b, x0, c, t = _linear_case(0)
        truth = hyperplane_distance(W, b, x0, c, t)
        R = truth / 2
        assert clever_score(model, IDENTITY, x0, t, quick(radius=R)).score == R

    def test_quadratic_second_order(self):
        rng = np.random.default_rng(9)
        d = 6
        M = rng.standard_normal((d, d))
        D = (M + M.T) / 2
        u = rng.standard_normal(d)
        f = quadratic_margin(np.zeros(d), 2.0, u, D)
        res = score_function(f, np.zeros(d), quick("second", radius=50.0))
        a = np.abs(np.linalg.eigvalsh(D)).max()
        b = np.linalg.norm(u)
        expected = (-b + math.sqrt(b * b + 4.0 * a)) / a
        assert res.a == pytest.approx(a, rel=1e-4)
        assert res.b == pytest.approx(b, rel=1e-9)
        assert res.score == pytest.approx(expected, rel=1e-2)

    def test_bitdepth8_matches_identity_on_byte_grid(self, mlp, blobs):
        for rec in blobs[:5]:
            x0 = np.asarray(rec["values"])
            targets = select_targets(mlp, IDENTITY, x0, np.random.default_rng(0))
            t = targets["runner_up"]
            a = clever_score(mlp, IDENTITY, x0, t, quick())
            b = clever_score(mlp, parse_transform("bitdepth:8"), x0, t, quick())
            assert a.score == b.score and a.L == b.L

    def test_misclassified_raises(self, mlp, blobs):
        rec = blobs[0]
        x0 = np.asarray(rec["values"])
        wrong = (rec["label"] + 1) % 3
        with pytest.raises(MisclassifiedInput):
            clever_score(mlp, IDENTITY, x0, (wrong + 1) % 3, quick(), true_class=wrong)

    def test_target_equal_to_prediction_raises(self, mlp, blobs):
        x0 = np.asarray(blobs[0]["values"])
        c = int(np.argmax(logits(mlp, x0)))
        with pytest.raises(MisclassifiedInput):
            clever_score(mlp, IDENTITY, x0, c, quick())

    def test_relu_second_order_rejected(self):
        model = random_mlp(np.random.default_rng(1), [3, 5, 2], kind="relu")
        x0 = np.full(3, 0.5)
        c = int(np.argmax(logits(model, x0)))
        with pytest.raises(ValueError):
            clever_score(model, IDENTITY, x0, 1 - c, quick("second"))
        assert clever_score(model, IDENTITY, x0, 1 - c, quick()).score >= 0

    def test_reproducible(self, mlp, blobs):
        x0 = np.asarray(blobs[1]["values"])
        t = select_targets(mlp, IDENTITY, x0, np.random.default_rng(0))["least_likely"]
        r1 = clever_score(mlp, IDENTITY, x0, t, quick("second", power_iters=50, power_tol=1e-5))
        r2 = clever_score(mlp, IDENTITY, x0, t, quick("second", power_iters=50, power_tol=1e-5))
        assert r1.score == r2.score and r1.fit.batch_maxima == r2.fit.batch_maxima


class TestSelectTargets:
    def test_hand_example(self):
        model = linear_model(np.eye(4))
        x0 = np.array([0.9, 0.5, 0.1, 0.7])
        tg = select_targets(model, IDENTITY, x0, np.random.default_rng(0))
        assert tg["runner_up"] == 3 and tg["least_likely"] == 2
        assert tg["random"] in (1, 2, 3)

    def test_random_covers_all_non_predicted(self):
        model = linear_model(np.eye(4))
        x0 = np.array([0.9, 0.5, 0.1, 0.7])
        rng = np.random.default_rng(1)
        seen = {select_targets(model, IDENTITY, x0, rng)["random"] for _ in range(200)}
        assert seen == {1, 2, 3}

    def test_deterministic(self, mlp, blobs):
        x0 = np.asarray(blobs[2]["values"])
        a = select_targets(mlp, IDENTITY, x0, np.random.default_rng(5))
        b = select_targets(mlp, IDENTITY, x0, np.random.default_rng(5))
        assert a == b

    def test_two_classes(self):
        model = linear_model(np.eye(2))
        tg = select_targets(model, IDENTITY, np.array([0.2, 0.8]), np.random.default_rng(0))
        assert tg == {"runner_up": 0, "random": 0, "least_likely": 0}
