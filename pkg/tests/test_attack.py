import numpy as np
import pytest

from clever.attack import AttackParams, attack, untargeted_attack
from clever.network import MarginFn, logits, predict
from clever.transforms import TransformSpec, apply, parse_transform

from conftest import hyperplane_distance, linear_model

IDENTITY = TransformSpec()
FAST = AttackParams(binary_search_steps=6, max_iterations=300, learning_rate=0.01, initial_const=0.1)


def binary_case():
    W = np.array([[1.0, 1.0], [0.0, 0.0]])
    b = np.array([0.0, 0.7])
    return linear_model(W, b), W, b, np.array([0.5, 0.3])


def test_params_validation():
    with pytest.raises(ValueError):
        AttackParams(binary_search_steps=0)
    with pytest.raises(ValueError):
        AttackParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        AttackParams(confidence=-1.0)


def test_already_target():
    model, *_ = binary_case()
    x0 = np.array([0.1, 0.1])
    assert predict(model, x0) == 1
    res = attack(model, IDENTITY, x0, 1)
    assert res.success and res.distortion == 0.0


def test_linear_binary_near_hyperplane():
    model, W, b, x0 = binary_case()
    truth = hyperplane_distance(W, b, x0, 0, 1)
    res = attack(model, IDENTITY, x0, 1, FAST)
    assert res.success
    assert truth <= res.distortion <= 1.02 * truth


def test_success_is_real():
    model, W, b, x0 = binary_case()
    res = attack(model, IDENTITY, x0, 1, FAST)
    assert MarginFn(model, 0, 1).value(res.x_adv) <= 0
    assert res.distortion == pytest.approx(np.linalg.norm(res.x_adv - x0), rel=1e-12)


def test_stays_in_box():
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    model = linear_model(W, input_range=(-1.0, 1.0))
    x0 = np.array([0.99, -0.99])
    res = attack(model, IDENTITY, x0, 1, FAST)
    assert res.success
    assert np.all(res.x_adv >= -1.0) and np.all(res.x_adv <= 1.0)


def test_unreachable_target_fails():
    # class 1 can never win inside [0, 1]^2
    W = np.array([[0.0, 0.0], [0.0, 0.0]])
    model = linear_model(W, b=[1.0, 0.0])
    res = attack(model, IDENTITY, np.array([0.5, 0.5]), 1, AttackParams(binary_search_steps=2, max_iterations=20))
    assert not res.success and res.distortion == float("inf")


def test_deterministic(mlp, blobs):
    x0 = np.asarray(blobs[0]["values"])
    t = (predict(mlp, x0) + 1) % 3
    a = attack(mlp, IDENTITY, x0, t, FAST)
    b = attack(mlp, IDENTITY, x0, t, FAST)
    assert a.distortion == b.distortion and np.array_equal(a.x_adv, b.x_adv)


def test_untargeted_two_classes_equals_targeted():
    model, W, b, x0 = binary_case()
    u = untargeted_attack(model, IDENTITY, x0, FAST)
    t = attack(model, IDENTITY, x0, 1, FAST)
    assert u.distortion == t.distortion and u.target == 1


@pytest.mark.parametrize("seed", range(4))
def test_untargeted_three_class_linear(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)
    model = linear_model(W, b, input_range=(-1.0, 1.0))
    x0 = rng.uniform(-0.5, 0.5, 4)
    c = predict(model, x0)
    truth = min(hyperplane_distance(W, b, x0, c, t) for t in range(3) if t != c)
    res = untargeted_attack(model, IDENTITY, x0)
    assert res.success
    assert truth * (1 - 1e-9) <= res.distortion <= 1.02 * truth
    for t in range(3):
        if t != c:
            r = attack(model, IDENTITY, x0, t)
            if r.success:
                assert res.distortion <= r.distortion


def test_defended_success_verified(mlp, blobs):
    spec = parse_transform("bitdepth:3")
    x0 = np.asarray(blobs[3]["values"])
    c = int(np.argmax(logits(mlp, apply(spec, x0))))
    for t in range(3):
        if t == c:
            continue
        res = attack(mlp, spec, x0, t, FAST)
        if res.success:
            assert int(np.argmax(logits(mlp, apply(spec, res.x_adv)))) == t
        else:
            assert res.distortion == float("inf")
