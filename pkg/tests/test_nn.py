import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindtime.nn import (
    Adam, Layer, LossWeights, MlpParams, init_mlp, iou_target, linear_mlp, mlp_backward, mlp_forward, score_loss,
    smooth_l1,
)

from oracles import central_difference, forward_oracle, relative_error


def layers_of(p):
    return [(l.weight, l.bias, l.activation) for l in p.layers]


class TestForward:
    def test_identity(self, rng):
        x = rng.normal(size=4)
        y, _ = mlp_forward(linear_mlp(np.eye(4)), x)
        assert np.array_equal(y, x)

    def test_relu(self):
        p = MlpParams((Layer(np.eye(2), np.zeros(2), "relu"),))
        y, _ = mlp_forward(p, np.array([-1.0, 2.0]))
        assert list(y) == [0.0, 2.0]

    def test_matches_hand_rolled(self, rng):
        p = init_mlp([5, 7, 3], ["relu", "logistic"], rng, zero_bias=False)
        x = rng.normal(size=5)
        y, _ = mlp_forward(p, x)
        assert np.allclose(y, forward_oracle(layers_of(p), x), atol=1e-12)

    def test_batch_equals_rows(self, rng):
        p = init_mlp([5, 7, 3], ["relu", "identity"], rng, zero_bias=False)
        X = rng.normal(size=(6, 5))
        Y, _ = mlp_forward(p, X)
        for i in range(6):
            assert np.allclose(Y[i], mlp_forward(p, X[i])[0], atol=1e-14)

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            mlp_forward(init_mlp([3, 2], ["relu"], rng), np.zeros(4))
        with pytest.raises(ValueError):
            MlpParams((Layer(np.zeros((2, 3)), np.zeros(2)), Layer(np.zeros((2, 3)), np.zeros(2))))


class TestBackward:
    def test_zero_dy(self, rng):
        p = init_mlp([4, 6, 2], ["relu", "identity"], rng)
        _, cache = mlp_forward(p, rng.normal(size=4))
        grads, dx = mlp_backward(p, cache, np.zeros(2))
        assert all(not g.any() for g in grads.tensors()) and not dx.any()

    def test_linear_outer_product(self, rng):
        W = rng.normal(size=(3, 4))
        p = linear_mlp(W)
        x, dy = rng.normal(size=4), rng.normal(size=3)
        _, cache = mlp_forward(p, x)
        grads, dx = mlp_backward(p, cache, dy)
        assert np.allclose(grads.layers[0].weight, np.outer(dy, x))
        assert np.allclose(grads.layers[0].bias, dy)
        assert np.allclose(dx, W.T @ dy)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = init_mlp([4, 6, 5, 3], ["relu", "logistic", "identity"], rng, zero_bias=False)
        X = rng.normal(size=(3, 4))
        proj = rng.normal(size=(3, 3))

        def f():
            y, _ = mlp_forward(p, X)
            return float((y * proj).sum())

        _, cache = mlp_forward(p, X)
        grads, dx = mlp_backward(p, cache, proj)
        for arr, g in zip(p.tensors(), grads.tensors()):
            fd = central_difference(f, arr)
            assert relative_error(g.ravel(), [fd[i] for i in range(arr.size)]) < 1e-4
        fd = central_difference(f, X)
        assert relative_error(dx.ravel(), [fd[i] for i in range(X.size)]) < 1e-4


class TestLosses:
    def test_smooth_l1_branches(self):
        v, g = smooth_l1(np.array([0.5, -2.0, 1.0]), 1.0)
        assert np.allclose(v, [0.125, 1.5, 0.5]) and np.allclose(g, [0.5, -1.0, 1.0])

    def test_bce_symmetric_point(self):
        assert score_loss(0.5, 0.5)[0] == pytest.approx(np.log(2))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.floats(0.001, 0.999))
    def test_bce_minimized_at_target(self, y, p):
        target_p = min(max(y, 1e-6), 1 - 1e-6)
        assert score_loss(target_p, y)[0] <= score_loss(p, y)[0] + 1e-12

    def test_bce_gradient(self, rng):
        for _ in range(20):
            p, y = rng.uniform(0.01, 0.99), rng.uniform()
            _, g = score_loss(p, y)
            fd = (score_loss(p + 1e-6, y)[0] - score_loss(p - 1e-6, y)[0]) / 2e-6
            assert abs(g - fd) < 1e-5

    def test_bce_clamped(self):
        loss, g = score_loss(0.0, 1.0)
        assert np.isfinite(loss) and g == 0.0


class TestIoUTarget:
    @pytest.mark.parametrize("iou,expected", [(0.2, 0.0), (0.5, 0.5), (0.9, 1.0), (0.25, 0.0), (0.75, 1.0)])
    def test_values(self, iou, expected):
        assert iou_target(iou, 0.25, 0.75) == pytest.approx(expected, abs=1e-15)

    def test_bad_thresholds(self):
        with pytest.raises(ValueError):
            iou_target(0.5, 0.6, 0.6)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert iou_target(lo) <= iou_target(hi)


def test_loss_weights_nonnegative():
    assert LossWeights() == LossWeights(1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        opt = Adam()
        p = {"w": np.array([1.0, -2.0])}
        out = opt.update(p, {"w": np.zeros(2)})
        assert np.array_equal(out["w"], p["w"])

    def test_quadratic_converges(self):
        # loss (w - 3)^2, minimizer 3
        opt = Adam()
        w = {"w": np.array([0.0])}
        losses = []
        for _ in range(100):
            losses.append(float((w["w"][0] - 3.0) ** 2))
            w = opt.update(w, {"w": 2 * (w["w"] - 3.0)})
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        # with lr 1e-3 each step moves about lr toward the minimizer
        assert losses[-1] < losses[0]
        assert w["w"][0] == pytest.approx(0.1, abs=5e-3)
