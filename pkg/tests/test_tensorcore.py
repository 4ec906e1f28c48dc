import numpy as np
import pytest

from rulforge.errors import NumericsError, ShapeError, ValidationError
from rulforge.tensorcore import (
    batchnorm_backward,
    batchnorm_forward,
    check_finite,
    conv1d_backward,
    conv1d_forward,
    dropout_backward,
    dropout_forward,
    grad_check,
    masked_mse_loss,
    pointwise_backward,
    pointwise_forward,
    relu_backward,
    relu_forward,
)


class TestConvForward:
    def test_causal_oracle(self):
        # hand-computed: x=[1,2,3,4], K=2, d=2, w=[1,1] with left zeros
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        w = np.ones((1, 1, 2))
        b = np.zeros(1)
        out = conv1d_forward(x, w, b, dilation=2, padding_mode="causal_left")
        np.testing.assert_array_equal(out, [[[1.0, 2.0, 4.0, 6.0]]])

    def test_symmetric_oracle(self):
        # same setup, split padding: one zero each side
        x = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        w = np.ones((1, 1, 2))
        b = np.zeros(1)
        out = conv1d_forward(x, w, b, dilation=2, padding_mode="symmetric")
        np.testing.assert_array_equal(out, [[[2.0, 4.0, 6.0, 3.0]]])

    def test_length_preserved(self, rng):
        x = rng.normal(size=(2, 3, 17))
        w = rng.normal(size=(5, 3, 3))
        b = rng.normal(size=5)
        for mode in ("causal_left", "symmetric"):
            for d in (1, 2, 4):
                assert conv1d_forward(x, w, b, d, mode).shape == (2, 5, 17)

    def test_causality(self, rng):
        # causal mode: output at t must ignore inputs after t
        x = rng.normal(size=(1, 2, 20))
        w = rng.normal(size=(3, 2, 3))
        b = rng.normal(size=3)
        base = conv1d_forward(x, w, b, dilation=4, padding_mode="causal_left")
        x2 = x.copy()
        x2[:, :, 10:] = 99.0
        bumped = conv1d_forward(x2, w, b, dilation=4, padding_mode="causal_left")
        np.testing.assert_array_equal(base[:, :, :10], bumped[:, :, :10])
        assert not np.array_equal(base[:, :, 10:], bumped[:, :, 10:])

    def test_bias_applied(self):
        x = np.zeros((1, 1, 4))
        w = np.zeros((2, 1, 3))
        b = np.array([1.5, -2.0])
        out = conv1d_forward(x, w, b)
        np.testing.assert_array_equal(out[0, 0], [1.5] * 4)
        np.testing.assert_array_equal(out[0, 1], [-2.0] * 4)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv1d_forward(rng.normal(size=(1, 4, 8)), rng.normal(size=(2, 3, 3)), np.zeros(2))

    def test_bad_args(self, rng):
        x = rng.normal(size=(1, 2, 8))
        w = rng.normal(size=(2, 2, 3))
        with pytest.raises(ValidationError):
            conv1d_forward(x, w, np.zeros(2), dilation=0)
        with pytest.raises(ValidationError):
            conv1d_forward(x, w, np.zeros(2), padding_mode="full")


class TestGradients:
    """Analytic backward passes vs central differences.

    Losses are random linear functionals of the primitive output, so the
    finite-difference quotient is exact up to rounding and the comparison
    isolates the backward implementation itself.
    """

    def test_conv_backward(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 3, 7))
            w = rng.normal(size=(2, 3, 3))
            b = rng.normal(size=2)
            u = rng.normal(size=(2, 2, 7))
            for mode in ("causal_left", "symmetric"):

                def f(x, w, b, mode=mode):
                    out = conv1d_forward(x, w, b, dilation=2, padding_mode=mode)
                    gx, gw, gb = conv1d_backward(u, x, w, dilation=2, padding_mode=mode)
                    return float((u * out).sum()), (gx, gw, gb)

                assert grad_check(f, [x, w, b]) < 1e-4

    def test_pointwise_backward(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 4, 6))
            w = rng.normal(size=(3, 4))
            b = rng.normal(size=3)
            u = rng.normal(size=(2, 3, 6))

            def f(x, w, b):
                out = pointwise_forward(x, w, b)
                gx, gw, gb = pointwise_backward(u, x, w)
                return float((u * out).sum()), (gx, gw, gb)

            assert grad_check(f, [x, w, b]) < 1e-4

    def test_batchnorm_backward(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 3, 6))
            gamma = rng.uniform(0.5, 1.5, size=3)
            beta = rng.normal(size=3)
            mask = np.zeros((2, 6), dtype=bool)
            mask[0, :6] = True
            mask[1, :4] = True
            u = rng.normal(size=(2, 3, 6))

            def f(x, gamma, beta):
                out, cache = batchnorm_forward(
                    x, gamma, beta, np.zeros(3), np.ones(3), mask, training=True
                )
                gx, gg, gb = batchnorm_backward(u, cache)
                return float((u * out).sum()), (gx, gg, gb)

            assert grad_check(f, [x, gamma, beta]) < 1e-4

    def test_relu_backward(self, rng):
        # keep samples away from the kink so finite differences are valid
        x = rng.uniform(0.5, 2.0, size=(2, 3, 5)) * rng.choice([-1.0, 1.0], size=(2, 3, 5))
        u = rng.normal(size=(2, 3, 5))

        def f(x):
            y = relu_forward(x)
            return float((u * y).sum()), (relu_backward(u, x),)

        assert grad_check(f, [x]) < 1e-6

    def test_dropout_backward(self, rng):
        x = rng.normal(size=(2, 3, 8))
        mask = np.zeros((2, 8), dtype=bool)
        mask[0] = True
        mask[1, :5] = True
        u = rng.normal(size=(2, 3, 8))

        def f(x):
            # fresh generator with a fixed seed keeps the keep-pattern
            # identical across finite-difference evaluations
            y, keep = dropout_forward(x, 0.3, np.random.default_rng(11), mask=mask)
            return float((u * y).sum()), (dropout_backward(u, keep, 0.3),)

        assert grad_check(f, [x]) < 1e-6

    def test_masked_loss_gradient(self, rng):
        pred = rng.normal(size=(2, 6))
        target = rng.normal(size=(2, 6))
        mask = rng.random((2, 6)) > 0.3
        mask[0, 0] = True  # guarantee non-empty

        def f(pred):
            loss, grad = masked_mse_loss(pred, target, mask)
            return loss, (grad,)

        assert grad_check(f, [pred]) < 1e-6

    def test_grad_check_catches_wrong_gradient(self, rng):
        x = rng.normal(size=(3,))

        def f(x):
            return float((2.0 * x).sum()), (np.ones_like(x),)  # true grad is 2

        assert grad_check(f, [x]) > 0.1

    def test_grad_check_arity(self, rng):
        with pytest.raises(ValidationError):
            grad_check(lambda a: (0.0, ()), [rng.normal(size=(2,))])


class TestConvBackwardReductions:
    def test_bias_grad_is_upstream_sum(self, rng):
        x = rng.normal(size=(2, 3, 9))
        w = rng.normal(size=(4, 3, 3))
        go = rng.normal(size=(2, 4, 9))
        _, _, gb = conv1d_backward(go, x, w)
        np.testing.assert_allclose(gb, go.sum(axis=(0, 2)), rtol=1e-12)

    def test_masked_bias_grad_sums_valid_only(self, rng):
        x = rng.normal(size=(2, 3, 9))
        w = rng.normal(size=(4, 3, 3))
        mask = np.zeros((2, 9), dtype=bool)
        mask[0, :9] = True
        mask[1, :5] = True
        go = rng.normal(size=(2, 4, 9)) * mask[:, None, :]
        _, _, gb = conv1d_backward(go, x, w, mask=mask)
        np.testing.assert_allclose(gb, go.sum(axis=(0, 2)), rtol=1e-12)


class TestPaddingInvariance:
    """Widening the zero-padded region must not change any valid number."""

    def _masked_pair(self, rng, extra):
        lengths = [9, 5]
        l1 = max(lengths)
        x1 = np.zeros((2, 3, l1))
        mask1 = np.zeros((2, l1), dtype=bool)
        for i, t in enumerate(lengths):
            x1[i, :, :t] = rng.normal(size=(3, t))
            mask1[i, :t] = True
        x2 = np.zeros((2, 3, l1 + extra))
        x2[:, :, :l1] = x1
        mask2 = np.zeros((2, l1 + extra), dtype=bool)
        mask2[:, :l1] = mask1
        return x1, mask1, x2, mask2

    def test_conv_outputs_and_grads(self, rng):
        x1, mask1, x2, mask2 = self._masked_pair(rng, extra=6)
        w = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        for mode in ("causal_left", "symmetric"):
            o1 = conv1d_forward(x1, w, b, 2, mode)
            o2 = conv1d_forward(x2, w, b, 2, mode)
            assert np.array_equal(o1, o2[:, :, : o1.shape[2]])
            go1 = rng.normal(size=o1.shape) * mask1[:, None, :]
            go2 = np.zeros_like(o2)
            go2[:, :, : o1.shape[2]] = go1
            gx1, gw1, gb1 = conv1d_backward(go1, x1, w, 2, mode, mask=mask1)
            gx2, gw2, gb2 = conv1d_backward(go2, x2, w, 2, mode, mask=mask2)
            assert np.array_equal(gw1, gw2)
            assert np.array_equal(gb1, gb2)
            assert np.array_equal(gx1 * mask1[:, None, :], gx2[:, :, : gx1.shape[2]] * mask1[:, None, :])

    def test_batchnorm_stats_and_outputs(self, rng):
        x1, mask1, x2, mask2 = self._masked_pair(rng, extra=6)
        gamma = rng.uniform(0.5, 1.5, size=3)
        beta = rng.normal(size=3)
        rm1, rv1 = np.zeros(3), np.ones(3)
        rm2, rv2 = np.zeros(3), np.ones(3)
        o1, c1 = batchnorm_forward(x1, gamma, beta, rm1, rv1, mask1, training=True)
        o2, c2 = batchnorm_forward(x2, gamma, beta, rm2, rv2, mask2, training=True)
        assert np.array_equal(rm1, rm2)
        assert np.array_equal(rv1, rv2)
        assert np.array_equal(o1, o2[:, :, : o1.shape[2]])
        go1 = rng.normal(size=o1.shape) * mask1[:, None, :]
        go2 = np.zeros_like(o2)
        go2[:, :, : o1.shape[2]] = go1
        gx1, gg1, gb1 = batchnorm_backward(go1, c1)
        gx2, gg2, gb2 = batchnorm_backward(go2, c2)
        assert np.array_equal(gg1, gg2)
        assert np.array_equal(gb1, gb2)
        assert np.array_equal(gx1, gx2[:, :, : gx1.shape[2]])

    def test_dropout_draws_track_valid_positions(self, rng):
        x1, mask1, x2, mask2 = self._masked_pair(rng, extra=6)
        y1, k1 = dropout_forward(x1, 0.4, np.random.default_rng(3), mask=mask1)
        y2, k2 = dropout_forward(x2, 0.4, np.random.default_rng(3), mask=mask2)
        assert np.array_equal(k1, k2[:, :, : k1.shape[2]])
        assert np.array_equal(y1, y2[:, :, : y1.shape[2]])

    def test_masked_loss(self, rng):
        x1, mask1, x2, mask2 = self._masked_pair(rng, extra=6)
        pred1 = x1[:, 0, :]
        target1 = rng.normal(size=pred1.shape) * mask1
        pred2 = np.zeros(mask2.shape)
        pred2[:, : pred1.shape[1]] = pred1
        target2 = np.zeros(mask2.shape)
        target2[:, : target1.shape[1]] = target1
        l1, g1 = masked_mse_loss(pred1, target1, mask1)
        l2, g2 = masked_mse_loss(pred2, target2, mask2)
        assert l1 == l2
        assert np.array_equal(g1, g2[:, : g1.shape[1]])


class TestDropout:
    def test_eval_mode_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 5))
        y, keep = dropout_forward(x, 0.5, rng=None)
        assert keep is None
        np.testing.assert_array_equal(y, x)

    def test_rate_zero_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 5))
        y, keep = dropout_forward(x, 0.0, rng=rng)
        assert keep is None
        np.testing.assert_array_equal(y, x)

    def test_rate_validation(self, rng):
        x = np.ones((1, 1, 1))
        with pytest.raises(ValidationError):
            dropout_forward(x, 1.0, rng=rng)
        with pytest.raises(ValidationError):
            dropout_forward(x, -0.1, rng=rng)

    def test_survivor_statistics(self):
        # law of large numbers over 1e6 elements
        rng = np.random.default_rng(0)
        x = np.ones((1, 4, 250_000))
        y, keep = dropout_forward(x, 0.3, rng=rng)
        assert abs(keep.mean() - 0.7) < 0.005
        assert abs(y.mean() - 1.0) < 0.01  # inverted scaling preserves expectation

    def test_backward_reuses_keep_pattern(self, rng):
        x = rng.normal(size=(2, 3, 8))
        y, keep = dropout_forward(x, 0.5, rng=rng)
        go = rng.normal(size=x.shape)
        gx = dropout_backward(go, keep, 0.5)
        np.testing.assert_array_equal(gx == 0.0, ~keep | (go == 0.0))
        np.testing.assert_allclose(gx[keep], go[keep] * 2.0, rtol=1e-15)


class TestBatchNorm:
    def test_normalizes_valid_positions(self, rng):
        x = rng.normal(loc=10.0, scale=50.0, size=(4, 3, 30))
        mask = np.zeros((4, 30), dtype=bool)
        for i, t in enumerate((30, 25, 18, 12)):
            mask[i, :t] = True
        out, _ = batchnorm_forward(
            x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), mask, training=True
        )
        bs, ls = np.nonzero(mask)
        valid = out[bs, :, ls]
        assert np.abs(valid.mean(axis=0)).max() < 1e-5
        assert np.abs(valid.var(axis=0) - 1.0).max() < 1e-5

    def test_padding_exactly_zero(self, rng):
        x = rng.normal(size=(2, 3, 10))
        mask = np.zeros((2, 10), dtype=bool)
        mask[:, :6] = True
        gamma, beta = rng.uniform(0.5, 2.0, 3), rng.normal(size=3)
        out, _ = batchnorm_forward(x, gamma, beta, np.zeros(3), np.ones(3), mask, training=True)
        assert np.all(out[:, :, 6:] == 0.0)
        out_eval, cache = batchnorm_forward(
            x, gamma, beta, np.zeros(3), np.ones(3), mask, training=False
        )
        assert cache is None
        assert np.all(out_eval[:, :, 6:] == 0.0)

    def test_running_stats_update(self, rng):
        x = rng.normal(loc=3.0, scale=2.0, size=(2, 3, 20))
        mask = np.ones((2, 20), dtype=bool)
        rm, rv = np.zeros(3), np.ones(3)
        bs, ls = np.nonzero(mask)
        mu = x[bs, :, ls].mean(axis=0)
        var = x[bs, :, ls].var(axis=0)
        batchnorm_forward(x, np.ones(3), np.zeros(3), rm, rv, mask, training=True)
        np.testing.assert_allclose(rm, 0.1 * mu, rtol=1e-12)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * var, rtol=1e-12)

    def test_eval_uses_running_stats(self, rng):
        x = rng.normal(size=(1, 2, 5))
        mask = np.ones((1, 5), dtype=bool)
        rm = np.array([1.0, -1.0])
        rv = np.array([4.0, 0.25])
        out, _ = batchnorm_forward(
            x, np.ones(2), np.zeros(2), rm, rv, mask, training=False
        )
        expected = (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5)
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_empty_mask_rejected(self, rng):
        x = rng.normal(size=(1, 2, 4))
        mask = np.zeros((1, 4), dtype=bool)
        with pytest.raises(ValidationError):
            batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), mask, True)


class TestMaskedLoss:
    def test_single_element_oracle(self):
        loss, grad = masked_mse_loss(
            np.array([[3.0]]), np.array([[1.0]]), np.array([[True]])
        )
        assert loss == 4.0
        np.testing.assert_array_equal(grad, [[4.0]])

    def test_mean_over_valid_count(self):
        pred = np.array([[3.0, 7.0]])
        target = np.array([[1.0, 7.0]])
        loss, grad = masked_mse_loss(pred, target, np.ones((1, 2), dtype=bool))
        assert loss == 2.0
        np.testing.assert_array_equal(grad, [[2.0, 0.0]])

    def test_masked_positions_ignored(self):
        pred = np.array([[3.0, 100.0]])
        target = np.array([[1.0, 0.0]])
        loss, grad = masked_mse_loss(pred, target, np.array([[True, False]]))
        assert loss == 4.0
        np.testing.assert_array_equal(grad, [[4.0, 0.0]])

    def test_empty_mask_rejected(self):
        with pytest.raises(ValidationError):
            masked_mse_loss(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3), dtype=bool))


class TestCheckFinite:
    def test_passes_on_finite(self):
        check_finite("ok", np.zeros(3), np.ones((2, 2)))

    def test_raises_on_nan_and_inf(self):
        with pytest.raises(NumericsError, match="loss"):
            check_finite("loss", np.array([1.0, np.nan]))
        with pytest.raises(NumericsError):
            check_finite("grad", np.array([np.inf]))
