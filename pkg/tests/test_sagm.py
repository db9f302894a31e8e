import numpy as np
import pytest

from fqat.model import DenseNet, NetConfig
from fqat.sagm import (DualGradients, SagmConfig, StaleGradientError,
                       apply_theta_update, compute_dual_gradients,
                       compute_surrogate_gap, vanilla_step)


class QuadraticNet:
    """L(theta) = 0.5||theta||^2 with exact gradients.

    Implements the same stepping protocol as the dense net, so the two-pass
    logic can be checked against closed forms.
    """

    def __init__(self, theta):
        self.theta = np.array(theta, dtype=np.float64)
        self.theta_version = 0
        self._grad = np.zeros_like(self.theta)

    def loss(self, X, y):
        return float(0.5 * np.sum(self.theta**2))

    def backward(self):
        self._grad = self.theta.copy()

    def flat_grad(self):
        return self._grad.copy()

    def scale_grad_values(self):
        return {}

    def flat_theta(self):
        return self.theta.copy()

    def get_theta(self):
        return self.theta.copy()

    def set_theta(self, snap):
        self.theta = np.array(snap, dtype=np.float64)
        self.theta_version += 1

    def add_to_flat_theta(self, d):
        self.theta = self.theta + d
        self.theta_version += 1


class ConstantLossNet(QuadraticNet):
    def loss(self, X, y):
        return 1.25

    def backward(self):
        self._grad = np.zeros_like(self.theta)


# stub nets ignore their batch, but the two-pass driver still checksums it
DUMMY = (np.zeros((1, 1)), np.zeros(1, dtype=np.int64))


def quant_net(seed=0, bits=3):
    return DenseNet(NetConfig(in_dim=4, hidden=(8, 8), n_classes=3, bits=bits),
                    seed=seed)


def batch(seed=0, n=16, dim=4, classes=3):
    rng = np.random.default_rng(seed)
    return np.abs(rng.normal(size=(n, dim))) + 0.2, rng.integers(0, classes, size=n)


def test_config_rejects_negative_values():
    with pytest.raises(ValueError):
        SagmConfig(rho=-0.1)
    with pytest.raises(ValueError):
        SagmConfig(alpha=-1e-9)


def test_perturbation_norm_equals_rho():
    net = quant_net()
    X, y = batch()
    for rho in (0.05, 0.5, 2.0):
        duals = compute_dual_gradients(net, X, y, SagmConfig(rho=rho, alpha=0.001))
        assert abs(duals.eps_norm - rho) < 1e-10
        assert not duals.zero_grad


def test_theta_and_scales_restored_bit_exact():
    net = quant_net()
    X, y = batch()
    theta0 = net.flat_theta()
    scales0 = net.get_scale_values()
    compute_dual_gradients(net, X, y, SagmConfig(rho=0.1, alpha=0.01))
    assert np.array_equal(net.flat_theta(), theta0)
    assert net.get_scale_values() == scales0


def test_rho_zero_alpha_zero_reduces_to_vanilla():
    net_a = quant_net(seed=7)
    net_b = quant_net(seed=7)
    X, y = batch(seed=1)
    assert np.array_equal(net_a.flat_theta(), net_b.flat_theta())

    duals = compute_dual_gradients(net_a, X, y, SagmConfig(rho=0.0, alpha=0.0))
    assert duals.loss_flat == duals.loss_va
    assert np.array_equal(duals.theta_grad_flat, duals.theta_grad_va)
    assert np.array_equal(duals.theta_grad, duals.theta_grad_va)
    assert duals.scale_grads_flat == duals.scale_grads_va
    apply_theta_update(net_a, duals, lr=0.05)

    vanilla_step(net_b, X, y, lr=0.05)
    assert np.array_equal(net_a.flat_theta(), net_b.flat_theta())


def test_dual_gradients_match_quadratic_closed_form():
    theta0 = np.array([3.0, -4.0])  # norm 5
    net = QuadraticNet(theta0)
    rho, alpha = 0.5, 0.1
    duals = compute_dual_gradients(net, *DUMMY, SagmConfig(rho=rho, alpha=alpha))
    assert duals.loss_va == pytest.approx(12.5)
    assert duals.grad_norm == pytest.approx(5.0)
    # ascent point theta' = theta * (1 + rho/||g|| - alpha)
    factor = 1.0 + rho / 5.0 - alpha
    assert np.allclose(duals.theta_grad_flat, theta0 * factor, atol=1e-12)
    assert duals.loss_flat == pytest.approx(0.5 * 25.0 * factor**2)
    assert np.allclose(duals.theta_grad, 0.5 * theta0 * (1.0 + factor), atol=1e-12)
    assert np.array_equal(net.theta, theta0)


def test_apply_theta_update_arithmetic():
    net = QuadraticNet([3.0, -4.0])
    duals = compute_dual_gradients(net, *DUMMY, SagmConfig(rho=0.5, alpha=0.1))
    lr, wd = 0.2, 0.01
    expected = net.theta - lr * (duals.theta_grad + wd * net.theta)
    apply_theta_update(net, duals, lr=lr, weight_decay=wd)
    assert np.array_equal(net.theta, expected)


def test_apply_with_lr_zero_is_identity():
    net = quant_net()
    X, y = batch()
    theta0 = net.flat_theta()
    duals = compute_dual_gradients(net, X, y, SagmConfig())
    apply_theta_update(net, duals, lr=0.0)
    assert np.array_equal(net.flat_theta(), theta0)


def test_stale_gradients_rejected():
    net = quant_net()
    X, y = batch()
    duals = compute_dual_gradients(net, X, y, SagmConfig())
    net.add_to_flat_theta(np.full(net.flat_theta().shape, 1e-9))
    with pytest.raises(StaleGradientError):
        apply_theta_update(net, duals, lr=0.05)


def test_zero_gradient_batch_is_flagged():
    net = ConstantLossNet([1.0, 2.0])
    duals = compute_dual_gradients(net, *DUMMY, SagmConfig(rho=0.5, alpha=0.1))
    assert duals.zero_grad
    assert duals.eps_norm == 0.0
    assert duals.loss_flat == duals.loss_va
    assert np.array_equal(duals.theta_grad_flat, np.zeros(2))
    assert np.array_equal(net.theta, np.array([1.0, 2.0]))


def test_nonfinite_loss_raises():
    class BadNet(QuadraticNet):
        def loss(self, X, y):
            return float("inf")

    with pytest.raises(ValueError, match="pass-1"):
        compute_dual_gradients(BadNet([1.0]), *DUMMY, SagmConfig())


def test_surrogate_gap_quadratic_closed_form():
    # L = 0.5||theta||^2: ascent along g/||g|| grows the norm by exactly rho,
    # so the gap is rho*||theta|| + rho^2/2
    net = QuadraticNet([3.0, -4.0])
    for rho in (0.1, 0.5, 1.0):
        gap = compute_surrogate_gap(net, None, None, rho)
        assert gap == pytest.approx(rho * 5.0 + rho**2 / 2.0, abs=1e-12)
        assert np.array_equal(net.theta, np.array([3.0, -4.0]))
    assert compute_surrogate_gap(net, None, None, 0.0) == 0.0


def test_surrogate_gap_zero_gradient():
    net = ConstantLossNet([1.0, 2.0])
    assert compute_surrogate_gap(net, None, None, 0.3) == 0.0


def test_surrogate_gap_restores_real_net():
    net = quant_net()
    X, y = batch()
    theta0 = net.flat_theta()
    gap = compute_surrogate_gap(net, X, y, 0.25)
    assert np.isfinite(gap)
    assert np.array_equal(net.flat_theta(), theta0)


def test_batch_checksum_recorded():
    net = quant_net()
    X, y = batch()
    duals = compute_dual_gradients(net, X, y, SagmConfig())
    assert duals.batch_checksum == float(X.sum() + y.sum())


def test_descends_quadratic_bowl():
    net = QuadraticNet([4.0, -3.0])
    cfg = SagmConfig(rho=0.1, alpha=0.01)
    losses = [net.loss(None, None)]
    for _ in range(30):
        duals = compute_dual_gradients(net, *DUMMY, cfg)
        apply_theta_update(net, duals, lr=0.1)
        losses.append(net.loss(None, None))
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.05 * losses[0]


def test_vanilla_step_arithmetic():
    net = QuadraticNet([2.0, -1.0])
    loss, sgrads = vanilla_step(net, None, None, lr=0.1)
    assert loss == pytest.approx(2.5)
    assert sgrads == {}
    assert np.allclose(net.theta, np.array([1.8, -0.9]), atol=1e-15)
