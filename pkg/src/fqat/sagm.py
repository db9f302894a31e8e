"""Dual-gradient sharpness-aware steps over quantized parameters.

Each step evaluates the same batch twice: once at the current quantized
point and once at a perturbed-then-contracted point
theta' = theta + (rho/||g|| - alpha) * g.  The weight update averages the
two gradients; scale gradients from both passes are handed to the freezing
controller untouched.  theta is snapshot-restored around the second pass so
the caller always sees the exact pre-step weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StaleGradientError(Exception):
    """Weights changed between gradient computation and the update."""


@dataclass(frozen=True)
class SagmConfig:
    rho: float = 0.05
    alpha: float = 0.001

    def __post_init__(self):
        if self.rho < 0 or self.alpha < 0:
            raise ValueError("rho and alpha must be non-negative")


@dataclass
class DualGradients:
    loss_va: float
    loss_flat: float
    theta_grad_va: np.ndarray
    theta_grad_flat: np.ndarray
    scale_grads_va: dict[str, float]
    scale_grads_flat: dict[str, float]
    grad_norm: float
    eps_norm: float
    zero_grad: bool                 # first-pass gradient was exactly zero
    theta_version: int
    batch_checksum: float

    @property
    def theta_grad(self) -> np.ndarray:
        return 0.5 * (self.theta_grad_va + self.theta_grad_flat)


def _checksum(X: np.ndarray, y: np.ndarray) -> float:
    return float(np.asarray(X, dtype=np.float64).sum() + np.asarray(y).sum())


def _finite(loss: float, which: str) -> float:
    if not np.isfinite(loss):
        raise ValueError(f"non-finite {which} loss: {loss}")
    return loss


def compute_dual_gradients(net, X: np.ndarray, y: np.ndarray,
                           config: SagmConfig) -> DualGradients:
    """Run both passes on one batch and return everything the updates need."""
    loss_va = _finite(net.loss(X, y), "pass-1")
    net.backward()
    g_va = net.flat_grad()
    s_va = net.scale_grad_values()
    norm = float(np.linalg.norm(g_va))
    zero_grad = norm == 0.0
    if zero_grad:
        coeff = 0.0
        eps_norm = 0.0
    else:
        coeff = config.rho / norm - config.alpha
        eps_norm = float(np.linalg.norm((config.rho / norm) * g_va))
    if coeff != 0.0:
        snapshot = net.get_theta()
        net.add_to_flat_theta(coeff * g_va)
        loss_flat = _finite(net.loss(X, y), "pass-2")
        net.backward()
        g_flat = net.flat_grad()
        s_flat = net.scale_grad_values()
        net.set_theta(snapshot)
    else:
        # theta' coincides with theta, so the second pass needs no perturbation
        loss_flat = _finite(net.loss(X, y), "pass-2")
        net.backward()
        g_flat = net.flat_grad()
        s_flat = net.scale_grad_values()
    return DualGradients(
        loss_va=loss_va,
        loss_flat=loss_flat,
        theta_grad_va=g_va,
        theta_grad_flat=g_flat,
        scale_grads_va=s_va,
        scale_grads_flat=s_flat,
        grad_norm=norm,
        eps_norm=eps_norm,
        zero_grad=zero_grad,
        theta_version=net.theta_version,
        batch_checksum=_checksum(X, y),
    )


def apply_theta_update(net, duals: DualGradients, lr: float,
                       weight_decay: float = 0.0) -> None:
    """theta <- theta - lr * (mean of both gradients + weight decay)."""
    if net.theta_version != duals.theta_version:
        raise StaleGradientError(
            f"gradients were computed at theta version {duals.theta_version}, "
            f"net is now at {net.theta_version}")
    g = duals.theta_grad
    if weight_decay:
        g = g + weight_decay * net.flat_theta()
    net.add_to_flat_theta(-lr * g)


def compute_surrogate_gap(net, X: np.ndarray, y: np.ndarray, rho: float) -> float:
    """h(theta) = L(theta + rho * g/||g||) - L(theta) on one batch.

    The ascent point here omits the -alpha*g contraction; it measures the
    plain worst-case-direction gap.  theta is restored before returning.
    """
    if rho == 0.0:
        return 0.0
    loss0 = net.loss(X, y)
    net.backward()
    g = net.flat_grad()
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        return 0.0
    snapshot = net.get_theta()
    net.add_to_flat_theta((rho / norm) * g)
    loss1 = net.loss(X, y)
    net.set_theta(snapshot)
    return float(loss1 - loss0)


def vanilla_step(net, X: np.ndarray, y: np.ndarray, lr: float,
                 weight_decay: float = 0.0) -> tuple[float, dict[str, float]]:
    """Single-pass step: theta <- theta - lr*(g + wd*theta); scale grads returned."""
    loss = net.loss(X, y)
    net.backward()
    g = net.flat_grad()
    if weight_decay:
        g = g + weight_decay * net.flat_theta()
    s = net.scale_grad_values()
    net.add_to_flat_theta(-lr * g)
    return float(loss), s
