"""Loss-landscape diagnostics: normalized slices and a sharpness proxy.

Slice directions are filter-normalized: each row of every weight matrix is
rescaled to that row's norm in the current weights, and bias entries are
zeroed, so slices are comparable across nets of different scale.  The
sharpness proxy is the worst loss increase over random unit directions at a
fixed perturbation radius; it is this artifact's scalar stand-in for a full
surface plot and is labeled as such in outputs.  Both probes restore the
model bit-exactly.

Any object with flat_theta / set_flat_theta / loss / param_blocks works as
the model; quantized nets are probed through their quantized forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProbeConfig:
    n_points: int = 21
    radius: float = 0.5
    n_directions: int = 8
    rho_probe: float = 0.1

    def __post_init__(self):
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError("n_points must be odd and >= 3")
        if self.radius <= 0 or self.rho_probe <= 0:
            raise ValueError("radius and rho_probe must be positive")
        if self.n_directions < 1:
            raise ValueError("n_directions must be >= 1")


@dataclass
class SliceResult:
    coords: np.ndarray          # grid offsets along each direction
    losses: np.ndarray          # (n,) for 1-D, (n, n) for 2-D
    dims: int
    flagged: tuple[str, ...]    # zero-norm blocks whose entries were zeroed


def filter_normalized_direction(net, rng) -> tuple[np.ndarray, list[str]]:
    theta = net.flat_theta()
    d = rng.standard_normal(theta.shape[0])
    flagged = []
    for name, start, end, shape, kind in net.param_blocks():
        if kind != "weight":
            d[start:end] = 0.0
            continue
        block = d[start:end].reshape(shape)
        ref = theta[start:end].reshape(shape)
        for i in range(shape[0]):
            dn = np.linalg.norm(block[i])
            wn = np.linalg.norm(ref[i])
            if dn == 0.0 or wn == 0.0:
                block[i] = 0.0
                flagged.append(f"{name}[{i}]")
            else:
                block[i] *= wn / dn
        d[start:end] = block.ravel()
    return d, flagged


def loss_slice(net, X, y, config: ProbeConfig, dims: int = 1,
               seed: int = 0) -> SliceResult:
    """Losses on a symmetric grid around the current weights.

    The grid center is the unperturbed model: the middle coordinate is
    forced to exactly 0.0 and the weights are restored afterwards.
    """
    if dims not in (1, 2):
        raise ValueError("dims must be 1 or 2")
    rng = np.random.default_rng(seed)
    theta0 = net.flat_theta()
    dirs, flagged = [], []
    for _ in range(dims):
        d, fl = filter_normalized_direction(net, rng)
        dirs.append(d)
        flagged.extend(fl)
    coords = np.linspace(-config.radius, config.radius, config.n_points)
    coords[config.n_points // 2] = 0.0
    try:
        if dims == 1:
            losses = np.empty(config.n_points)
            for i, c in enumerate(coords):
                net.set_flat_theta(theta0 + c * dirs[0])
                losses[i] = net.loss(X, y)
        else:
            losses = np.empty((config.n_points, config.n_points))
            for i, c1 in enumerate(coords):
                for j, c2 in enumerate(coords):
                    net.set_flat_theta(theta0 + c1 * dirs[0] + c2 * dirs[1])
                    losses[i, j] = net.loss(X, y)
    finally:
        net.set_flat_theta(theta0)
    return SliceResult(coords=coords, losses=losses, dims=dims,
                       flagged=tuple(flagged))


def sharpness_proxy(net, X, y, config: ProbeConfig, seed: int = 0) -> float:
    """max over unit directions u of L(theta + rho_probe * u) - L(theta)."""
    rng = np.random.default_rng(seed)
    theta0 = net.flat_theta()
    base = net.loss(X, y)
    worst = -np.inf
    try:
        for _ in range(config.n_directions):
            u = rng.standard_normal(theta0.shape[0])
            norm = np.linalg.norm(u)
            if norm == 0.0:
                continue
            net.set_flat_theta(theta0 + config.rho_probe * (u / norm))
            worst = max(worst, net.loss(X, y) - base)
    finally:
        net.set_flat_theta(theta0)
    return float(worst)


def write_slice_csv(result: SliceResult, path) -> None:
    """Grid as CSV rows (c1, c2, loss); 1-D slices carry c2 = 0.0."""
    lines = ["c1,c2,loss"]
    if result.dims == 1:
        for c, v in zip(result.coords, result.losses):
            lines.append(f"{float(c)!r},0.0,{float(v)!r}")
    else:
        for i, c1 in enumerate(result.coords):
            for j, c2 in enumerate(result.coords):
                lines.append(
                    f"{float(c1)!r},{float(c2)!r},{float(result.losses[i, j])!r}")
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise OSError(f"cannot write slice CSV to {path}: {e}") from e
