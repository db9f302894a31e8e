"""Symmetric uniform fake quantization with a learnable scale factor.

All quantizers here share one convention: a value v is divided by a positive
scale s, clipped to the integer range [l, u], rounded half-to-even, and
rescaled by s.  Gradients flow through the rounding via the straight-through
estimator; the scale factor receives the LSQ-style piecewise gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WEIGHT = "weight"
ACTIVATION = "activation"

SCALE_FLOOR = 1e-8

# MSE range-estimation search grid: candidate scales are c * max|v| / u for
# c on this grid, smallest candidate first so argmin ties resolve downward.
MSE_GRID = np.linspace(0.1, 1.2, 100)


def bounds(bits: int, kind: str) -> tuple[int, int]:
    """Integer clip bounds (l, u) for b-bit quantization of the given kind."""
    if bits < 2:
        raise ValueError(f"bits must be >= 2, got {bits}")
    if kind == ACTIVATION:
        return 0, 2**bits - 1
    if kind == WEIGHT:
        return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    raise ValueError(f"unknown quantizer kind {kind!r}")


@dataclass(frozen=True)
class QuantSpec:
    """Bit-width, tensor kind, and the derived integer clip bounds."""

    bits: int
    kind: str
    l: int
    u: int

    @classmethod
    def create(cls, bits: int, kind: str) -> "QuantSpec":
        l, u = bounds(bits, kind)
        return cls(bits=bits, kind=kind, l=l, u=u)


@dataclass
class ScaleFactor:
    """One learnable scalar step size; `id` is stable across a run.

    `degenerate` marks scales produced by mse_init_scale on all-zero input.
    """

    value: float
    spec: QuantSpec
    id: str
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (self.value > 0):
            raise ValueError(f"scale {self.id!r} must be positive, got {self.value}")
        self.value = float(self.value)


def _check_finite(v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite values in {what}")
    return v


def fake_quantize(v: np.ndarray, s: ScaleFactor) -> np.ndarray:
    """s * round(clip(v/s, l, u)); rounding ties go to nearest even."""
    v = _check_finite(v, "fake_quantize input")
    q = np.clip(v / s.value, s.spec.l, s.spec.u)
    return s.value * np.round(q)


def ste_mask(v: np.ndarray, s: ScaleFactor) -> np.ndarray:
    """Indicator of l <= v/s <= u (boundaries inclusive), as float64."""
    q = np.asarray(v, dtype=np.float64) / s.value
    return ((q >= s.spec.l) & (q <= s.spec.u)).astype(np.float64)


def ste_input_grad(upstream: np.ndarray, v: np.ndarray, s: ScaleFactor) -> np.ndarray:
    """Straight-through gradient w.r.t. v: upstream masked by the clip range."""
    upstream = np.asarray(upstream, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if upstream.shape != v.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match input shape {v.shape}"
        )
    return upstream * ste_mask(v, s)


def scale_grad(
    upstream: np.ndarray, v: np.ndarray, s: ScaleFactor, lsq_norm: bool = False
) -> float:
    """Accumulated LSQ gradient of fake_quantize w.r.t. the scale.

    Per element: d = l or u outside the clip range, round(v/s) - v/s inside.
    With lsq_norm the sum is divided by sqrt(N*u) (off by default so disorder
    statistics stay comparable across layers of different widths).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if upstream.shape != v.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match input shape {v.shape}"
        )
    q = v / s.value
    inside = (q >= s.spec.l) & (q <= s.spec.u)
    d = np.where(inside, np.round(q) - q, np.clip(q, s.spec.l, s.spec.u))
    g = float(np.sum(upstream * d))
    if lsq_norm:
        g /= float(np.sqrt(v.size * s.spec.u))
    return g


def mse_init_scale(values: np.ndarray, spec: QuantSpec, id: str = "") -> ScaleFactor:
    """Pick the scale minimizing mean squared quantization error on a grid.

    Candidates are c * max|v| / u for 100 evenly spaced c in [0.1, 1.2];
    ties break toward the smaller scale.  All-zero input falls back to the
    positivity floor and flags the result as degenerate.
    """
    values = _check_finite(values, "mse_init_scale input")
    if values.size == 0:
        raise ValueError("mse_init_scale requires non-empty values")
    vmax = float(np.max(np.abs(values)))
    if vmax == 0.0:
        return ScaleFactor(value=SCALE_FLOOR, spec=spec, id=id, degenerate=True)
    best_s, best_err = None, np.inf
    flat = values.ravel()
    for c in MSE_GRID:
        s_c = float(c) * vmax / spec.u
        q = s_c * np.round(np.clip(flat / s_c, spec.l, spec.u))
        err = float(np.mean((flat - q) ** 2))
        if err < best_err:
            best_err, best_s = err, s_c
    return ScaleFactor(value=best_s, spec=spec, id=id)
