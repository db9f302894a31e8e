import numpy as np
import pytest

from fqat.quantizer import (ACTIVATION, MSE_GRID, SCALE_FLOOR, WEIGHT,
                            QuantSpec, ScaleFactor, bounds, fake_quantize,
                            mse_init_scale, scale_grad, ste_input_grad,
                            ste_mask)


def sf(value, bits, kind):
    return ScaleFactor(value, QuantSpec.create(bits, kind), "t")


def test_bounds_hand_values():
    assert bounds(3, ACTIVATION) == (0, 7)
    assert bounds(3, WEIGHT) == (-4, 3)
    assert bounds(8, WEIGHT) == (-128, 127)
    assert bounds(2, ACTIVATION) == (0, 3)
    assert bounds(2, WEIGHT) == (-2, 1)


def test_bounds_rejects_bad_args():
    with pytest.raises(ValueError):
        bounds(1, WEIGHT)
    with pytest.raises(ValueError):
        bounds(4, "float")


def test_fake_quantize_hand_values():
    s = sf(0.1, 3, WEIGHT)
    # 0.37/0.1 = 3.7 clips to u=3
    assert fake_quantize(np.array(0.37), s) == pytest.approx(0.3)
    assert fake_quantize(np.array(0.0), s) == 0.0
    # negative input on an unsigned grid clips to zero
    sa = sf(0.1, 3, ACTIVATION)
    assert fake_quantize(np.array(-1.0), sa) == 0.0


def test_fake_quantize_ties_to_even():
    s = sf(1.0, 8, WEIGHT)
    v = np.array([0.5, 1.5, 2.5, 3.5, -0.5, -1.5, -2.5])
    assert np.array_equal(fake_quantize(v, s),
                          np.array([0.0, 2.0, 2.0, 4.0, -0.0, -2.0, -2.0]))


def test_fake_quantize_rejects_non_finite():
    s = sf(0.5, 4, WEIGHT)
    with pytest.raises(ValueError):
        fake_quantize(np.array([1.0, np.nan]), s)
    with pytest.raises(ValueError):
        fake_quantize(np.array([np.inf]), s)


def test_scale_factor_must_be_positive():
    spec = QuantSpec.create(4, WEIGHT)
    with pytest.raises(ValueError):
        ScaleFactor(0.0, spec, "bad")
    with pytest.raises(ValueError):
        ScaleFactor(-0.1, spec, "bad")


def test_quantizer_properties_randomized():
    # idempotence, range, lattice membership, monotonicity across widths/kinds
    rng = np.random.default_rng(0)
    for bits in (2, 3, 4, 5, 8):
        for kind in (WEIGHT, ACTIVATION):
            s = sf(float(rng.uniform(0.01, 2.0)), bits, kind)
            v = rng.normal(0.0, 3.0, size=2000)
            q = fake_quantize(v, s)
            assert np.array_equal(fake_quantize(q, s), q)
            assert q.min() >= s.spec.l * s.value - 1e-12
            assert q.max() <= s.spec.u * s.value + 1e-12
            ints = q / s.value
            assert np.allclose(ints, np.round(ints), atol=1e-9)
            vs = np.sort(v)
            qs = fake_quantize(vs, s)
            assert np.all(np.diff(qs) >= 0.0)


def test_ste_input_grad_hand_values():
    s = sf(0.1, 3, WEIGHT)
    up = np.array([1.0, 0.5, 1.0])
    v = np.array([0.37, 0.20, 0.30])  # v/s = 3.7 (out), 2.0 (in), 3.0 (boundary)
    assert np.array_equal(ste_input_grad(up, v, s), np.array([0.0, 0.5, 1.0]))


def test_ste_input_grad_shape_mismatch():
    s = sf(0.1, 3, WEIGHT)
    with pytest.raises(ValueError):
        ste_input_grad(np.ones(3), np.ones(4), s)


def test_ste_mask_boundaries_inclusive():
    s = sf(1.0, 3, WEIGHT)  # l=-4, u=3
    v = np.array([-4.0, 3.0, -4.0001, 3.0001, 0.0])
    assert np.array_equal(ste_mask(v, s), np.array([1.0, 1.0, 0.0, 0.0, 1.0]))


def test_scale_grad_hand_values():
    s = sf(0.1, 3, WEIGHT)
    # outside the range the gradient is the clip bound
    assert scale_grad(np.array(1.0), np.array(0.37), s) == pytest.approx(3.0)
    assert scale_grad(np.array(1.0), np.array(-1.0), s) == pytest.approx(-4.0)
    # inside: round(v/s) - v/s, here round(2.5) = 2 under ties-to-even
    assert scale_grad(np.array(1.0), np.array(0.25), s) == pytest.approx(-0.5)
    assert scale_grad(np.array(1.0), np.array(0.0), s) == 0.0


def test_scale_grad_accumulates_and_weights_upstream():
    s = sf(0.1, 3, WEIGHT)
    v = np.array([0.37, 0.25])
    up = np.array([2.0, -1.0])
    assert scale_grad(up, v, s) == pytest.approx(2.0 * 3.0 + (-1.0) * (-0.5))


def test_scale_grad_lsq_normalization():
    s = sf(0.1, 3, WEIGHT)
    v = np.array([0.37, 0.25, 0.11, -0.2])
    up = np.ones(4)
    raw = scale_grad(up, v, s)
    normed = scale_grad(up, v, s, lsq_norm=True)
    assert normed == pytest.approx(raw / np.sqrt(v.size * s.spec.u))


def _surrogate_sum(v, s_val, spec, residual):
    # straight-through view of fake_quantize: rounding residual held fixed,
    # so the finite difference probes exactly what the backward pass models
    z = np.clip(v / s_val, spec.l, spec.u)
    return np.sum(s_val * (z + residual))


def test_scale_grad_matches_finite_difference_of_surrogate():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 200:
        bits = int(rng.choice([2, 3, 4, 8]))
        kind = WEIGHT if rng.random() < 0.5 else ACTIVATION
        spec = QuantSpec.create(bits, kind)
        s_val = float(rng.uniform(0.05, 1.5))
        v = rng.normal(0.0, 2.0, size=16)
        z = v / s_val
        # stay away from clip bounds and rounding ties where the piecewise
        # gradient jumps
        frac = np.abs(np.abs(z - np.floor(z)) - 0.5)
        if (np.abs(z - spec.l) < 1e-3).any() or (np.abs(z - spec.u) < 1e-3).any() \
                or (frac < 1e-3).any():
            continue
        s = ScaleFactor(s_val, spec, "fd")
        inside = (z >= spec.l) & (z <= spec.u)
        residual = np.where(inside, np.round(z) - z, 0.0)
        # the surrogate is piecewise linear in s, so any h that keeps every
        # element on its piece gives an exact central difference
        h = 1e-6 * s_val
        fd = (_surrogate_sum(v, s_val + h, spec, residual)
              - _surrogate_sum(v, s_val - h, spec, residual)) / (2 * h)
        got = scale_grad(np.ones_like(v), v, s)
        assert got == pytest.approx(fd, abs=1e-6)
        checked += 1


def test_mse_init_matches_bruteforce_grid():
    rng = np.random.default_rng(2)
    spec = QuantSpec.create(3, WEIGHT)
    for _ in range(20):
        v = rng.normal(0.0, 1.0, size=256)
        got = mse_init_scale(v, spec)
        best_s, best_err = None, np.inf
        for c in MSE_GRID:
            s_c = float(c) * float(np.max(np.abs(v))) / spec.u
            q = s_c * np.round(np.clip(v / s_c, spec.l, spec.u))
            err = float(np.mean((v - q) ** 2))
            if err < best_err:
                best_err, best_s = err, s_c
        assert got.value == best_s
        assert not got.degenerate


def test_mse_init_exactly_representable_values():
    spec = QuantSpec.create(3, WEIGHT)
    k = 0.375
    v = np.array([spec.u * k])
    got = mse_init_scale(v, spec)
    q = fake_quantize(v, got)
    assert float(np.mean((v - q) ** 2)) < 1e-25


def test_mse_init_degenerate_and_empty():
    spec = QuantSpec.create(3, WEIGHT)
    got = mse_init_scale(np.zeros(8), spec)
    assert got.value == SCALE_FLOOR
    assert got.degenerate
    with pytest.raises(ValueError):
        mse_init_scale(np.array([]), spec)
