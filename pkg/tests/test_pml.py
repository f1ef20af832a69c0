"""Tests for the absorbing profile, coordinate stretching, and kernels."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp

from pmlbie.errors import ParameterError
from pmlbie.oracle import _mp_sigma, _mp_stretch1, highprec_hankel
from pmlbie.pml import (
    PmlProfile,
    green_helmholtz,
    green_laplace,
    rho,
    sigma1,
    stretch,
)
from pmlbie.special_fn import DomainError, hankel1


@pytest.fixture
def prof():
    return PmlProfile(a1=1.0, thickness=1.0, strength=2.0)


class TestProfile:
    def test_validation(self):
        with pytest.raises(ParameterError):
            PmlProfile(a1=0.0, thickness=1.0, strength=1.0)
        with pytest.raises(ParameterError):
            PmlProfile(a1=1.0, thickness=-1.0, strength=1.0)
        with pytest.raises(ParameterError):
            PmlProfile(a1=1.0, thickness=1.0, strength=-0.1)
        with pytest.raises(ParameterError):
            PmlProfile(a1=1.0, thickness=1.0, strength=1.0, order=1)

    def test_zero_inside_physical_box(self, prof):
        assert prof.sigma(0.0) == 0.0
        assert prof.sigma(0.5) == 0.0
        assert prof.sigma(1.0) == 0.0
        assert prof.sigma(-0.99) == 0.0

    def test_peak_at_outer_edge(self, prof):
        # the ramp tops out at 2 * strength * thickness
        assert prof.sigma(prof.outer_edge) == pytest.approx(4.0, abs=1e-15)
        assert prof.sigma(5.0) == pytest.approx(4.0, abs=1e-15)

    def test_midpoint_and_point_symmetry(self, prof):
        mid = prof.a1 + 0.5 * prof.thickness
        assert prof.sigma(mid) == pytest.approx(2.0, abs=1e-14)
        for d in (0.1, 0.33, 0.49):
            s_plus = prof.sigma(mid + d)
            s_minus = prof.sigma(mid - d)
            assert s_plus + s_minus == pytest.approx(4.0, abs=1e-13)

    def test_even_symmetry(self, prof):
        xs = np.linspace(0.0, 2.5, 41)
        assert np.allclose(prof.sigma(xs), prof.sigma(-xs), atol=0)

    def test_monotone_on_ramp(self, prof):
        xs = np.linspace(1.0, 2.0, 200)
        s = prof.sigma(xs)
        assert (np.diff(s) >= 0).all()
        assert (s >= 0).all()

    def test_matches_high_precision_mirror(self, prof):
        for x in (1.05, 1.3, 1.5, 1.77, 1.999, 2.0):
            ref = float(_mp_sigma(mp.mpf(x), prof))
            assert prof.sigma(x) == pytest.approx(ref, abs=1e-13)

    def test_smooth_entry_vanishing_derivatives(self, prof):
        # One-sided finite differences of orders 1..3 at the layer
        # entrance shrink like h^(order - k): halving the step must
        # shrink the k-th difference by about 2^(8-k).
        def fd(k, h):
            nodes = prof.a1 + h * np.arange(k + 1)
            coeffs = [(-1) ** (k - i) * math.comb(k, i) for i in range(k + 1)]
            return sum(c * prof.sigma(x) for c, x in zip(coeffs, nodes)) / h**k

        h = 1e-2
        for k in (1, 2, 3):
            ratio = abs(fd(k, h)) / abs(fd(k, h / 2))
            assert ratio == pytest.approx(2 ** (8 - k), rel=0.25)
            assert abs(fd(k, h)) <= 1e-2

    def test_sigma_prime_matches_finite_difference(self, prof):
        e = 1e-7
        for x in (1.2, 1.5, 1.9, -1.3):
            fd = (prof.sigma(x + e) - prof.sigma(x - e)) / (2 * e)
            assert prof.sigma_prime(x) == pytest.approx(fd, rel=1e-6, abs=1e-8)
        assert prof.sigma_prime(0.5) == 0.0
        assert prof.sigma_prime(2.5) == 0.0

    def test_integral_layer_value(self, prof):
        # point symmetry makes the layer integral strength * thickness^2
        assert prof.sigma_integral(prof.outer_edge) == pytest.approx(2.0, abs=1e-13)
        assert prof.layer_integral == 2.0

    def test_integral_odd_and_linear_tail(self, prof):
        for x in (0.7, 1.5, 2.0, 3.1):
            assert prof.sigma_integral(-x) == pytest.approx(
                -prof.sigma_integral(x), abs=1e-14
            )
        assert prof.sigma_integral(3.0) == pytest.approx(2.0 + 4.0 * 1.0, abs=1e-12)

    def test_stretch1_matches_high_precision_mirror(self, prof):
        for x in (0.4, 1.15, 1.5, 1.83, 1.999, 2.0, 2.7, -1.66):
            ref = complex(_mp_stretch1(mp.mpf(x), prof))
            assert abs(prof.stretch1(x) - ref) <= 1e-13


class TestStretch:
    def test_physical_point_unchanged(self, prof):
        out = stretch((0.5, -0.3), prof)
        assert out[0] == 0.5 + 0.0j
        assert out[1] == -0.3 + 0.0j

    def test_outer_edge_accumulation(self, prof):
        out = stretch((prof.outer_edge, 0.0), prof)
        assert out[0].real == pytest.approx(2.0)
        assert out[0].imag == pytest.approx(prof.layer_integral, abs=1e-13)

    def test_antisymmetry(self, prof):
        for x1 in (1.2, 1.7, 2.3):
            plus = stretch((x1, 0.0), prof)[0]
            minus = stretch((-x1, 0.0), prof)[0]
            assert minus.imag == pytest.approx(-plus.imag, abs=1e-14)
            assert minus.real == pytest.approx(-plus.real, abs=1e-14)

    def test_vertical_profile_applies(self, prof):
        vert = PmlProfile(a1=0.5, thickness=0.5, strength=1.0)
        out = stretch((0.2, 0.9), prof, vertical=vert)
        assert out[0] == 0.2 + 0.0j
        assert out[1].imag > 0

    def test_array_of_points(self, prof):
        pts = np.array([[0.1, 0.0], [1.5, 0.2], [-1.5, -0.1]])
        out = stretch(pts, prof)
        assert out.shape == (3, 2)
        assert out[0, 0].imag == 0.0
        assert out[1, 0].imag > 0
        assert out[2, 0].imag < 0


class TestRho:
    def test_identical_points_zero(self, prof):
        z = stretch((1.7, 0.0), prof)
        assert rho(z, z) == 0.0

    def test_euclidean_reduction(self):
        assert rho(
            np.array([0.0 + 0j, 0.0 + 0j]), np.array([3.0 + 0j, 4.0 + 0j])
        ) == pytest.approx(5.0)

    def test_one_point_in_layer(self, prof):
        # x at (a1/2, 0) physical, y at the outer edge on the axis:
        # rho = (a1/2 + thickness) + i * strength * thickness^2
        x = stretch((0.5, 0.0), prof)
        y = stretch((2.0, 0.0), prof)
        r = rho(x, y)
        assert r.real == pytest.approx(1.5, abs=1e-13)
        assert r.imag == pytest.approx(2.0, abs=1e-13)
        assert r.imag > 0

    @settings(max_examples=80, deadline=None)
    @given(
        x1=st.floats(min_value=-2.0, max_value=2.0),
        y1=st.floats(min_value=-2.0, max_value=2.0),
        x2=st.floats(min_value=-1.0, max_value=1.0),
        y2=st.floats(min_value=-1.0, max_value=1.0),
    )
    def test_branch_real_part_nonnegative(self, x1, y1, x2, y2):
        prof = PmlProfile(a1=1.0, thickness=1.0, strength=2.0)
        r = rho(stretch((x1, x2), prof), stretch((y1, y2), prof))
        assert np.real(r) >= 0.0


class TestGreens:
    def test_wave_kernel_physical_reduction(self):
        x = np.array([0.0 + 0j, 0.0 + 0j])
        y = np.array([1.0 + 0j, 0.0 + 0j])
        k = 2 * np.pi
        expected = 0.25j * complex(highprec_hankel(0, k, dps=18))
        assert abs(green_helmholtz(x, y, k) - expected) <= 1e-14

    def test_log_kernel_value(self):
        x = np.array([0.0 + 0j, 0.0 + 0j])
        y = np.array([np.e + 0j, 0.0 + 0j])
        assert green_laplace(x, y) == pytest.approx(-1.0 / (2 * np.pi), abs=1e-15)

    def test_coincident_points_rejected(self):
        z = np.array([0.3 + 0j, 0.1 + 0j])
        with pytest.raises(DomainError):
            green_helmholtz(z, z.copy(), 1.0)
        with pytest.raises(DomainError):
            green_laplace(z, z.copy())

    def test_vanishing_absorption_limit(self):
        # With strength -> 0 the stretched kernel tends to the free-space
        # kernel evaluated at the unstretched points.
        weak = PmlProfile(a1=1.0, thickness=1.0, strength=1e-14)
        x_phys = (0.2, 0.1)
        y_pml = (1.8, -0.3)
        free = 0.25j * hankel1(0, 2 * np.pi * np.hypot(1.6, 0.4))
        val = green_helmholtz(
            stretch(x_phys, weak), stretch(y_pml, weak), 2 * np.pi
        )
        assert abs(val - free) <= 1e-12

    def test_absorption_decay_monotone(self, prof):
        # Fixed physical observation point; source marching outward
        # through the layer along the axis: |wave kernel| must decay.
        x = stretch((0.0, 0.0), prof)
        mags = []
        for y1 in np.linspace(1.1, 2.0, 10):
            mags.append(abs(green_helmholtz(x, stretch((y1, 0.0), prof), 2 * np.pi)))
        assert all(b < a for a, b in zip(mags, mags[1:]))
        # and the decay through the full layer is substantial: the
        # accumulated imaginary distance is strength * thickness^2 = 2,
        # so the magnitude drops by roughly exp(-2k) ~ 3.5e-6.
        free_mag = abs(0.25j * hankel1(0, 2 * np.pi * 2.0))
        assert mags[-1] < 1e-5 * free_mag


def test_sigma1_wrapper(prof):
    xs = np.array([0.0, 1.5, 2.0])
    assert np.allclose(sigma1(xs, prof), prof.sigma(xs))
