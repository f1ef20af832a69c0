"""Tests for the quadrature layer: the sixth-order log-singular rule,
trigonometric interpolation, and Gauss-Legendre nodes."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmlbie.errors import MeshTooCoarseError, ParameterError
from pmlbie.oracle import highprec_bessel_j, highprec_hankel
from pmlbie.quadrature import (
    AlpertRule,
    alpert_row,
    cardinal_weights,
    gauss_legendre,
    trig_interp,
)
from pmlbie.special_fn import hankel1

# Frozen digit-for-digit table of the sixth-order rule.
NODES_6 = (
    "4.004884194926570E-03",
    "7.745655373336686E-02",
    "3.972849993523248E-01",
    "1.075673352915104E+00",
    "2.003796927111872E+00",
)
WEIGHTS_6 = (
    "1.671879691147102E-02",
    "1.636958371447360E-01",
    "4.981856569770637E-01",
    "8.372266245578912E-01",
    "9.841730844088381E-01",
)

# Frozen spectral reference for the log-kernel applied to exp(sin(2 pi t))
# at target t_l = 1/4 (computed from Fourier coefficients, see _log_ref).
LOG_SMOOTH_REF = -1.2823299523997438

# Frozen eigenvalue (i pi / 2) J_1(2 pi) H1_1(2 pi) of the unit-circle
# single-layer operator on the first Fourier mode, from the
# high-precision series route.
CIRCLE_EIGENVALUE = -0.07975749127808941 + 0.07085287174460493j


def log_kernel_factory(n):
    def kern(l, t):
        tl = (l + 1) / n
        return np.log(4.0 * np.sin(np.pi * (t - tl)) ** 2).astype(complex)

    return kern


class TestRuleTable:
    def test_table_digits_frozen(self):
        rule = AlpertRule.order6()
        assert rule.node_strings == NODES_6
        assert rule.weight_strings == WEIGHTS_6
        assert rule.order == 6
        assert rule.num_corrections == 5
        assert rule.body_offset == 3

    def test_checksum_passes_on_shipped_table(self):
        AlpertRule.order6().verify_checksum()

    def test_checksum_rejects_tampered_weight(self):
        tampered = list(WEIGHTS_6)
        tampered[2] = "4.981856569770638E-01"  # last digit bumped
        rule = AlpertRule(
            order=6,
            num_corrections=5,
            body_offset=3,
            node_strings=NODES_6,
            weight_strings=tuple(tampered),
        )
        with pytest.raises(ParameterError, match="corrupted"):
            rule.verify_checksum()

    def test_checksum_rejects_tampered_node(self):
        tampered = list(NODES_6)
        tampered[0] = "4.004884194926571E-03"
        rule = AlpertRule(
            order=6,
            num_corrections=5,
            body_offset=3,
            node_strings=tuple(tampered),
            weight_strings=WEIGHTS_6,
        )
        with pytest.raises(ParameterError, match="corrupted"):
            rule.verify_checksum()

    def test_weight_sum_half_body_offset_pair(self):
        # The correction weights on each side must absorb exactly the
        # trapezoidal mass of the dropped offsets (2.5 per side).
        rule = AlpertRule.order6()
        assert sum(rule.weights) == pytest.approx(2.5, abs=1e-14)

    def test_nodes_increasing_and_weights_positive(self):
        rule = AlpertRule.order6()
        assert all(b > a for a, b in zip(rule.nodes, rule.nodes[1:]))
        assert all(w > 0 for w in rule.weights)


class TestAlpertRow:
    def test_partition_of_unity(self):
        rule = AlpertRule.order6()
        ones = lambda l, t: np.ones_like(t, dtype=complex)
        for n in (8, 64, 200):
            for l in (0, 3, n - 1):
                row = alpert_row(rule, n, ones, l)
                assert abs(row.sum() - 1.0) <= 1e-13

    def test_log_kernel_integral_vanishes(self):
        # integral_0^1 log(4 sin^2(pi(t - t_l))) dt = 0 exactly.
        rule = AlpertRule.order6()
        n = 64
        row = alpert_row(rule, n, log_kernel_factory(n), 5)
        assert abs(row @ np.ones(n)) <= 1e-8

    @staticmethod
    def _log_ref(tl: float) -> complex:
        # Spectral reference: with f(t) = exp(sin(2 pi t)) and kernel
        # log(4 sin^2(pi(t - t_l))) = -sum_{m != 0} e^{2 pi i m (t-t_l)}/|m|,
        # the integral is -sum_{m != 0} c_m e^{2 pi i m t_l} / |m| where
        # c_m are the Fourier coefficients of f.
        m_pts = 512
        tt = np.arange(m_pts) / m_pts
        c = np.fft.fft(np.exp(np.sin(2 * np.pi * tt))) / m_pts
        ms = np.fft.fftfreq(m_pts, d=1.0 / m_pts).astype(int)
        acc = 0.0 + 0.0j
        for m, cm in zip(ms, c):
            if m != 0:
                acc += cm * np.exp(2j * np.pi * m * tl) / abs(m)
        return -acc

    def test_log_kernel_smooth_density_value(self):
        rule = AlpertRule.order6()
        n = 128
        l = n // 4 - 1
        tl = (l + 1) / n
        ref = self._log_ref(tl)
        assert ref.real == pytest.approx(LOG_SMOOTH_REF, abs=1e-12)
        dens = np.exp(np.sin(2 * np.pi * np.arange(1, n + 1) / n))
        val = alpert_row(rule, n, log_kernel_factory(n), l) @ dens
        assert abs(val - ref) <= 1e-12

    def test_log_kernel_sixth_order_convergence(self):
        rule = AlpertRule.order6()
        errs = []
        ns = [16, 32, 64, 128]
        for n in ns:
            l = n // 4 - 1
            tl = (l + 1) / n
            dens = np.exp(np.sin(2 * np.pi * np.arange(1, n + 1) / n))
            val = alpert_row(rule, n, log_kernel_factory(n), l) @ dens
            errs.append(abs(val - self._log_ref(tl)))
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert slope <= -6.0

    def test_circle_single_layer_eigenvalue(self):
        # On the unit circle the single-layer operator acting on the
        # first Fourier mode multiplies it by (i pi / 2) J_1(k) H1_1(k).
        rule = AlpertRule.order6()
        k = 2 * np.pi
        factor = (
            0.5j
            * np.pi
            * complex(highprec_bessel_j(1, k, dps=20))
            * complex(highprec_hankel(1, k, dps=20))
        )
        assert factor == pytest.approx(CIRCLE_EIGENVALUE, abs=1e-14)

        n = 128
        l = 17

        def kern(l_, t):
            tl = (l_ + 1) / n
            d = 2.0 * np.abs(np.sin(np.pi * (t - tl)))
            return 0.25j * hankel1(0, k * d) * (2 * np.pi)

        dens = np.exp(2j * np.pi * np.arange(1, n + 1) / n)
        val = alpert_row(rule, n, kern, l) @ dens
        expected = factor * np.exp(2j * np.pi * (l + 1) / n)
        assert abs(val - expected) <= 1e-8

    def test_rows_are_circulant_for_translation_invariant_kernel(self):
        # When the kernel depends only on t - t_l (mod 1), rows must be
        # cyclic shifts of one another.
        rule = AlpertRule.order6()
        n = 32

        def kern(l, t):
            tl = (l + 1) / n
            u = t - tl
            return np.exp(np.cos(2 * np.pi * u)) + np.log(
                4.0 * np.sin(np.pi * u) ** 2
            ).astype(complex)

        r0 = alpert_row(rule, n, kern, 0)
        for shift in (1, 7, n - 1):
            rs = alpert_row(rule, n, kern, shift)
            assert np.allclose(np.roll(r0, shift), rs, rtol=0, atol=1e-13)

    def test_too_few_nodes_raises(self):
        rule = AlpertRule.order6()
        ones = lambda l, t: np.ones_like(t, dtype=complex)
        with pytest.raises(MeshTooCoarseError):
            alpert_row(rule, 6, ones, 0)
        # 7 nodes is the minimum and must work
        row = alpert_row(rule, 8, ones, 0)
        assert np.isfinite(row).all()


class TestTrigInterp:
    def test_exact_at_nodes(self):
        n = 16
        t = np.arange(1, n + 1) / n
        vals = np.sin(2 * np.pi * t) + 1j * np.cos(2 * np.pi * 3 * t)
        for j, tj in enumerate(t):
            assert abs(trig_interp(vals, tj) - vals[j]) <= 1e-13

    def test_exact_for_low_degree_trig_polynomials(self):
        n = 16

        def f(x):
            return (
                1.3
                + 0.7 * np.cos(2 * np.pi * x)
                - 2.1 * np.sin(4 * np.pi * x)
                + 0.3 * np.cos(10 * np.pi * x)
                + 1j * np.sin(6 * np.pi * x)
            )

        t = np.arange(1, n + 1) / n
        vals = f(t)
        for tau in (0.123, 0.9871, 0.5, 1.0, 1 / 16 + 1e-9):
            assert abs(trig_interp(vals, tau) - f(tau)) <= 1e-12
        taus = np.array([0.1, 0.7, 0.25])
        assert np.abs(trig_interp(vals, taus) - f(taus)).max() <= 1e-12

    def test_cardinal_weights_sum_to_one(self):
        n = 24
        for tau in (0.017, 0.5, 0.33333, 0.99):
            assert abs(cardinal_weights(n, tau).sum() - 1.0) <= 1e-12

    def test_odd_count_rejected(self):
        with pytest.raises(ParameterError):
            cardinal_weights(15, 0.3)

    @settings(max_examples=50, deadline=None)
    @given(
        tau=st.floats(min_value=1e-3, max_value=1.0),
        degree=st.integers(min_value=0, max_value=7),
    )
    def test_interpolates_random_modes_exactly(self, tau, degree):
        n = 16  # degree < n/2 always holds
        t = np.arange(1, n + 1) / n
        vals = np.exp(2j * np.pi * degree * t)
        assert abs(trig_interp(vals, tau) - np.exp(2j * np.pi * degree * tau)) <= 1e-11


class TestGaussLegendre:
    def test_order_one(self):
        x, w = gauss_legendre(1)
        assert x.tolist() == [0.5]
        assert w.tolist() == [1.0]

    def test_degree_exactness(self):
        for n in (2, 4, 8, 16, 64):
            x, w = gauss_legendre(n)
            for d in (2 * n - 1, 2 * n - 2, 0):
                assert w @ x**d == pytest.approx(1.0 / (d + 1), rel=1e-13)

    def test_not_exact_beyond_degree(self):
        x, w = gauss_legendre(2)
        assert abs(w @ x**4 - 1 / 5) > 1e-6

    def test_weights_positive_and_sum_to_one(self):
        for n in (1, 5, 33, 64):
            x, w = gauss_legendre(n)
            assert (w > 0).all()
            assert w.sum() == pytest.approx(1.0, abs=1e-14)
            assert ((x > 0) & (x < 1)).all()

    def test_out_of_range_orders_rejected(self):
        with pytest.raises(ParameterError):
            gauss_legendre(0)
        with pytest.raises(ParameterError):
            gauss_legendre(65)
