"""Tests for the transmission solver: reference fields, jump data, the
coupled solves, field evaluation, and their guards."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pmlbie.errors import (
    ConfigurationError,
    NearBoundaryError,
    ParameterError,
    SolverError,
    UnsupportedIncidenceError,
    UnsupportedRegionError,
)
from pmlbie.geometry import (
    build_mesh,
    bump_dip_interface,
    flat_interface,
    step_interface,
    teardrop_obstacle,
    two_piece_flat_interface,
)
from pmlbie.oracle import layered_green
from pmlbie.pml import PmlProfile, stretch
from pmlbie.solver import (
    LayeredMedium,
    PlaneWave,
    PointSource,
    SolveResult,
    evaluate_field,
    jump_data,
    plane_wave_coefficients,
    reference_plane,
    reference_point,
    solve_interface,
    solve_transmission,
    solve_with_obstacle,
)
from pmlbie.special_fn import DomainError, hankel1

K0 = 2.0 * math.pi
MEDIUM_TE = LayeredMedium(K0, 1.0, 2.0, "TE")
MEDIUM_TM = LayeredMedium(K0, 1.0, 2.0, "TM")
PROFILE = PmlProfile(1.0, 1.0, 1.0)
EX1_SOURCE = PointSource((0.0, 0.1))


@pytest.fixture(scope="module")
def ex1_mesh():
    return build_mesh(two_piece_flat_interface(2.0), 400)


@pytest.fixture(scope="module")
def ex1_result(ex1_mesh):
    return solve_interface(ex1_mesh, MEDIUM_TE, EX1_SOURCE, PROFILE)


# -- problem description ----------------------------------------------------


class TestLayeredMedium:
    def test_derived_quantities(self):
        med = LayeredMedium(K0, 1.0, 3.0, "tm", n_obstacle=2.0)
        assert med.polarization == "TM"
        assert med.k1 == pytest.approx(K0)
        assert med.k2 == pytest.approx(3.0 * K0)
        assert med.k_obstacle == pytest.approx(2.0 * K0)
        assert med.wavelength == pytest.approx(1.0)
        assert med.eta1 == pytest.approx(1.0)
        assert med.eta2 == pytest.approx(1.0 / 9.0)
        assert med.eta_obstacle == pytest.approx(0.25)

    def test_te_weights_are_unity(self):
        med = LayeredMedium(K0, 1.5, 2.5, "TE")
        assert med.eta1 == med.eta2 == 1.0

    @pytest.mark.parametrize("kwargs", [
        {"k0": 0.0, "n1": 1.0, "n2": 2.0},
        {"k0": K0, "n1": -1.0, "n2": 2.0},
        {"k0": K0, "n1": 1.0, "n2": 2.0, "polarization": "TEM"},
        {"k0": K0, "n1": 1.0, "n2": 2.0, "n_obstacle": 0.0},
    ])
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ParameterError):
            LayeredMedium(**kwargs)

    def test_obstacle_index_required_for_obstacle_properties(self):
        with pytest.raises(ConfigurationError):
            MEDIUM_TE.eta_obstacle  # noqa: B018

    def test_incidence_validation(self):
        with pytest.raises(ParameterError):
            PlaneWave(4.0)
        with pytest.raises(ParameterError):
            PointSource((0.0, math.nan))
        assert PointSource((0, 1)).position == (0.0, 1.0)


# -- reference fields -------------------------------------------------------


class TestPlaneReference:
    def test_normal_incidence_tm_transmission(self):
        # classical magnetic-field amplitudes for n1=1 -> n2=2
        refl, trans, ks = plane_wave_coefficients(MEDIUM_TM, math.pi / 2)
        assert trans == pytest.approx(4.0 / 3.0, abs=1e-15)
        assert refl == pytest.approx(1.0 / 3.0, abs=1e-15)
        assert ks == pytest.approx(2.0 * K0, abs=1e-12)

    def test_matched_media_are_transparent(self):
        med = LayeredMedium(K0, 1.4, 1.4, "TE")
        refl, trans, ks = plane_wave_coefficients(med, 1.1)
        assert abs(refl) < 1e-15
        assert trans == pytest.approx(1.0, abs=1e-15)

    def test_total_internal_reflection_branch(self):
        med = LayeredMedium(K0, 2.0, 1.0, "TE")
        refl, trans, ks = plane_wave_coefficients(med, 0.9)
        assert ks.imag > 0.0
        assert abs(refl) == pytest.approx(1.0, abs=1e-14)

    def test_grazing_rejected(self):
        for angle in (0.0, math.pi):
            with pytest.raises(UnsupportedIncidenceError):
                plane_wave_coefficients(MEDIUM_TE, angle)

    @pytest.mark.parametrize("medium", [MEDIUM_TE, MEDIUM_TM])
    def test_interface_continuity(self, medium):
        # the two branches share trace and eta-weighted vertical flux at x2 = 0
        pts = np.array([[x, 0.0] for x in (-1.3, -0.2, 0.41, 2.7)])
        vu, gu = reference_plane(pts, medium, math.pi / 3, side=1)
        vl, gl = reference_plane(pts, medium, math.pi / 3, side=2)
        assert np.max(np.abs(vu - vl)) < 1e-14
        flux = medium.eta1 * gu[:, 1] - medium.eta2 * gl[:, 1]
        assert np.max(np.abs(flux)) < 1e-14

    def test_piecewise_selection_matches_sides(self):
        pts = np.array([[0.3, 0.8], [0.3, -0.8]])
        vals, grads = reference_plane(pts, MEDIUM_TE, 1.0)
        vu = reference_plane(pts[:1], MEDIUM_TE, 1.0, side=1)[0]
        vl = reference_plane(pts[1:], MEDIUM_TE, 1.0, side=2)[0]
        assert vals[0] == vu[0] and vals[1] == vl[0]
        assert grads.shape == (2, 2)

    def test_gradient_by_finite_differences(self):
        h = 1e-6
        for side, p in ((1, (0.4, 0.7)), (2, (-0.2, -0.5))):
            val, grad = reference_plane(np.array(p), MEDIUM_TM, 1.2, side=side)
            for axis in range(2):
                e = np.zeros(2)
                e[axis] = h
                vp = reference_plane(np.array(p) + e, MEDIUM_TM, 1.2, side=side)[0]
                vm = reference_plane(np.array(p) - e, MEDIUM_TM, 1.2, side=side)[0]
                fd = (vp - vm) / (2 * h)
                assert abs(fd - grad[axis]) < 1e-7 * max(1.0, abs(grad[axis]))


class TestPointReference:
    def test_upper_branch_is_outgoing_wave(self):
        pt = np.array([0.5, 0.9])
        val, grad = reference_point(pt, MEDIUM_TE, (0.0, 0.1), side=1)
        rho = np.hypot(0.5, 0.8)
        assert val == pytest.approx(0.25j * hankel1(0, K0 * rho), abs=1e-15)

    def test_lower_branch_vanishes(self):
        pts = np.array([[0.5, -0.9], [1.0, -0.1]])
        vals, grads = reference_point(pts, MEDIUM_TE, (0.0, 0.1), side=2)
        assert np.all(vals == 0) and np.all(grads == 0)
        auto, _ = reference_point(pts, MEDIUM_TE, (0.0, 0.1))
        assert np.all(auto == 0)

    def test_singular_at_source(self):
        with pytest.raises(DomainError):
            reference_point(np.array([0.0, 0.1]), MEDIUM_TE, (0.0, 0.1), side=1)

    def test_gradient_by_finite_differences(self):
        h = 1e-6
        p = np.array([0.7, 0.4])
        val, grad = reference_point(p, MEDIUM_TE, (0.0, 0.1), side=1)
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = h
            vp = reference_point(p + e, MEDIUM_TE, (0.0, 0.1), side=1)[0]
            vm = reference_point(p - e, MEDIUM_TE, (0.0, 0.1), side=1)[0]
            assert abs((vp - vm) / (2 * h) - grad[axis]) < 1e-6

    def test_stretched_coordinates_damp_the_field(self):
        # inside the absorbing layer the complexified field is smaller
        point = np.array([1.6, 0.0])
        stretched = stretch(point, PROFILE)
        plain = reference_point(point, MEDIUM_TE, (0.0, 0.1), side=1)[0]
        damped = reference_point(stretched, MEDIUM_TE, (0.0, 0.1), side=1)[0]
        assert abs(damped) < abs(plain)


# -- jump data --------------------------------------------------------------


class TestJumpData:
    def test_flat_plane_wave_vanishes(self, ex1_mesh):
        b1, b2 = jump_data(ex1_mesh, MEDIUM_TM, PlaneWave(math.pi / 3), PROFILE)
        assert np.max(np.abs(b1)) < 1e-12
        assert np.max(np.abs(b2)) < 1e-12

    def test_point_source_trace_value(self, ex1_mesh):
        b1, _ = jump_data(ex1_mesh, MEDIUM_TE, EX1_SOURCE, PROFILE)
        node = int(np.argmin(np.hypot(ex1_mesh.points[:, 0],
                                      ex1_mesh.points[:, 1])))
        assert np.allclose(ex1_mesh.points[node], [0.0, 0.0], atol=1e-14)
        expected = -0.25j * hankel1(0, K0 * 0.1)
        assert b1[node] == pytest.approx(expected, abs=1e-14)

    def test_perturbed_plane_wave_supported_on_perturbation(self):
        mesh = build_mesh(bump_dip_interface(), 400)
        prof = PmlProfile(2.5, 1.0, 1.0)
        b1, b2 = jump_data(mesh, MEDIUM_TE, PlaneWave(math.pi / 3), prof)
        flat = np.abs(mesh.points[:, 1]) < 1e-13
        assert np.max(np.abs(b1[flat])) < 1e-12
        assert np.max(np.abs(b2[flat])) < 1e-12
        assert np.max(np.abs(b1[~flat])) > 0.1


# -- coupled solves ---------------------------------------------------------


class TestSolveTransmission:
    def test_zero_data_gives_zero_densities(self):
        rng = np.random.default_rng(7)
        n = 40
        n1 = np.eye(n) + 0.01 * rng.standard_normal((n, n))
        n2 = np.eye(n) + 0.01 * rng.standard_normal((n, n))
        zero = np.zeros(n, dtype=complex)
        res = solve_transmission(n1, n2, zero, zero, 1.0, 0.25)
        assert np.all(res.density_upper == 0)
        assert np.all(res.density_lower == 0)
        assert res.diagnostics["trace_residual"] == 0.0

    def test_residuals_small_on_real_problem(self):
        mesh = build_mesh(two_piece_flat_interface(2.0), 100)
        res = solve_interface(mesh, MEDIUM_TM, EX1_SOURCE, PROFILE)
        assert res.diagnostics["trace_residual"] <= 1e-10
        assert res.diagnostics["flux_residual"] <= 1e-10

    @pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
    def test_singular_system_rejected(self):
        n = 10
        singular = np.zeros((n, n))
        zero = np.zeros(n)
        with pytest.raises(SolverError, match="condition"):
            solve_transmission(singular, singular, zero, zero, 1.0, 1.0)

    def test_shape_and_weight_validation(self):
        n1 = np.eye(4)
        with pytest.raises(ParameterError):
            solve_transmission(n1, np.eye(5), np.zeros(4), np.zeros(4), 1, 1)
        with pytest.raises(ParameterError):
            solve_transmission(n1, n1, np.zeros(3), np.zeros(4), 1, 1)
        with pytest.raises(ParameterError):
            solve_transmission(n1, n1, np.zeros(4), np.zeros(4), -1.0, 1.0)


class TestSolveInterface:
    def test_flat_plane_wave_densities_vanish(self, ex1_mesh):
        res = solve_interface(ex1_mesh, MEDIUM_TM, PlaneWave(math.pi / 3),
                              PROFILE)
        assert np.max(np.abs(res.density_upper)) <= 1e-10
        assert np.max(np.abs(res.density_lower)) <= 1e-10

    def test_trace_matches_spectral_oracle(self, ex1_mesh, ex1_result):
        phys = np.flatnonzero(np.abs(ex1_mesh.points[:, 0]) < PROFILE.a1)
        sample = phys[::12]
        u0 = reference_point(ex1_mesh.points[sample].astype(complex),
                             MEDIUM_TE, EX1_SOURCE.position, side=1)[0]
        total = ex1_result.trace_upper[sample] + u0
        oracle = np.array([layered_green(p, EX1_SOURCE.position, MEDIUM_TE)
                           for p in ex1_mesh.points[sample]])
        err = np.max(np.abs(total - oracle)) / np.max(np.abs(oracle))
        assert err <= 1e-6

    def test_lower_trace_matches_upper_through_continuity(self, ex1_mesh,
                                                          ex1_result):
        # b1 = -[u0] means trace_upper - trace_lower = b1 at every node
        b1, _ = jump_data(ex1_mesh, MEDIUM_TE, EX1_SOURCE, PROFILE)
        gap = ex1_result.trace_upper - ex1_result.trace_lower - b1
        assert np.max(np.abs(gap)) <= 1e-12 * np.max(np.abs(b1))

    def test_absorbing_layer_decay_diagnostic(self, ex1_result):
        assert ex1_result.diagnostics["pml_decay_upper"] <= 1e-5
        assert ex1_result.diagnostics["pml_decay_lower"] <= 1e-5

    def test_weak_absorption_decays_less(self, ex1_mesh, ex1_result):
        weak = solve_interface(ex1_mesh, MEDIUM_TE, EX1_SOURCE,
                               PmlProfile(1.0, 1.0, 0.1))
        assert (weak.diagnostics["pml_decay_upper"]
                > 10.0 * ex1_result.diagnostics["pml_decay_upper"])

    def test_grazing_incidence_rejected(self, ex1_mesh):
        with pytest.raises(UnsupportedIncidenceError):
            solve_interface(ex1_mesh, MEDIUM_TE, PlaneWave(0.0), PROFILE)

    def test_step_geometry_rejects_plane_wave(self):
        mesh = build_mesh(step_interface(), 120)
        with pytest.raises(UnsupportedIncidenceError, match="point source"):
            solve_interface(mesh, MEDIUM_TE, PlaneWave(math.pi / 3), PROFILE)

    def test_step_geometry_accepts_point_source(self):
        mesh = build_mesh(step_interface(), 200)
        res = solve_interface(mesh, MEDIUM_TE, PointSource((0.0, 1.1)), PROFILE)
        assert res.diagnostics["trace_residual"] <= 1e-10

    def test_source_below_interface_rejected(self, ex1_mesh):
        with pytest.raises(ConfigurationError, match="above"):
            solve_interface(ex1_mesh, MEDIUM_TE, PointSource((0.0, -0.5)),
                            PROFILE)

    def test_source_too_close_to_layer_rejected(self, ex1_mesh):
        with pytest.raises(ConfigurationError, match="wavelength"):
            solve_interface(ex1_mesh, MEDIUM_TE, PointSource((0.5, 0.5)),
                            PROFILE)

    def test_reciprocity_between_point_sources(self):
        mesh = build_mesh(flat_interface(3.0), 400)
        prof = PmlProfile(2.0, 1.0, 1.0)
        pa, pb = (0.8, 0.35), (-0.6, 0.6)
        ra = solve_interface(mesh, MEDIUM_TE, PointSource(pa), prof)
        rb = solve_interface(mesh, MEDIUM_TE, PointSource(pb), prof)
        uab = evaluate_field(ra, pb)
        uba = evaluate_field(rb, pa)
        assert abs(uab - uba) / abs(uab) <= 1e-6

    def test_concurrent_solves_match_serial(self):
        meshes = [build_mesh(two_piece_flat_interface(2.0), 100)
                  for _ in range(2)]
        incidences = [EX1_SOURCE, PointSource((0.0, 0.4))]
        serial = [solve_interface(m, MEDIUM_TE, inc, PROFILE)
                  for m, inc in zip(meshes, incidences)]
        fresh = [build_mesh(two_piece_flat_interface(2.0), 100)
                 for _ in range(2)]
        with ThreadPoolExecutor(max_workers=2) as pool:
            parallel = list(pool.map(
                lambda args: solve_interface(args[0], MEDIUM_TE, args[1],
                                             PROFILE),
                zip(fresh, incidences)))
        for s, p in zip(serial, parallel):
            assert np.array_equal(s.density_upper, p.density_upper)
            assert np.array_equal(s.trace_lower, p.trace_lower)

    def test_threaded_assembly_matches_serial(self):
        mesh = build_mesh(two_piece_flat_interface(2.0), 100)
        one = solve_interface(mesh, MEDIUM_TE, EX1_SOURCE, PROFILE, threads=1)
        mesh2 = build_mesh(two_piece_flat_interface(2.0), 100)
        two = solve_interface(mesh2, MEDIUM_TE, EX1_SOURCE, PROFILE, threads=2)
        assert np.array_equal(one.density_upper, two.density_upper)


class TestSolveWithObstacle:
    MED = LayeredMedium(K0, 1.0, 2.0, "TE", n_obstacle=2.0)

    @staticmethod
    def drop(n=160, center=(0.0, 1.3), radius=0.35, tip=(0.0, 1.85)):
        return build_mesh(teardrop_obstacle(center=center, radius=radius,
                                            tip=tip), n)

    def test_requires_obstacle_index(self, ex1_mesh):
        with pytest.raises(ConfigurationError, match="n_obstacle"):
            solve_with_obstacle(ex1_mesh, self.drop(), MEDIUM_TE,
                                PointSource((0.0, 0.25)), PROFILE)

    def test_obstacle_below_interface_rejected(self, ex1_mesh):
        low = build_mesh(
            teardrop_obstacle(center=(0.0, -1.0), radius=0.3,
                              tip=(0.0, -0.56)), 96)
        with pytest.raises(ConfigurationError, match="upper"):
            solve_with_obstacle(ex1_mesh, low, self.MED,
                                PointSource((0.0, 0.25)), PROFILE)

    def test_obstacle_reaching_layer_rejected(self, ex1_mesh):
        wide = build_mesh(
            teardrop_obstacle(center=(0.8, 0.8), radius=0.3,
                              tip=(0.8, 1.24)), 96)
        with pytest.raises(ConfigurationError, match="absorbing layer"):
            solve_with_obstacle(ex1_mesh, wide, self.MED,
                                PointSource((0.0, 0.25)), PROFILE)

    def test_source_inside_obstacle_rejected(self, ex1_mesh):
        with pytest.raises(ConfigurationError, match="inside the obstacle"):
            solve_with_obstacle(ex1_mesh, self.drop(), self.MED,
                                PointSource((0.0, 1.3)), PROFILE)

    def test_index_matched_obstacle_is_invisible(self, ex1_mesh):
        matched = LayeredMedium(K0, 1.0, 2.0, "TE", n_obstacle=1.0)
        src = PointSource((0.0, 0.25))
        with_ob = solve_with_obstacle(ex1_mesh, self.drop(192), matched, src,
                                      PROFILE)
        without = solve_interface(ex1_mesh, matched, src, PROFILE)
        scale = np.max(np.abs(without.trace_upper))
        assert np.max(np.abs(with_ob.trace_upper - without.trace_upper)) \
            <= 1e-7 * scale
        for p in [(0.5, 0.6), (0.2, -0.5), (0.0, 2.2)]:
            a = evaluate_field(with_ob, p)
            b = evaluate_field(without, p)
            assert abs(a - b) <= 1e-7 * abs(b)

    def test_contrast_obstacle_scatters_and_couples(self, ex1_mesh):
        src = PointSource((0.0, 0.25))
        res = solve_with_obstacle(ex1_mesh, self.drop(192), self.MED, src,
                                  PROFILE)
        free = solve_interface(ex1_mesh, self.MED, src, PROFILE)
        assert res.has_obstacle
        assert res.density_obstacle.shape == (192,)
        assert abs(evaluate_field(res, (0.5, 0.6))
                   - evaluate_field(free, (0.5, 0.6))) > 1e-4
        assert res.diagnostics["trace_residual"] <= 1e-10
        assert res.diagnostics["obstacle_residual"] <= 1e-10
        assert res.diagnostics["flux_residual"] <= 1e-10
        assert np.isfinite(evaluate_field(res, (0.0, 1.3)))


# -- field evaluation -------------------------------------------------------


class TestEvaluateField:
    def test_matches_oracle_off_boundary(self, ex1_result):
        for p in [(0.3, 0.5), (0.3, -0.4)]:
            val = evaluate_field(ex1_result, p)
            ref = layered_green(np.array(p), EX1_SOURCE.position, MEDIUM_TE)
            assert abs(val - ref) / abs(ref) <= 1e-6

    def test_rejects_layer_points(self, ex1_result):
        with pytest.raises(UnsupportedRegionError):
            evaluate_field(ex1_result, (1.2, 0.5))

    def test_rejects_near_boundary_points(self, ex1_result):
        with pytest.raises(NearBoundaryError):
            evaluate_field(ex1_result, (0.3, 1e-3))

    def test_requires_context(self):
        bare = SolveResult(
            density_upper=np.zeros(4, complex),
            density_lower=np.zeros(4, complex),
            trace_upper=np.zeros(4, complex),
            trace_lower=np.zeros(4, complex),
        )
        with pytest.raises(ConfigurationError, match="solve_interface"):
            evaluate_field(bare, (0.3, 0.5))

    def test_rejects_bad_points(self, ex1_result):
        with pytest.raises(ParameterError):
            evaluate_field(ex1_result, (0.3, 0.5, 0.7))
        with pytest.raises(ParameterError):
            evaluate_field(ex1_result, (math.inf, 0.5))
