"""Tests for the grid envelope construction and its variants."""

import math

import numpy as np
import pytest

from jetx import (FamilyBudget, GridFunction, GridSpec, Jet, Modulus,
                  NotExtendableError, OffGridError, bounded_extend, compute_A,
                  default_stencil, eval_g, eval_m, extend,
                  extend_c11_biconjugate, family_F_lower_bound,
                  lipschitz_extend, lp_smoothness_constant,
                  paraconvex_envelope_grid)
from jetx.envelope import certify_fixed_point, _norm

from conftest import grid_aligned_jet, lower_hull_values, raw_jet, smooth_jet

HOL = Modulus.holder(0.5)
HOL1 = Modulus.holder(1.0)
LIN = Modulus.linear(1.0)


def affine_jet(v, c=0.0, n=None, pts=None):
    v = np.asarray(v, dtype=float)
    if pts is None:
        pts = np.vstack([np.zeros_like(v), np.eye(len(v))])
    pts = np.asarray(pts, dtype=float)
    return Jet(points=pts, values=pts @ v + c, gradients=np.tile(v, (len(pts), 1)))


class TestEvalFields:
    def test_single_point_linear_distance_two(self):
        j = Jet(points=[[0.0, 0.0]], values=[1.0], gradients=[[1.0, 0.0]])
        x = np.array([0.0, 2.0])
        # phi(2) = 2 for the unit linear modulus
        assert eval_m(j, LIN, 1.0, x) == pytest.approx(1.0 - 2.0)
        assert eval_g(j, LIN, 1.0, x) == pytest.approx(1.0 + 2.0)

    def test_equals_values_on_E_when_constant_admissible(self, rng):
        j = smooth_jet(rng, 2, 5)
        M = compute_A(j, HOL).constant * 1.0001 + 1e-9
        for k in range(j.size):
            assert eval_m(j, HOL, M, j.points[k]) == pytest.approx(j.values[k], abs=1e-9)
            assert eval_g(j, HOL, M, j.points[k]) == pytest.approx(j.values[k], abs=1e-9)

    def test_two_point_max_of_curves(self):
        j = Jet(points=[[-1.0], [1.0]], values=[0.0, 1.0], gradients=[[1.0], [-1.0]])
        M = 2.0
        xs = np.linspace(-3.0, 3.0, 41)[:, None]
        c1 = 0.0 + 1.0 * (xs[:, 0] + 1.0) - M * HOL.phi(np.abs(xs[:, 0] + 1.0))
        c2 = 1.0 - 1.0 * (xs[:, 0] - 1.0) - M * HOL.phi(np.abs(xs[:, 0] - 1.0))
        assert np.allclose(eval_m(j, HOL, M, xs), np.maximum(c1, c2))

    def test_m_below_g_everywhere_at_admissible_constant(self, rng):
        j = smooth_jet(rng, 2, 6)
        M = compute_A(j, HOL).constant * 1.01 + 1e-6
        X = rng.uniform(-2.0, 2.0, size=(10_000, 2))
        assert np.all(eval_m(j, HOL, M, X) <= eval_g(j, HOL, M, X) + 1e-9)


class TestEnvelopeOperator:
    def test_affine_input_is_fixed(self):
        spec = GridSpec(box=((-1.0, 1.0), (-1.0, 1.0)), shape=(21, 21))
        g = GridFunction(box=np.array(spec.box), values=np.zeros(spec.shape))
        nodes = g.nodes()
        vals = (nodes @ np.array([1.0, -2.0]) + 0.3).reshape(spec.shape)
        u0 = g.with_values(vals)
        out = paraconvex_envelope_grid(u0, u0.with_values(vals.copy()), 2.0, HOL)
        assert np.array_equal(out.values, vals)

    def test_linear_modulus_reduces_to_shifted_hull(self, rng):
        # independent oracle: monotone-chain hull of u0 + (C/2) x^2
        xs = np.linspace(-2.0, 2.0, 201)
        u0_vals = np.sin(3.0 * xs) + rng.normal(0, 0.2, xs.size)
        C = 1.7
        floor_vals = u0_vals - 5.0
        g = GridFunction(box=np.array([[-2.0, 2.0]]), values=u0_vals)
        out = paraconvex_envelope_grid(g, g.with_values(floor_vals), C, LIN)
        w = u0_vals + 0.5 * C * xs ** 2
        oracle = lower_hull_values(xs, w) - 0.5 * C * xs ** 2
        assert np.max(np.abs(out.values - oracle)) <= 2e-8

    def test_valid_jet_sandwich_and_interpolation(self, rng):
        j, spec = grid_aligned_jet(rng, 1, 4, 201)
        M = compute_A(j, HOL).constant + 1e-6
        grid = GridFunction(box=np.array(spec.box), values=np.zeros(spec.shape))
        nodes = grid.nodes()
        gv = eval_g(j, HOL, M, nodes).reshape(spec.shape)
        mv = eval_m(j, HOL, M, nodes).reshape(spec.shape)
        out = paraconvex_envelope_grid(grid.with_values(gv), grid.with_values(mv),
                                       2.0 * M, HOL)
        assert np.all(out.values >= mv - 1e-9)
        assert np.all(out.values <= gv + 1e-9)
        axis = grid.axes[0]
        for k in range(j.size):
            i = int(np.argmin(np.abs(axis - j.points[k, 0])))
            assert out.values[i] == pytest.approx(j.values[k], abs=1e-9)

    def test_monotone_in_C(self, rng):
        j, spec = grid_aligned_jet(rng, 1, 4, 101)
        M = compute_A(j, HOL).constant + 1e-6
        grid = GridFunction(box=np.array(spec.box), values=np.zeros(spec.shape))
        nodes = grid.nodes()
        gv = eval_g(j, HOL, M, nodes).reshape(spec.shape)
        mv = eval_m(j, HOL, M, nodes).reshape(spec.shape)
        outs = [paraconvex_envelope_grid(grid.with_values(gv), grid.with_values(mv),
                                         c * M, HOL).values for c in (1.0, 2.0, 4.0)]
        assert np.all(outs[0] <= outs[1] + 1e-9)
        assert np.all(outs[1] <= outs[2] + 1e-9)

    def test_rejects_floor_above(self):
        g = GridFunction(box=np.array([[0.0, 1.0]]), values=np.zeros(17))
        hi = GridFunction(box=np.array([[0.0, 1.0]]), values=np.ones(17))
        with pytest.raises(ValueError):
            paraconvex_envelope_grid(g, hi, 1.0, LIN)


class TestExtend:
    def test_affine_jet_exact_everywhere(self):
        j = affine_jet([1.0, 0.5], c=0.25)
        e = extend(j, LIN, "general", resolution=33)
        nodes = e.F.nodes()
        exact = nodes @ np.array([1.0, 0.5]) + 0.25
        assert np.max(np.abs(e.F.values.ravel() - exact)) <= 1e-10
        assert e.residual <= e.eps_used

    def test_fractional_power_two_points_aligned(self):
        # box chosen so that -1 and 1 are grid nodes
        x = np.array([-1.0, 1.0])
        j = Jet(points=x, values=(2 / 3) * np.abs(x) ** 1.5,
                gradients=np.sign(x) * np.sqrt(np.abs(x)))
        spec = GridSpec(box=((-3.0, 3.0),), shape=(241,))
        e = extend(j, HOL, "holder", grid_spec=spec)
        Ff = e.F.values.ravel()
        assert np.max(e.snap_dist) <= 1e-12
        assert Ff[e.snap_index] == pytest.approx(j.values, abs=1e-9)
        h = float(e.F.spacing.max())
        grad = e.grad_F.reshape(-1, 1)[e.snap_index].ravel()
        assert np.max(np.abs(grad - j.gradients.ravel())) <= 10 * e.M_used * HOL.omega(h)
        assert np.all(e.F.values >= e.lower.values - 1e-9)
        assert np.all(e.F.values <= e.upper.values + 1e-9)

    def test_matches_biconjugate_for_linear_modulus(self, rng):
        for _ in range(3):
            j = smooth_jet(rng, 2, 5)
            spec = GridSpec(box=((-2.0, 2.0), (-2.0, 2.0)), shape=(33, 33))
            M = compute_A(j, HOL1).constant * 1.05 + 1e-9
            ea = extend(j, HOL1, "holder", grid_spec=spec, M=M)
            eb = extend_c11_biconjugate(j, M=M, grid_spec=spec)
            tol = 5.0 * max(ea.eps_used, eb.eps_used)
            assert np.max(np.abs(ea.F.values - eb.F.values)) <= tol

    def test_rejects_M_below_A(self, rng):
        j = smooth_jet(rng, 1, 4)
        A = compute_A(j, HOL).constant
        with pytest.raises(ValueError):
            extend(j, HOL, "general", resolution=33, M=0.5 * A)

    def test_point_outside_box_errors(self):
        j = Jet(points=[[0.0], [1.0]], values=[0.0, 0.0], gradients=[[0.0], [0.0]])
        spec = GridSpec(box=((3.0, 5.0),), shape=(33,))
        with pytest.raises(OffGridError):
            extend(j, LIN, "general", grid_spec=spec)

    def test_not_extendable_surrogate(self):
        j = Jet(points=[[0.0], [1e-7]], values=[0.0, 1.0], gradients=[[0.0], [0.0]])
        with pytest.raises(NotExtendableError):
            extend(j, HOL, "general", resolution=33)

    def test_holder_variant_requires_holder_kind(self, rng):
        j = smooth_jet(rng, 1, 3)
        with pytest.raises(ValueError):
            extend(j, LIN, "holder", resolution=33)


class TestC11Biconjugate:
    def test_single_point_tangent_plane(self):
        # default constant is the computed A = 0, so the upper and lower
        # fields collapse onto the tangent plane
        j = Jet(points=[[0.5, -0.5]], values=[2.0], gradients=[[1.0, 1.0]])
        e = extend_c11_biconjugate(j, resolution=33)
        nodes = e.F.nodes()
        exact = 2.0 + (nodes - np.array([0.5, -0.5])) @ np.array([1.0, 1.0])
        assert np.max(np.abs(e.F.values.ravel() - exact)) <= 1e-9

    def test_valley_value_against_dense_hull_oracle(self):
        j = Jet(points=[[-1.0], [1.0]], values=[1.0, 1.0], gradients=[[-1.0], [1.0]])
        e = extend_c11_biconjugate(j, M=1.0, resolution=257)
        # oracle: brute-force lower hull of g + x^2/2 on 10^4 nodes
        xs = np.linspace(*e.F.box[0], 10_001)
        gv = eval_g(j, LIN, 1.0, xs[:, None])
        F_or = lower_hull_values(xs, gv + 0.5 * xs ** 2) - 0.5 * xs ** 2
        k = int(np.argmin(np.abs(e.F.axes[0])))
        k_or = int(np.argmin(np.abs(xs)))
        assert e.F.values[k] == pytest.approx(F_or[k_or], abs=1e-6)

    def test_wells_passing_jets_interpolate(self, rng):
        from jetx.jet import _bisect_threshold
        from jetx import check_wells_W11
        for _ in range(3):
            j, spec = grid_aligned_jet(rng, 2, 4, 33, smooth=False)
            M_star = _bisect_threshold(lambda M: check_wells_W11(j, M).passed)
            e = extend_c11_biconjugate(j, M=1.1 * M_star, grid_spec=spec)
            Ff = e.F.values.ravel()
            assert Ff[e.snap_index] == pytest.approx(j.values, abs=1e-8)
            grad = e.grad_F.reshape(-1, 2)[e.snap_index]
            h = float(e.F.spacing.max())
            assert np.max(_norm(grad - j.gradients)) <= 10 * e.M_used * h


class TestFamilyLowerBound:
    def test_dominates_values_on_E(self, rng):
        j = smooth_jet(rng, 1, 3)
        M = compute_A(j, HOL).constant + 1e-9
        for k in range(j.size):
            lb = family_F_lower_bound(j, HOL, M, j.points[k],
                                      FamilyBudget(knots=2, iterations=50))
            assert lb >= j.values[k] - 1e-9

    def test_linear_matches_biconjugate(self, rng):
        j = smooth_jet(rng, 1, 3)
        M = compute_A(j, HOL1).constant * 1.01 + 1e-9
        e = extend_c11_biconjugate(j, M=M, resolution=257)
        xs = e.F.axes[0]
        for frac in (0.35, 0.55, 0.72):
            k = int(frac * len(xs))
            lb = family_F_lower_bound(j, HOL1, M, [xs[k]],
                                      FamilyBudget(knots=3, iterations=300))
            assert lb <= e.F.values[k] + 1e-6
            assert lb >= e.F.values[k] - 0.02 * (1.0 + abs(e.F.values[k]))

    def test_below_grid_envelope(self, rng):
        j = smooth_jet(rng, 1, 2)
        e = extend(j, HOL, "general", resolution=129)
        xs = e.F.axes[0]
        for k in rng.integers(0, len(xs), 10):
            lb = family_F_lower_bound(j, HOL, e.M_used, [xs[int(k)]],
                                      FamilyBudget(knots=2, iterations=100))
            assert lb <= e.F.values[int(k)] + 1e-7


class TestBounded:
    def test_affine_jet_capped(self):
        j = affine_jet([2.0], pts=[[-0.5], [0.5]])
        e = bounded_extend(j, HOL, resolution=129)
        R = e.diagnostics["cap"]
        assert np.max(np.abs(e.F.values)) <= 2.0 * R + 1e-9
        # the caps actually bind far from E
        assert np.max(e.F.values) == pytest.approx(2.0 * R, abs=1e-6)

    def test_gradient_bound(self, rng):
        j = raw_jet(rng, 1, 4, scale=0.5)
        e = bounded_extend(j, HOL, resolution=129)
        gmax = float(np.max(np.abs(e.grad_F)))
        bound = 2.0 * np.max(np.abs(e.F.values)) + 2.0 * e.M_used * HOL.phi(1.0)
        assert gmax <= bound + 1e-6

    def test_zero_jet_is_zero(self):
        j = Jet(points=[[0.0], [1.0]], values=[0.0, 0.0], gradients=[[0.0], [0.0]])
        e = bounded_extend(j, HOL, resolution=65)
        assert np.max(np.abs(e.F.values)) == 0.0


class TestLipschitz:
    def test_affine_jet_slope(self):
        j = affine_jet([1.5], pts=[[-1.0], [1.0]])
        e = lipschitz_extend(j, HOL, resolution=129)
        gmax = float(np.max(np.abs(e.grad_F)))
        assert gmax == pytest.approx(1.5, abs=1e-6)
        assert gmax <= e.lip_cap + 1e-9

    def test_clipped_absolute_value_jet(self):
        pts = np.array([-2.0, 0.0, 2.0])
        j = Jet(points=pts, values=np.minimum(np.abs(pts), 1.0),
                gradients=[[-1.0], [0.0], [1.0]])
        e = lipschitz_extend(j, HOL, resolution=257)
        steps = np.abs(np.diff(e.F.values)) / float(e.F.spacing[0])
        assert np.max(steps) <= e.lip_cap + 1e-6

    def test_not_extendable(self):
        j = Jet(points=[[0.0], [1e-7]], values=[0.0, 1.0], gradients=[[0.0], [0.0]])
        with pytest.raises(NotExtendableError):
            lipschitz_extend(j, HOL, resolution=33)


class TestLpMode:
    def test_p2_constant_is_two(self):
        assert lp_smoothness_constant(2.0, 3, samples=50_000, seed=1) == pytest.approx(
            2.0, abs=1e-9)

    def test_zero_center_ratio_is_two(self):
        # direct evaluation of the defining ratio at u = 0
        p, a = 1.5, 0.5
        h = np.array([0.3, -1.2])
        nh = np.sum(np.abs(h) ** p) ** (1 / p)
        ratio = (nh ** (1 + a) + nh ** (1 + a)) / nh ** (1 + a)
        assert ratio == pytest.approx(2.0)

    def test_reproducible_across_seeds(self):
        c1 = lp_smoothness_constant(1.5, 2, samples=200_000, seed=0)
        c2 = lp_smoothness_constant(1.5, 2, samples=200_000, seed=99)
        assert c1 == pytest.approx(c2, rel=0.01)
        assert c1 > 0

    def test_lp_extension_sandwich(self, rng):
        j = smooth_jet(rng, 2, 4)
        e = extend(j, HOL, "lp", resolution=33, p=1.5)
        assert e.F.norm_mode == "lp"
        assert np.all(e.F.values >= e.lower.values - 1e-9)
        assert np.all(e.F.values <= e.upper.values + 1e-9)
        assert e.C_used > 2.0 * e.M_used  # generic-norm constant exceeds 2M


class TestMaximality:
    def test_rerun_changes_nothing(self, rng):
        j = smooth_jet(rng, 1, 4)
        e = extend(j, HOL, "general", resolution=129)
        assert certify_fixed_point(e) <= e.eps_used

    def test_stencil_shapes(self):
        assert default_stencil(1) == [(1,)]
        s2 = default_stencil(2)
        assert (1, 0) in s2 and (0, 1) in s2 and (1, 1) in s2 and (1, -1) in s2
        assert len(default_stencil(3)) == 9
