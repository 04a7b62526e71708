"""Ball geometry: closed-form oracles and pointwise consistency identities."""

import numpy as np
import pytest
from scipy import integrate

from knt.geometry import AbsorptionField, Ball, segment_integral


class TestDistanceAndProjection:
    def test_center_and_axis_values(self):
        ball = Ball()
        assert ball.distance_to_boundary(np.zeros(3)) == 1.0
        assert ball.distance_to_boundary(np.array([0.5, 0.0, 0.0])) == 0.5

    def test_outside_raises(self):
        ball = Ball()
        with pytest.raises(ValueError):
            ball.distance_to_boundary(np.array([1.5, 0.0, 0.0]))

    def test_lipschitz_over_sampled_pairs(self):
        ball = Ball()
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(10_000, 2, 3))
        pts /= np.linalg.norm(pts, axis=-1, keepdims=True)
        pts *= rng.uniform(0.0, 1.0, size=(10_000, 2, 1)) ** (1 / 3)
        d = ball.distance_to_boundary(pts)
        gaps = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=-1)
        assert np.all(np.abs(d[:, 0] - d[:, 1]) <= gaps + 1e-12)

    def test_projection_axis_point(self):
        ball = Ball()
        bp = ball.project_to_boundary(np.array([0.5, 0.0, 0.0]))
        np.testing.assert_allclose(bp.position, [1.0, 0.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(bp.normal, [1.0, 0.0, 0.0], atol=1e-14)

    def test_projection_center_convention(self):
        ball = Ball()
        bp = ball.project_to_boundary(np.zeros(3))
        np.testing.assert_allclose(bp.position, [1.0, 0.0, 0.0], atol=1e-14)

    def test_projection_consistency_random(self):
        ball = Ball(radius=2.0, center=np.array([0.1, -0.2, 0.3]))
        rng = np.random.default_rng(3)
        x = rng.normal(size=(500, 3))
        x /= np.linalg.norm(x, axis=-1, keepdims=True)
        x *= 2.0 * rng.uniform(0.05, 0.999, size=(500, 1))
        x += ball.center
        bp = ball.project_to_boundary(x)
        gap = np.linalg.norm(x - bp.position, axis=-1)
        np.testing.assert_allclose(gap, ball.distance_to_boundary(x), atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(bp.position - ball.center, axis=-1),
                                   2.0, atol=1e-12)


class TestRayExit:
    def test_center_exit(self):
        ball = Ball()
        v = np.array([0.0, 0.0, 1.0])
        y, s = ball.ray_exit(np.zeros(3), v)
        assert abs(s - 1.0) < 1e-14
        np.testing.assert_allclose(y, -v, atol=1e-14)

    def test_boundary_tangent_cases(self):
        ball = Ball()
        x = np.array([1.0, 0.0, 0.0])
        # backward ray leaves immediately when looking along -n
        _, s = ball.ray_exit(x, -x)
        assert abs(s) < 1e-12
        # looking along +n traverses the full chord
        y, s = ball.ray_exit(x, x)
        assert abs(s - 2.0) < 1e-12
        np.testing.assert_allclose(y, -x, atol=1e-12)

    def test_quadratic_oracle_axis_case(self):
        ball = Ball()
        y, s = ball.ray_exit(np.array([0.5, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert abs(s - 1.5) < 1e-14
        np.testing.assert_allclose(y, [-1.0, 0.0, 0.0], atol=1e-14)

    def test_exit_lies_on_boundary_random(self):
        ball = Ball()
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2000, 3))
        x /= np.linalg.norm(x, axis=-1, keepdims=True)
        x *= rng.uniform(0.0, 1.0, size=(2000, 1)) ** (1 / 3)
        v = rng.normal(size=(2000, 3))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        y, s = ball.ray_exit(x, v)
        np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-10)
        np.testing.assert_allclose(np.linalg.norm(x - y, axis=-1), s, atol=1e-10)
        assert np.all(s >= 0.0)
        # exit distance dominates the distance to the boundary
        assert np.all(s >= ball.distance_to_boundary(x) - 1e-10)

    def test_non_unit_direction_rejected(self):
        ball = Ball()
        with pytest.raises(ValueError):
            ball.ray_exit(np.zeros(3), np.array([0.0, 0.0, 2.0]))

    def test_d2_support(self):
        ball = Ball(dim=2)
        y, s = ball.ray_exit(np.array([0.3, 0.0]), np.array([1.0, 0.0]))
        assert abs(s - 1.3) < 1e-14
        np.testing.assert_allclose(y, [-1.0, 0.0], atol=1e-14)


class TestSegmentIntegral:
    def test_zero_field(self):
        field = AbsorptionField.zero()
        assert segment_integral(field, np.zeros(3), np.array([0.3, 0.4, 0.0])) == 0.0

    def test_constant_field_exact(self):
        ball = Ball()
        field = AbsorptionField(lambda r: np.ones_like(r) * 1.0, r_support=0.999, ball=ball)
        x = np.zeros(3)
        eta = np.array([0.3, 0.0, 0.0])
        # constant inside the support: the chord [0, 0.3e1] stays inside r<0.999
        assert abs(segment_integral(field, x, eta) - 0.3) < 1e-12

    def test_bump_against_adaptive_quadrature(self):
        ball = Ball()
        field = AbsorptionField.bump(amplitude=2.0, r_support=0.5, ball=ball)
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = rng.normal(size=3)
            x *= rng.uniform(0.1, 0.95) / np.linalg.norm(x)
            eta = rng.normal(size=3)
            eta *= rng.uniform(0.1, 0.95) / np.linalg.norm(eta)
            direction = eta - x
            length = np.linalg.norm(direction)
            ref, _ = integrate.quad(
                lambda t: float(field(x + t * direction)), 0.0, 1.0,
                epsabs=1e-12, limit=300,
            )
            ref *= length
            got = segment_integral(field, x, eta)
            assert abs(got - ref) <= 1e-8 * max(1.0, abs(ref))


class TestAbsorptionField:
    def test_bump_profile_properties(self):
        field = AbsorptionField.bump(amplitude=3.0, r_support=0.5)
        r = np.linspace(0.0, 1.0, 1001)
        vals = field.eval_radial(r)
        assert abs(vals[0] - 3.0) < 1e-12
        assert np.all(vals >= 0.0)
        assert np.all(vals[r >= 0.5] == 0.0)
        assert field.max_value() <= 3.0 + 1e-12
        assert np.isfinite(field.seminorm_c2())

    def test_negative_profile_rejected(self):
        with pytest.raises(ValueError):
            AbsorptionField(lambda r: -np.ones_like(r), r_support=0.5)

    def test_support_violation_rejected(self):
        with pytest.raises(ValueError):
            AbsorptionField(lambda r: np.ones_like(r), r_support=1.5)

    def test_vector_evaluation_is_radial(self):
        field = AbsorptionField.bump()
        rng = np.random.default_rng(1)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radii = np.array([0.0, 0.1, 0.3, 0.49, 0.7])
        pts = radii[:, None] * direction[None, :]
        np.testing.assert_allclose(field(pts), field.eval_radial(radii), atol=1e-14)

    def test_zero_field_is_zero(self):
        assert AbsorptionField.zero().is_zero()
        assert not AbsorptionField.bump().is_zero()
