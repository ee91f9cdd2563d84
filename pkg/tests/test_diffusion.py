import math
import unittest

import numpy as np
from pydantic import ValidationError

from equigap.diffusion import (
    DEFAULT_ORBIT_K,
    MAX_ORBIT_K,
    Schedule,
    ScheduleKind,
    ScoreField,
    ddim_step,
    endpoint_orbit_error,
    max_angular_gap,
    reverse_flow,
    reverse_sample,
    score_concentration_check,
)
from equigap.groups import GroupSpec, act, augment
from equigap.manifolds import PointCloud
from equigap.utils import NumericalError, make_rng


def rotation_matrix(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


class ScheduleTest(unittest.TestCase):

    def test_linear(self):
        schedule = Schedule.linear(100)
        self.assertEqual(schedule.alpha.shape, (101,))
        self.assertEqual(schedule.alpha[0], 1.0)
        self.assertAlmostEqual(schedule.alpha[1], 0.9999)
        self.assertAlmostEqual(schedule.alpha[100], 1e-4)
        self.assertEqual(Schedule.linear(1).alpha.tolist(), [1.0, 1e-4])

    def test_linear_start(self):
        first = [Schedule.linear(T).alpha[1] for T in (100, 1000, 10_000)]
        self.assertAlmostEqual(1.0 - first[1], 1e-5)
        self.assertTrue(first[0] < first[1] < first[2] < 1.0)

    def test_geometric(self):
        schedule = Schedule.geometric(100)
        self.assertEqual(schedule.alpha.shape, (101,))
        self.assertEqual(schedule.alpha[0], 1.0)
        self.assertAlmostEqual(schedule.alpha[1], 1.0 / (1.0 + 1e-4))
        self.assertAlmostEqual(schedule.alpha[100], 1.0 / (1.0 + 1e4))
        a = schedule.alpha[1:]
        sigma = np.sqrt((1.0 - a) / a)
        np.testing.assert_allclose(np.diff(np.log(sigma)), math.log(1e6) / 99, rtol=1e-6)
        np.testing.assert_allclose(Schedule.geometric(1).alpha, [1.0, 1.0 / (1.0 + 1e4)])
        # the first step moves closer to the data as T grows
        self.assertLess(1.0 - Schedule.geometric(1000).alpha[1], 1.0 - schedule.alpha[1])
        with self.assertRaises(ValueError):
            Schedule.geometric(10, sigma_min=0.0)
        with self.assertRaises(ValueError):
            Schedule.geometric(10, sigma_min=200.0)

    def test_of(self):
        np.testing.assert_array_equal(
            Schedule.of(ScheduleKind.LINEAR, 50).alpha, Schedule.linear(50).alpha
        )
        np.testing.assert_array_equal(Schedule.of("geometric", 50).alpha, Schedule.geometric(50).alpha)
        with self.assertRaises(ValueError):
            Schedule.of("cosine", 50)

    def test_invalid(self):
        with self.assertRaises(ValidationError):
            Schedule(T=2, alpha=[1.0, 0.5, 0.7])
        with self.assertRaises(ValidationError):
            Schedule(T=2, alpha=[0.9, 0.5, 0.1])
        with self.assertRaises(ValidationError):
            Schedule(T=3, alpha=[1.0, 0.5, 0.1])
        with self.assertRaises(ValueError):
            Schedule.linear(10, start=0.5, end=0.9)

    def test_steps(self):
        schedule = Schedule.linear(10)
        with self.assertRaises(ValueError):
            schedule.check_step(0)
        with self.assertRaises(ValueError):
            schedule.beta(11)
        a = schedule.alpha[3]
        self.assertAlmostEqual(schedule.beta(3), 2.0 * (1.0 - a) / a)


class Score(unittest.TestCase):

    def setUp(self):
        self.schedule = Schedule.linear(100)

    def test_single_point(self):
        z = np.array([1.0, -2.0])
        field = ScoreField(dataset=PointCloud(points=[z]), schedule=self.schedule)
        y = np.array([0.3, 0.4])
        a = self.schedule.alpha[40]
        np.testing.assert_allclose(
            field.score(y, 40), -(y - math.sqrt(a) * z) / (1.0 - a)
        )
        self.assertIsNone(field.K)

    def test_symmetric(self):
        field = ScoreField(dataset=PointCloud(points=[[1.0, 0.0], [-1.0, 0.0]]))
        np.testing.assert_allclose(field.score([0.0, 0.0], 50), [0.0, 0.0], atol=1e-12)
        self.assertEqual(field.score(np.zeros((4, 2)), 50).shape, (4, 2))

    def test_invalid(self):
        data = PointCloud(points=[[1.0, 0.0, 0.0]])
        with self.assertRaises(ValidationError):
            ScoreField(dataset=data, group=GroupSpec.translation(0, 1.0))
        with self.assertRaises(ValidationError):
            ScoreField(dataset=PointCloud.empty(3))
        with self.assertRaises(ValidationError):
            ScoreField(dataset=PointCloud(points=[[1.0]]), group=GroupSpec.rotation())
        field = ScoreField(dataset=data)
        with self.assertRaises(ValueError):
            field.score([0.0, 0.0, 0.0], 0)
        with self.assertRaises(ValueError):
            field.score([0.0, 0.0], 5)

    def test_equivariance(self):
        rng = make_rng(0, "test")
        data = rng.normal(size=(5, 2))
        R = rotation_matrix(0.7)
        field = ScoreField(dataset=PointCloud(points=data))
        rotated = ScoreField(dataset=PointCloud(points=data @ R.T))
        y = rng.normal(size=(8, 2))
        for t in (1, 30, 100):
            np.testing.assert_allclose(
                rotated.score(y @ R.T, t), field.score(y, t) @ R.T, atol=1e-8
            )

    def test_orbit_components(self):
        data = PointCloud(points=[[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]])
        field = ScoreField(dataset=data, group=GroupSpec.rotation(), quadrature_K=64)
        self.assertEqual(field.K, 64)
        np.testing.assert_array_equal(
            field.components, augment(GroupSpec.rotation(), data, 64).points
        )

    def test_adaptive_quadrature(self):
        data = PointCloud(points=[[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]])
        field = ScoreField(dataset=data, group=GroupSpec.rotation())
        K = field.K
        self.assertGreaterEqual(K, DEFAULT_ORBIT_K)
        self.assertLessEqual(K, MAX_ORBIT_K)
        self.assertEqual(K & (K - 1), 0)


class Flow(unittest.TestCase):

    def setUp(self):
        self.data = PointCloud(points=[[2.0, 0.0], [-1.0, 1.5], [0.0, -2.0]])
        self.field = ScoreField(dataset=self.data)

    def test_fixed_point(self):
        z = self.data.points[1]
        alpha = self.field.schedule.alpha
        for t in (2, 5, 10):
            y = math.sqrt(alpha[t]) * z
            prev = ddim_step(self.field, y, t)
            np.testing.assert_allclose(prev / math.sqrt(alpha[t - 1]), z, atol=1e-6)

    def test_endpoints_on_dataset(self):
        result = reverse_sample(self.field, 20, 0)
        self.assertEqual(result.endpoints.n, 20)
        self.assertEqual(result.sample_ids, tuple(range(20)))
        self.assertEqual(result.diverged, ())
        self.assertIsNone(result.trace)
        err_max, err_mean = endpoint_orbit_error(result.endpoints, self.data, GroupSpec.identity())
        self.assertLess(err_max, 1e-10)
        self.assertLessEqual(err_mean, err_max)

    def test_deterministic(self):
        a = reverse_sample(self.field, 5, 3)
        b = reverse_sample(self.field, 5, 3)
        np.testing.assert_array_equal(a.endpoints.points, b.endpoints.points)
        prefix = reverse_sample(self.field, 3, 3)
        np.testing.assert_allclose(
            prefix.endpoints.points, a.endpoints.points[:3], rtol=1e-10, atol=1e-12
        )

    def test_trace(self):
        result = reverse_sample(self.field, 4, 0, trace=True)
        T = self.field.schedule.T
        self.assertEqual(result.trace.shape, (T + 1, 4, 2))
        np.testing.assert_array_equal(result.trace[-1], result.endpoints.points)

    def test_flow_equivariance(self):
        R = rotation_matrix(1.1)
        rotated = ScoreField(dataset=PointCloud(points=self.data.points @ R.T))
        y_T = make_rng(1, "test").standard_normal((6, 2))
        a = reverse_flow(self.field, y_T).endpoints.points
        b = reverse_flow(rotated, y_T @ R.T).endpoints.points
        np.testing.assert_allclose(b, a @ R.T, atol=1e-6)

    def test_divergence(self):
        y_T = np.array([[0.1, 0.2], [1e7, 0.0]])
        result = reverse_flow(self.field, y_T)
        self.assertEqual(result.sample_ids, (0,))
        self.assertEqual(result.diverged, (1,))
        with self.assertRaises(NumericalError):
            reverse_flow(self.field, [[1e7, 0.0]])

    def test_rotation_orbit(self):
        data = PointCloud(points=[[1.0, 0.0, 0.5], [0.0, 0.8, -0.5]])
        group = GroupSpec.rotation()
        field = ScoreField(dataset=data, group=group, quadrature_K=512)
        result = reverse_sample(field, 30, 0)
        err_max, _ = endpoint_orbit_error(result.endpoints, data, group)
        self.assertLess(err_max, 1e-6)

    def test_orbit_error(self):
        group = GroupSpec.rotation()
        data = PointCloud(points=[[1.0, 0.0, 0.5]])
        moved = PointCloud(points=act(group, data.points, 2.0))
        err_max, _ = endpoint_orbit_error(moved, data, group)
        self.assertAlmostEqual(err_max, 0.0)
        orbit = augment(group, data, 16)
        self.assertLess(endpoint_orbit_error(orbit, data, group)[0], 1e-20)


class Concentration(unittest.TestCase):

    def test_cosine(self):
        data = PointCloud(points=[[2.0, 0.0], [-2.0, 0.0]])
        field = ScoreField(dataset=data)
        cosines = score_concentration_check(field, [1.5, 0.3], [50, 10, 2])
        self.assertEqual(len(cosines), 3)
        self.assertGreater(cosines[-1], 0.999)

    def test_scaled_residual(self):
        """A single point: the score points along y - sqrt(a_t) z at every step"""
        field = ScoreField(dataset=PointCloud(points=[[1.0, -2.0]]))
        cosines = score_concentration_check(field, [0.3, 0.4], [100, 50, 10, 1])
        np.testing.assert_allclose(cosines, 1.0, atol=1e-12)

    def test_tie(self):
        field = ScoreField(dataset=PointCloud(points=[[2.0, 0.0], [-2.0, 0.0]]))
        with self.assertRaises(ValueError):
            score_concentration_check(field, [0.0, 1.0], [10, 2])
        with self.assertRaises(ValueError):
            score_concentration_check(field, [1.0, 1.0], [2, 10])


class Angular(unittest.TestCase):

    def test_gap(self):
        group = GroupSpec.rotation()
        points = PointCloud(points=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.3]])
        self.assertAlmostEqual(max_angular_gap(points, group), math.pi)
        with self.assertRaises(ValueError):
            max_angular_gap(points, GroupSpec.identity())
