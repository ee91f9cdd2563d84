import json
import math
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from equigap.cli import EXIT_OK, main
from equigap.diffusion import (
    Schedule,
    ScoreField,
    endpoint_orbit_error,
    max_angular_gap,
    reverse_sample,
)
from equigap.groups import GroupSpec, augment, orbit_sq_dist, quotient_coordinates
from equigap.manifolds import (
    ManifoldSpec,
    PointCloud,
    sample_conditional_wave,
    sample_uniform,
)
from equigap.nnindex import NNIndex, scan_nearest
from equigap.quantize import kmeanspp_init, optimal_gap
from equigap.repgap import (
    PredictionSpace,
    Predictor,
    conditional_gap,
    discrete_conditional_gap,
    gap,
    gap_cell,
    random_gap_curve,
    sandwich,
)
from equigap.scaling import (
    expected_random_gap,
    expected_segment_gap,
    fit_loglog,
    fit_per_seed,
    mean_curve,
    summarize_dims,
)
from equigap.storage import write_cloud
from equigap.utils import make_rng


slow_tests = os.environ.get("EQUIGAP_SLOW_TESTS", None)

# Minutes-long runs
if slow_tests is None:
    raise unittest.SkipTest("EQUIGAP_SLOW_TESTS is not set")


SEEDS = [0, 1, 2, 3, 4]
N_GRID = [32, 64, 128, 256, 512, 1024]


def oracle_nearest(points, y):
    """Exhaustive scan, coordinates accumulated left to right"""
    diff = points - y
    d2 = diff[:, 0] ** 2
    for k in range(1, diff.shape[1]):
        d2 = d2 + diff[:, k] ** 2
    i = int(np.argmin(d2))
    return i, float(d2[i])


def curve_fit(spec, group, n_values=N_GRID, seeds=SEEDS, n_eval=1000):
    return fit_loglog(mean_curve(random_gap_curve(spec, group, n_values, seeds, n_eval)))


class Oracles(unittest.TestCase):

    def test_kd_tree_r8(self):
        """1000 queries in R^8 match the exhaustive scan exactly"""
        rng = make_rng(0, "acceptance", "kd8")
        points = rng.standard_normal((1000, 8))
        queries = rng.standard_normal((1000, 8))
        index, d2 = NNIndex(PointCloud(points=points)).nearest_many(queries, method="tree")
        for q, i, d in zip(queries, index, d2):
            self.assertEqual((int(i), float(d)), oracle_nearest(points, q))

    def test_kd_tree_instances(self):
        """100 random instances with n <= 2000, d <= 16"""
        rng = make_rng(1, "acceptance", "kd")
        for instance in range(100):
            n = int(rng.integers(1, 2001))
            d = int(rng.integers(1, 17))
            points = rng.uniform(-1.0, 1.0, (n, d))
            queries = rng.uniform(-1.5, 1.5, (20, d))
            index, d2 = NNIndex(PointCloud(points=points)).nearest_many(queries, method="tree")
            for q, i, dist in zip(queries, index, d2):
                with self.subTest(instance=instance):
                    self.assertEqual((int(i), float(dist)), oracle_nearest(points, q))

    def test_orbit_distance_brute_force(self):
        """Closed-form rotation orbit distance against a 10^4-angle orbit"""
        group = GroupSpec.rotation()
        rng = make_rng(2, "acceptance", "orbit")
        Y = rng.standard_normal((1000, 3))
        Z = rng.standard_normal((1000, 3))
        closed = np.array([orbit_sq_dist(group, y, z) for y, z in zip(Y, Z)])
        brute = np.array([
            np.min(np.sum((augment(group, PointCloud(points=[z]), 10_000).points - y) ** 2, axis=1))
            for y, z in zip(Y, Z)
        ])
        self.assertTrue(np.all(closed <= brute + 1e-12))
        np.testing.assert_allclose(closed, brute, rtol=1e-4, atol=1e-6)

    def test_score_mixture_gradient(self):
        """Score against the direct gradient of the Gaussian mixture density"""
        rng = make_rng(3, "acceptance", "score")
        data = rng.standard_normal((10, 3))
        field = ScoreField(dataset=PointCloud(points=data))
        t = field.schedule.T // 2
        alpha = field.schedule.alpha[t]
        var = 1.0 - alpha
        for y in rng.standard_normal((20, 3)):
            diff = y - math.sqrt(alpha) * data
            density = np.exp(-np.sum(diff**2, axis=1) / (2.0 * var))
            grad = -(density[:, None] * diff).sum(axis=0) / var
            np.testing.assert_allclose(
                field.score(y, t), grad / density.sum(), rtol=1e-8, atol=1e-10
            )


class Sampling(unittest.TestCase):

    def test_sphere_mean(self):
        cloud = sample_uniform(ManifoldSpec.hypersphere(3), 100_000, 11)
        self.assertTrue(np.all(np.abs(cloud.points.mean(axis=0)) < 0.02))

    def test_wave_input_uniform(self):
        wave = ManifoldSpec.wave()
        x = sample_conditional_wave(wave, 10_000, 5).points[:, 0]
        result = stats.kstest(x, "uniform", args=(0.0, wave.wave_length))
        self.assertLess(result.statistic, 0.02)

    def test_kmeanspp_separates_clusters(self):
        rng = make_rng(4, "acceptance", "clusters")
        sample = PointCloud(points=np.concatenate([
            rng.normal(0.0, 0.1, (50, 2)),
            rng.normal(100.0, 0.1, (50, 2)),
        ]))
        split = 0
        for seed in range(1000):
            picks = kmeanspp_init(sample, 2, seed).points
            split += (picks[0, 0] < 50.0) != (picks[1, 0] < 50.0)
        self.assertGreaterEqual(split, 990)


class Constants(unittest.TestCase):

    def test_optimal_segment(self):
        """n^2 times the optimal gap of [0, 1] tends to 1/12"""
        cube = ManifoldSpec.hypercube(1)
        for n in (32, 64, 128):
            with self.subTest(n=n):
                est = optimal_gap(cube, GroupSpec.identity(), n, 0, restarts=2)
                self.assertGreater(n * n * est.value, (1.0 / 12.0) * 0.98)
                self.assertLess(n * n * est.value, (1.0 / 12.0) * 1.05)

    def test_optimal_segment_from_kmeanspp(self):
        """Without the closed-form start Lloyd still reaches 1/12 on the segment"""
        cube = ManifoldSpec.hypercube(1)
        for n in (32, 64, 128):
            est = optimal_gap(
                cube, GroupSpec.identity(), n, 0, restarts=2, reference_size=20_000,
                max_iter=1000, tol=0.0, analytic_init=False,
            )
            with self.subTest(n=n):
                self.assertLess(abs(n * n * est.value - 1.0 / 12.0), 0.1 / 12.0)

    def test_translation_quotient_slope_from_kmeanspp(self):
        """Optimal gaps of the square modulo x-translations fall like n^-2"""
        square = ManifoldSpec.hypercube(2)
        group = GroupSpec.translation(0, 1.0, -0.5)
        curve = []
        for n in (16, 32, 64, 128, 256, 512):
            est = optimal_gap(
                square, group, n, 0, restarts=1, reference_size=20_000,
                max_iter=600, tol=0.0, analytic_init=False,
            )
            curve.append((n, est.value))
        self.assertLess(abs(fit_loglog(curve).slope + 2.0), 0.15)

    def test_optimal_square(self):
        square = ManifoldSpec.hypercube(2)
        est = optimal_gap(square, GroupSpec.identity(), 256, 0, restarts=2)
        target = 5.0 / (18.0 * math.sqrt(3.0))
        self.assertLess(abs(256 * est.value - target) / target, 0.1)

    def test_random_segment(self):
        """Mean of n^2 times the i.i.d. gap of [0, 1] is close to 1/2"""
        cube = ManifoldSpec.hypercube(1)
        for n in (100, 128):
            values = [
                n * n * gap_cell(cube, GroupSpec.identity(), n, seed, n_eval=10_000).value
                for seed in range(200)
            ]
            with self.subTest(n=n):
                self.assertGreater(np.mean(values), 0.45)
                self.assertLess(np.mean(values), 0.55)

    def test_translation_covers_segment(self):
        cube = ManifoldSpec.hypercube(1)
        group = GroupSpec.translation(0, 1.0, -0.5)
        for n in (1, 5):
            self.assertLess(gap_cell(cube, group, n, 0).value, 1e-6)


class Gaps(unittest.TestCase):

    def setUp(self):
        self.sphere = ManifoldSpec.hypersphere(3)

    def test_dense_prediction_space(self):
        dense = PredictionSpace.discrete(sample_uniform(self.sphere, 100_000, 1))
        small = PredictionSpace.discrete(sample_uniform(self.sphere, 1000, 2))
        dense_gap = gap(self.sphere, dense, 1000, 3).value
        self.assertLess(dense_gap, 10 * 4.0 / 100_000)
        self.assertLess(dense_gap, 0.1 * gap(self.sphere, small, 1000, 3).value)

    def test_single_orbit_quadrature(self):
        """One point with its z-rotation orbit: the equator circle"""
        pred = PredictionSpace.for_group(PointCloud(points=[[1.0, 0.0, 0.0]]), GroupSpec.rotation())
        # uniform sphere: height h ~ U[-1, 1], distance^2 to the equator 2 - 2 sqrt(1 - h^2)
        expected, _ = integrate.quad(lambda h: (2.0 - 2.0 * math.sqrt(1.0 - h * h)) / 2.0, -1.0, 1.0)
        est = gap(self.sphere, pred, 200_000, 0)
        self.assertLess(abs(est.value - expected) / expected, 0.01)

    def test_sphere_slopes(self):
        plain = curve_fit(self.sphere, GroupSpec.identity())
        self.assertLess(abs(plain.slope + 1.0), 0.15)
        rotation = curve_fit(self.sphere, GroupSpec.rotation())
        self.assertLess(abs(rotation.slope + 2.0), 0.3)

    def test_synthetic_dimensions(self):
        """
        Per-seed dimension estimates of i.i.d. gap curves

        The periodic cube and the segment are held to the fit of their exact
        mean curves; the sphere rows to fixed windows.
        """
        cube_grid = [2**k for k in range(6, 13)]
        torus = fit_loglog([(n, expected_random_gap(5, n)) for n in cube_grid]).estimated_dim
        segment = fit_loglog([(n, expected_segment_gap(n)) for n in N_GRID]).estimated_dim
        cases = [
            # name, manifold, group, n grid, true dim, (low, high)
            ("cube-5-periodic", ManifoldSpec.hypercube(5, periodic=True), GroupSpec.identity(),
             cube_grid, 5.0, (torus - 0.15, torus + 0.15)),
            ("cube-1", ManifoldSpec.hypercube(1), GroupSpec.identity(),
             N_GRID, 1.0, (segment - 0.05, segment + 0.05)),
            ("sphere-1", ManifoldSpec.hypersphere(2), GroupSpec.identity(),
             N_GRID, 1.0, (0.94, 1.06)),
            ("sphere-5", ManifoldSpec.hypersphere(6), GroupSpec.identity(),
             cube_grid, 5.0, (4.79, 5.03)),
            ("swiss-roll", ManifoldSpec.swiss_roll(), GroupSpec.identity(),
             N_GRID, 2.0, (1.7, 2.3)),
            ("deformed-sphere", ManifoldSpec.deformed_sphere(), GroupSpec.identity(),
             N_GRID, 2.0, (1.7, 2.3)),
        ]
        for name, spec, group, n_values, true_dim, (low, high) in cases:
            rows = random_gap_curve(spec, group, n_values, SEEDS, n_eval=10_000)
            summary = summarize_dims(fit_per_seed(rows).values())
            with self.subTest(manifold=name):
                self.assertEqual(summary.n_undefined, 0)
                self.assertLess(abs(summary.mean - true_dim), 0.3)
                self.assertGreater(summary.mean, low)
                self.assertLess(summary.mean, high)

    def test_class_conditional_slope(self):
        """A circle class and a sphere class: the larger dimension wins"""
        manifolds = {"circle": ManifoldSpec.hypersphere(2), "sphere": self.sphere}
        curve = []
        for n in N_GRID:
            values = []
            for seed in SEEDS:
                datasets = {c: sample_uniform(m, n, seed) for c, m in manifolds.items()}
                values.append(discrete_conditional_gap(datasets, manifolds, seed=seed).value)
            curve.append((n, float(np.mean(values))))
        slope = fit_loglog(curve).slope
        self.assertGreater(slope, -1.2)
        self.assertLess(slope, -0.85)


class Conditional(unittest.TestCase):

    def setUp(self):
        self.wave = ManifoldSpec.wave()
        self.group = GroupSpec.translation(1, self.wave.wave_depth)

    def test_equivariant_slope(self):
        """The y-translation quotient of the wave is one-dimensional"""
        curve = []
        for n in (32, 64, 128, 256, 512):
            values = [
                conditional_gap(
                    self.wave,
                    Predictor.fit(sample_conditional_wave(self.wave, n, seed), group=self.group),
                    n_eval=1000,
                    seed=seed,
                    grid_size=20_000,
                ).value
                for seed in SEEDS
            ]
            curve.append((n, float(np.mean(values))))
        self.assertLessEqual(fit_loglog(curve).slope, -1.8)

    def test_sandwich_random_configurations(self):
        rng = make_rng(5, "acceptance", "sandwich")
        for k in range(20):
            wave = ManifoldSpec.wave(
                wave_radius=float(rng.uniform(0.25, 1.0)),
                wave_arcs=int(rng.integers(1, 7)),
                wave_depth=float(rng.uniform(0.5, 3.0)),
            )
            n = int(rng.integers(20, 400))
            group = GroupSpec.translation(1, wave.wave_depth)
            pred = Predictor.fit(sample_conditional_wave(wave, n, k), group=group)
            report = sandwich(wave, pred, n_eval=1000, seed=k, grid_size=20_000)
            with self.subTest(config=k):
                self.assertTrue(report.upper_holds)
                self.assertTrue(report.lower_holds)


class Diffusion(unittest.TestCase):

    def test_separated_points(self):
        angles = 2.0 * math.pi * np.arange(8) / 8
        data = PointCloud(points=2.0 * np.column_stack([np.cos(angles), np.sin(angles)]))
        result = reverse_sample(ScoreField(dataset=data), 1000, 0)
        hits = np.zeros(8, dtype=int)
        for y in result.endpoints.points:
            i, d2 = oracle_nearest(data.points, y)
            self.assertLess(math.sqrt(d2), 1e-2)
            hits[i] += 1
        self.assertTrue(np.all(hits >= 1))

    def test_circle_orbit(self):
        data = PointCloud(points=[[0.8, 0.0, 0.6]])
        group = GroupSpec.rotation()
        result = reverse_sample(ScoreField(dataset=data, group=group), 1000, 1)
        points = result.endpoints.points
        np.testing.assert_allclose(np.hypot(points[:, 0], points[:, 1]), 0.8, atol=1e-2)
        np.testing.assert_allclose(points[:, 2], 0.6, atol=1e-2)
        n = result.endpoints.n
        self.assertLess(max_angular_gap(result.endpoints, group), 3.0 * 2.0 * math.pi / n * math.log(n))

    def test_sphere_rotation_endpoints(self):
        """12 points on the sphere: rotation endpoints lie on G(D) and cover it"""
        data = sample_uniform(ManifoldSpec.hypersphere(3), 12, 0)
        group = GroupSpec.rotation()
        field = ScoreField(dataset=data, group=group, schedule=Schedule.geometric(1000))
        result = reverse_sample(field, 1000, 0)
        self.assertEqual(result.diverged, ())
        self.assertLess(endpoint_orbit_error(result.endpoints, data, group)[0], 1e-3)
        self.assertLess(max_angular_gap(result.endpoints, group), 3.0 * 2.0 * math.pi / 1000 * math.log(1000))

    def test_sphere_identity_endpoints(self):
        """Without the group the endpoints land on the dataset itself"""
        data = sample_uniform(ManifoldSpec.hypersphere(3), 12, 0)
        plain = reverse_sample(ScoreField(dataset=data, schedule=Schedule.geometric(1000)), 1000, 0)
        self.assertEqual(plain.diverged, ())
        err_max, _ = endpoint_orbit_error(plain.endpoints, data, GroupSpec.identity())
        self.assertLess(math.sqrt(err_max), 1e-2)

    def test_step_refinement(self):
        """More reverse steps bring the endpoints closer to G(D)"""
        heights = -0.875 + 0.25 * np.arange(8)
        angles = 2.0 * math.pi * np.arange(8) / 8
        rho = np.sqrt(1.0 - heights**2)
        data = PointCloud(points=np.column_stack([rho * np.cos(angles), rho * np.sin(angles), heights]))
        group = GroupSpec.rotation()
        medians, means = [], []
        for T in (100, 200, 400, 800):
            field = ScoreField(dataset=data, group=group, quadrature_K=512, schedule=Schedule.geometric(T))
            endpoints = reverse_sample(field, 200, 0).endpoints
            _, d2 = scan_nearest(
                quotient_coordinates(group, data.points), quotient_coordinates(group, endpoints.points)
            )
            medians.append(float(np.median(d2)))
            means.append(float(np.mean(d2)))
        for coarse, fine in zip(medians, medians[1:]):
            self.assertLessEqual(fine, coarse + 1e-14)
        self.assertLessEqual(means[-1], means[0] + 1e-12)

    def test_endpoint_gap_matches_orbit_gap(self):
        """Gap of the sampler endpoints against the gap of the exact orbits"""
        sphere = ManifoldSpec.hypersphere(3)
        data = sample_uniform(sphere, 12, 0)
        group = GroupSpec.rotation()
        field = ScoreField(dataset=data, group=group, quadrature_K=1024, schedule=Schedule.geometric(200))
        # about 400 endpoints per orbit
        endpoints = reverse_sample(field, 5000, 0).endpoints
        sampled = gap(sphere, PredictionSpace.diffusion_endpoints(endpoints), 5000, 1).value
        exact = gap(sphere, PredictionSpace.for_group(data, group), 5000, 1).value
        self.assertLess(abs(sampled - exact) / exact, 0.05)


class Cli(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def scaling_dim(self, *argv):
        out = self.dir / "scaling"
        self.assertEqual(main(["scaling", *argv, "--out", str(out)]), EXIT_OK)
        return json.loads((out / "gaps.json").read_text())["fit"]["estimated_dim"]

    def dimfit_dim(self, cloud):
        path = self.dir / "cloud.bin"
        write_cloud(path, cloud)
        out = self.dir / "dimfit"
        self.assertEqual(main(["dimfit", "--input", str(path), "--out", str(out)]), EXIT_OK)
        return json.loads((out / "dimfit.json").read_text())["fit"]["estimated_dim"]

    def test_scaling_sphere(self):
        dim = self.scaling_dim("--manifold", "sphere", "--group", "identity")
        self.assertGreaterEqual(dim, 1.8)
        self.assertLessEqual(dim, 2.2)
        dim = self.scaling_dim("--manifold", "sphere", "--group", "rotation")
        self.assertGreaterEqual(dim, 0.85)
        self.assertLessEqual(dim, 1.15)

    def test_scaling_optimal_segment(self):
        dim = self.scaling_dim(
            "--manifold", "hypercube", "--dim", "1", "--mode", "optimal",
            "--restarts", "1", "--n-grid", "32,64,128,256", "--seeds", "0",
        )
        self.assertGreaterEqual(dim, 0.95)
        self.assertLessEqual(dim, 1.15)

    def test_dimfit_sphere(self):
        sphere = sample_uniform(ManifoldSpec.hypersphere(3), 20_000, 0)
        dim = self.dimfit_dim(sphere)
        self.assertLess(abs(dim - 2.0), 0.2)

        doubled = PointCloud(points=np.concatenate([sphere.points, sphere.points]))
        self.assertLess(abs(self.dimfit_dim(doubled) - dim), 0.1)

    def test_dimfit_swiss_roll(self):
        dim = self.dimfit_dim(sample_uniform(ManifoldSpec.swiss_roll(), 20_000, 0))
        self.assertGreaterEqual(dim, 1.7)
        self.assertLessEqual(dim, 2.3)
