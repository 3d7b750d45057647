import numpy as np
import pytest

from distcausal.distspace import QuantileFunction, QuantileGrid
from distcausal.estimators import (
    Dataset,
    NuisancePair,
    Unit,
    cross_fit,
    influence_values,
)
from distcausal.inference import (
    bias_estimate,
    centered_covariance,
    confidence_band,
    covariance_estimate,
    pilot_bandwidth,
    select_bandwidth,
    simulate_gaussian_process,
    sup_quantile,
)
from distcausal.kernels import Bandwidth, Kernel

GRID = QuantileGrid(np.arange(1, 10) / 10.0)
T = len(GRID)


def unit(uid, a, x, values):
    return Unit(uid, a, np.atleast_1d(np.asarray(x, float)),
                QuantileFunction(GRID, np.asarray(values, float)))


class ConstantRegression:
    def __init__(self, base=0.0):
        self.base = base

    def predict_batch(self, a, x):
        return np.full((len(x), T), self.base)


class ConstantDensity:
    def __init__(self, value):
        self.value = value

    def density_batch(self, a, x):
        return np.full(len(x), self.value)


class TestPilotBandwidth:
    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            pilot_bandwidth(np.full(10, 2.0))

    def test_hand_value(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(100_000)
        a = (a - a.mean()) / a.std(ddof=1)  # exact unit sample sd
        assert pilot_bandwidth(a).h == pytest.approx(100_000 ** -0.2, rel=1e-12)

    def test_linearity_in_c(self):
        a = np.random.default_rng(1).normal(size=50)
        assert pilot_bandwidth(a, c=2.0).h == pytest.approx(
            2.0 * pilot_bandwidth(a, c=1.0).h
        )

    def test_needs_two_units(self):
        with pytest.raises(ValueError):
            pilot_bandwidth(np.array([1.0]))


class TestBiasEstimate:
    @staticmethod
    def _dataset():
        rng = np.random.default_rng(2)
        return Dataset(
            tuple(
                unit(str(i), rng.normal(), [rng.normal()],
                     np.sort(rng.normal(size=T)))
                for i in range(6)
            ),
            GRID,
        )

    def test_flat_estimator_gives_zero(self):
        theta = QuantileFunction(GRID, np.linspace(0, 1, T))
        got = bias_estimate(self._dataset(), None, Kernel(), 0.0, Bandwidth(0.2),
                            estimator=lambda bw: theta)
        np.testing.assert_array_equal(got, np.zeros(T))

    def test_recovers_planted_quadratic_bias(self):
        theta = np.linspace(1.0, 2.0, T)
        planted = np.linspace(-3.0, 3.0, T)

        def synthetic(bw):
            return QuantileFunction(GRID, theta + planted * bw**2)

        got = bias_estimate(self._dataset(), None, Kernel(), 0.0, Bandwidth(0.1),
                            estimator=synthetic)
        np.testing.assert_allclose(got, planted, atol=1e-10)

    def test_denominator_is_three_h_squared(self):
        # a linear-in-h estimator makes the two-point difference h, so the
        # returned value must be h / (3 h^2)
        h = 0.25

        def linear(bw):
            return QuantileFunction(GRID, np.full(T, bw))

        got = bias_estimate(self._dataset(), None, Kernel(), 0.0, Bandwidth(h),
                            estimator=linear)
        np.testing.assert_allclose(got, h / (3.0 * h * h))

    def test_default_estimator_is_dml(self):
        data = self._dataset()
        pair = NuisancePair(m=ConstantRegression(0.5), p=ConstantDensity(0.5))
        from distcausal.estimators import dist_dml

        h = Bandwidth(0.2)
        got = bias_estimate(data, pair, Kernel(), 0.0, h)
        big = dist_dml(data, pair, Kernel(), Bandwidth(2 * h.h), 0.0)
        small = dist_dml(data, pair, Kernel(), h, 0.0)
        np.testing.assert_allclose(
            got, (big.values - small.values) / (3.0 * h.h**2)
        )


class TestCovarianceEstimate:
    def test_identical_scores_give_zero(self):
        data = Dataset(
            tuple(unit(str(i), 10.0, [0.0], np.zeros(T)) for i in range(8)),
            GRID,
        )
        pair = NuisancePair(m=ConstantRegression(0.0), p=ConstantDensity(1.0))
        result = cross_fit(data, lambda _d: pair, "dml", Kernel("uniform"),
                           Bandwidth(1.0), 0.0, folds=2, seed=0)
        cov = covariance_estimate(data, result.folds, result.nuisances,
                                  Kernel("uniform"), 0.0, Bandwidth(1.0))
        np.testing.assert_allclose(cov, 0.0, atol=1e-14)

    def test_hand_two_level_matrix(self):
        grid2 = QuantileGrid(np.array([0.3, 0.7]))
        h = Bandwidth(1.0)
        kernel = Kernel("uniform")

        class ZeroRegression:
            def predict_batch(self, a, x):
                return np.zeros((len(x), 2))

        pair = NuisancePair(m=ZeroRegression(), p=ConstantDensity(0.5))
        rows = [np.array([1.0, 2.0]), np.array([3.0, 5.0]), np.array([0.0, 1.0])]
        units = tuple(
            Unit(str(i), 0.0, np.zeros(1), QuantileFunction(grid2, r))
            for i, r in enumerate(rows)
        )
        data = Dataset(units, grid2)
        # all units in one fold: K_h/p = 1, so phi_i = yq_i
        folds = (np.arange(3),)
        cov = covariance_estimate(data, folds, (pair,), kernel, 0.0, h)
        phi = np.stack(rows)
        first = phi.mean(axis=0)
        expected = h.h * (phi.T @ phi / 3.0 - np.outer(first, first))
        np.testing.assert_allclose(cov, expected, atol=1e-14)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        data = Dataset(
            tuple(
                unit(str(i), rng.normal(), [rng.normal()],
                     np.sort(rng.normal(size=T)))
                for i in range(10)
            ),
            GRID,
        )
        pair = NuisancePair(m=ConstantRegression(0.1), p=ConstantDensity(0.4))
        result = cross_fit(data, lambda _d: pair, "dml", Kernel("gaussian"),
                           Bandwidth(0.5), 0.0, folds=2, seed=1)
        cov = covariance_estimate(data, result.folds, result.nuisances,
                                  Kernel("gaussian"), 0.0, Bandwidth(0.5))
        np.testing.assert_array_equal(cov, cov.T)
        assert np.min(np.diag(cov)) > -1e-10

    def test_band_and_selection_covariances_agree(self):
        # the fold-moment and centered-sample forms coincide per fold
        rng = np.random.default_rng(4)
        data = Dataset(
            tuple(
                unit(str(i), rng.normal(), [rng.normal()],
                     np.sort(rng.normal(size=T)))
                for i in range(40)
            ),
            GRID,
        )
        pair = NuisancePair(m=ConstantRegression(0.0), p=ConstantDensity(0.5))
        h = Bandwidth(0.5)
        folds = (np.arange(40),)
        cov_band = covariance_estimate(data, folds, (pair,), Kernel("gaussian"),
                                       0.0, h)
        phi = influence_values(data, pair, Kernel("gaussian"), h, 0.0)
        cov_sel = centered_covariance(phi, h)
        np.testing.assert_allclose(cov_band, cov_sel, atol=1e-12)


class TestSelectBandwidth:
    def test_constant_profiles_closed_form(self):
        b, c, n = 2.0, 3.0, 1000
        expected = (c * T / (4.0 * n * b * b * T)) ** 0.2
        pilot = Bandwidth(expected)  # keep the grid around the optimum
        sel = select_bandwidth(np.full(T, b), np.full(T, c), n, pilot)
        assert sel.h_star.h == pytest.approx(expected, rel=1e-12)
        grid_step = sel.search_grid[1] / sel.search_grid[0]
        assert expected / grid_step <= sel.grid_minimizer <= expected * grid_step

    def test_zero_bias_degenerate_path(self):
        sel = select_bandwidth(np.zeros(T), np.ones(T), 100, Bandwidth(0.1))
        assert sel.degenerate_bias
        assert sel.h_star.h == pytest.approx(sel.search_grid[-1])

    def test_sample_size_scaling(self):
        bias = np.full(T, 1.5)
        cov = np.full(T, 2.0)
        pilot = Bandwidth(0.2)
        h1 = select_bandwidth(bias, cov, 1000, pilot).h_star.h
        h4 = select_bandwidth(bias, cov, 4000, pilot).h_star.h
        assert h4 == pytest.approx(h1 * 4.0 ** -0.2, rel=1e-10)

    def test_clamped_to_grid(self):
        sel = select_bandwidth(np.full(T, 1e6), np.full(T, 1e-12), 10**6,
                               Bandwidth(1.0))
        assert sel.h_star.h == pytest.approx(sel.search_grid[0])

    def test_closed_form_matches_grid_search_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            bias = rng.uniform(0.1, 3.0, size=T)
            cov = rng.uniform(0.1, 3.0, size=T)
            n = int(rng.integers(100, 100_000))
            closed = (cov.sum() / (4.0 * n * (bias**2).sum())) ** 0.2
            sel = select_bandwidth(bias, cov, n, Bandwidth(closed))
            step = sel.search_grid[1] / sel.search_grid[0]
            assert closed / step <= sel.grid_minimizer <= closed * step


class TestGaussianProcess:
    def test_zero_covariance(self):
        paths = simulate_gaussian_process(np.zeros((T, T)), 2000, seed=0)
        np.testing.assert_array_equal(paths.paths, 0.0)

    def test_identity_variance(self):
        paths = simulate_gaussian_process(np.eye(T), 50_000, seed=1).paths
        var = paths.var(axis=0)
        assert np.all(var > 0.97) and np.all(var < 1.03)

    def test_matches_target_covariance(self):
        rng = np.random.default_rng(6)
        root = rng.normal(size=(T, T)) / np.sqrt(T)
        cov = root @ root.T
        n = 50_000
        paths = simulate_gaussian_process(cov, n, seed=2).paths
        sample_cov = np.cov(paths.T, bias=True)
        scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
        assert np.max(np.abs(sample_cov - cov) / scale) < 5.0 * np.sqrt(2.0 / n) * 3

    def test_indefinite_falls_back_to_eigh(self):
        cov = np.eye(3)
        cov[2, 2] = -0.5
        paths = simulate_gaussian_process(cov, 2000, seed=3)
        assert paths.clipped_eigenvalues == 1
        np.testing.assert_allclose(paths.paths[:, 2], 0.0, atol=1e-12)

    def test_asymmetric_rejected(self):
        cov = np.eye(3)
        cov[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            simulate_gaussian_process(cov, 2000, seed=0)


class TestSupQuantile:
    def test_zero_paths(self):
        assert sup_quantile(np.zeros((2000, T)), 0.05) == 0.0

    def test_half_normal_975_point(self):
        z = np.random.default_rng(7).standard_normal((100_000, 1))
        assert sup_quantile(z, 0.05) == pytest.approx(2.241, abs=0.05)

    def test_monotone_in_alpha(self):
        paths = np.random.default_rng(8).standard_normal((5000, T))
        qs = [sup_quantile(paths, a) for a in (0.2, 0.1, 0.05, 0.01)]
        assert qs == sorted(qs)

    def test_minimum_path_count(self):
        with pytest.raises(ValueError):
            sup_quantile(np.zeros((999, T)), 0.05)


class TestConfidenceBand:
    def test_hand_arithmetic(self):
        theta = QuantileFunction(GRID, np.ones(T))
        rep = confidence_band(theta, np.full(T, 2.0), Bandwidth(0.1), 100, 1.0,
                              0.05)
        center = 1.0 - 2.0 * 0.01
        half = 1.0 / np.sqrt(100 * 0.1)
        np.testing.assert_allclose(rep.lower.values, center - half)
        np.testing.assert_allclose(rep.upper.values, center + half)
        assert half == pytest.approx(0.3162, abs=1e-4)

    def test_zero_q_degenerate(self):
        theta = QuantileFunction(GRID, np.ones(T))
        rep = confidence_band(theta, np.zeros(T), Bandwidth(0.1), 100, 0.0, 0.05)
        np.testing.assert_array_equal(rep.lower.values, rep.upper.values)

    def test_width_scaling_in_n(self):
        theta = QuantileFunction(GRID, np.ones(T))
        w = {}
        for n in (100, 400):
            rep = confidence_band(theta, np.zeros(T), Bandwidth(0.1), n, 1.0, 0.05)
            w[n] = rep.upper.values[0] - rep.lower.values[0]
        assert w[400] == pytest.approx(w[100] / 2.0)

    def test_report_serialization(self):
        theta = QuantileFunction(GRID, np.ones(T))
        rep = confidence_band(theta, np.zeros(T), Bandwidth(0.1), 100, 1.0, 0.05)
        doc = rep.to_dict()
        for key in ("levels", "theta", "bias", "h_star", "q_hat", "lower",
                    "upper", "alpha", "clipped_eigenvalues", "floor_hits"):
            assert key in doc
        assert doc["h_star"] == pytest.approx(0.1)
