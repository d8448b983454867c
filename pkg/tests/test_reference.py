import numpy as np
import pytest
from scipy.stats import norm

from skewmatch.models import GlmData, ProbitModel
from skewmatch.reference import (
    ChainDiagnostics,
    MarginalCurve,
    effective_sample_size,
    grid_marginals,
    kde,
    l1_accuracy,
    mh_sample,
    split_rhat,
)

from test_estimators import QuadraticModel, pure_prior_model


def normal_curve(mean, sd, half_width=8.0, n=2001):
    grid = np.linspace(mean - half_width * sd, mean + half_width * sd, n)
    return MarginalCurve(grid=grid, density=norm.pdf(grid, mean, sd), label="normal")


def small_probit(seed=0, n=6, p=1, prior_variance=100.0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = rng.integers(0, 2, size=n).astype(float)
    return ProbitModel(GlmData(X, y), prior_variance)


class TestMarginalCurve:
    def test_validation(self):
        grid = np.linspace(-5, 5, 101)
        with pytest.raises(ValueError, match="increasing"):
            MarginalCurve(grid=grid[::-1], density=norm.pdf(grid))
        with pytest.raises(ValueError, match="mass"):
            MarginalCurve(grid=grid, density=2.0 * norm.pdf(grid))
        with pytest.raises(ValueError, match="nonnegative"):
            MarginalCurve(grid=grid, density=-norm.pdf(grid))

    def test_mean_sd(self):
        curve = normal_curve(1.5, 2.0)
        mean, sd = curve.mean_sd()
        assert mean == pytest.approx(1.5, abs=1e-9)
        assert sd == pytest.approx(2.0, rel=1e-6)

    def test_csv(self, tmp_path):
        curve = normal_curve(0.0, 1.0)
        path = tmp_path / "curve.csv"
        curve.write_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 0], curve.grid)
        np.testing.assert_allclose(data[:, 1], curve.density)


class TestMhSample:
    def test_gaussian_target(self):
        c = np.array([1.0, -0.5])
        a_mat = np.array([[2.0, 0.6], [0.6, 1.5]])
        model = QuadraticModel(c, a_mat)
        draws, diag = mh_sample(model, n_iter=6000, n_warmup=1000, n_chains=4, seed=7)
        assert diag.converged
        assert np.all(diag.rhat < 1.01)
        for j in range(2):
            mcse = draws[:, j].std() / np.sqrt(diag.ess[j])
            assert abs(draws[:, j].mean() - c[j]) < 4.0 * mcse

    def test_probit_kde_matches_quadrature(self):
        model = small_probit(seed=3, n=6, p=1)
        draws, diag = mh_sample(model, seed=1)
        assert diag.converged
        (ref,) = grid_marginals(model)
        mean, sd = ref.mean_sd()
        curve = kde(draws[:, 0], np.linspace(mean - 5 * sd, mean + 5 * sd, 1001))
        acc = l1_accuracy(ref, curve, mean, sd)
        assert acc > 0.99

    def test_deterministic(self):
        model = small_probit(seed=5, n=6, p=1)
        a, _ = mh_sample(model, n_iter=1500, n_warmup=500, n_chains=2, seed=11)
        b, _ = mh_sample(model, n_iter=1500, n_warmup=500, n_chains=2, seed=11)
        assert np.array_equal(a, b)


class TestDiagnostics:
    def test_iid_pseudo_chain_rhat(self):
        rng = np.random.default_rng(0)
        chains = rng.standard_normal((4, 5000, 2))
        rhat = split_rhat(chains)
        assert np.all(rhat < 1.01)
        # structural floor of the split estimator
        assert np.all(rhat >= np.sqrt(1.0 - 1.0 / 2500) - 1e-12)

    def test_iid_ess_near_sample_size(self):
        rng = np.random.default_rng(1)
        chains = rng.standard_normal((4, 4000, 1))
        ess = effective_sample_size(chains)
        assert 0.5 * 16000 < ess[0] < 1.5 * 16000

    def test_converged_property(self):
        diag = ChainDiagnostics(
            rhat=np.array([1.0, 1.2]), ess=np.array([100.0, 100.0]),
            accepted_fraction=0.3,
        )
        assert not diag.converged


class TestGridMarginals:
    def test_pure_prior_matches_gaussian(self):
        model = pure_prior_model(2, prior_variance=10_000.0)
        curves = grid_marginals(model)
        for curve in curves:
            exact = norm.pdf(curve.grid, 0.0, 100.0)
            assert np.max(np.abs(curve.density - exact)) < 1e-6

    def test_grid_convergence(self):
        # doubled resolution on nested nodes (2n-1 points) leaves the curves
        # unchanged to well below the certification tolerances
        model = small_probit(seed=2, n=8, p=2)
        coarse = grid_marginals(model, n_points_per_axis=400)
        fine = grid_marginals(model, n_points_per_axis=799)
        for c, f in zip(coarse, fine):
            np.testing.assert_allclose(f.grid[::2], c.grid)
            diff = np.trapezoid(np.abs(c.density - f.density[::2]), c.grid)
            assert diff < 1e-6

    def test_normalized(self):
        model = small_probit(seed=1, n=4, p=1)
        (curve,) = grid_marginals(model)
        assert np.trapezoid(curve.density, curve.grid) == pytest.approx(1.0, abs=1e-8)

    def test_p_too_large(self):
        model = pure_prior_model(4)
        with pytest.raises(ValueError, match="p <= 3"):
            grid_marginals(model)


class TestKde:
    def test_standard_normal(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(10**6)
        grid = np.linspace(-5.0, 5.0, 1001)
        curve = kde(x, grid)
        exact = normal_curve(0.0, 1.0)
        acc = l1_accuracy(exact, curve, 0.0, 1.0)
        assert acc > 0.99

    def test_shift_equivariance(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal(5000)
        grid = np.linspace(-4, 4, 501)
        base = kde(x, grid)
        shifted = kde(x + 2.5, grid + 2.5)
        np.testing.assert_allclose(shifted.density, base.density, rtol=1e-12)

    def test_zero_spread_rejected(self):
        with pytest.raises(ValueError, match="spread"):
            kde(np.ones(100), np.linspace(0, 2, 11))


class TestL1Accuracy:
    def test_self_accuracy(self):
        curve = normal_curve(0.0, 1.0)
        assert l1_accuracy(curve, curve, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_mass_inside_bounds(self):
        # essentially no overlap, with both densities inside the window
        ref = normal_curve(0.0, 0.5)
        far = lambda x: norm.pdf(x, 4.0, 0.1)
        assert l1_accuracy(ref, far, 1.0, 0.8) < 0.01

    def test_mass_outside_bounds_counts_as_missing(self):
        # the window is pinned to the reference moments, so an approximation
        # shifted beyond it contributes nothing inside and accuracy is 0.5
        ref = normal_curve(0.0, 1.0)
        far = lambda x: norm.pdf(x, 10.0, 1.0)
        assert l1_accuracy(ref, far, 0.0, 1.0) == pytest.approx(0.5, abs=1e-3)

    def test_shifted_normal_closed_form(self):
        # 1 - TV(N(0,1), N(0.5,1)) = 2 - 2 Phi(0.25), frozen by quadrature
        ref = normal_curve(0.0, 1.0, half_width=10.0, n=20001)
        approx = lambda x: norm.pdf(x, 0.5, 1.0)
        acc = l1_accuracy(ref, approx, 0.0, 1.0)
        assert acc == pytest.approx(0.8025873486341526, abs=1e-3)

    def test_symmetric_in_curves(self):
        a = normal_curve(0.0, 1.0)
        b = normal_curve(0.3, 1.2)
        acc_ab = l1_accuracy(a, b, 0.0, 1.0)
        acc_ba = l1_accuracy(b, a, 0.0, 1.0)
        assert acc_ab == pytest.approx(acc_ba, abs=1e-12)

    def test_clamped_to_unit_interval(self):
        ref = normal_curve(0.0, 1.0)
        assert 0.0 <= l1_accuracy(ref, lambda x: np.zeros_like(x), 0.0, 1.0) <= 1.0
