import json

import numpy as np
import pytest

from skewmatch.estimators import GaussianApprox, ImportanceConfig, find_mode
from skewmatch.harness import (
    AccuracyReport,
    MethodSpec,
    SimDesign,
    detect_separation,
    improvement_decomposition,
    load_benchmark,
    run_dataset,
    run_experiment,
    run_method,
    simulate_dataset,
    summarize_reports,
    true_coefficients,
)
from skewmatch.models import GlmData, ProbitModel, make_model

from conftest import random_msn


class MsnTargetModel:
    """Injected model whose posterior is exactly a known skew-normal."""

    kind = "msn"

    def __init__(self, params):
        self.params = params
        self.p = params.p

    def log_joint(self, theta):
        return self.params.log_density(theta)

    def log_joint_batch(self, thetas):
        return self.params.log_density_batch(thetas)

    def grad(self, theta):
        return self.params.grad_log_density(theta)

    def hessian(self, theta):
        return self.params.hessian_log_density(theta)

    def tud(self, theta):
        return self.params.tud_log_density(theta)


class TestSimulateDataset:
    def test_shapes_and_intercept(self):
        design = SimDesign(p=2, n_multiplier=2, seed=1)
        data = simulate_dataset(design, 0)
        assert data.X.shape == (4, 2)
        np.testing.assert_array_equal(data.X[:, 0], 1.0)

    def test_true_coefficients(self):
        np.testing.assert_allclose(
            true_coefficients(4), [0.5, -0.5, 0.5, -0.5]
        )

    def test_ar1_lag_correlation(self):
        design = SimDesign(p=40, n_multiplier=2, covariates="ar1", seed=3)
        lagged, current = [], []
        for rep in range(4):
            X = simulate_dataset(design, rep).X
            lagged.append(X[:, 1:-1].ravel())
            current.append(X[:, 2:].ravel())
        corr = np.corrcoef(np.concatenate(lagged), np.concatenate(current))[0, 1]
        assert corr == pytest.approx(0.9, abs=0.02)

    def test_unit_marginal_variance_ar1(self):
        design = SimDesign(p=40, n_multiplier=4, covariates="ar1", seed=5)
        X = np.vstack([simulate_dataset(design, rep).X for rep in range(10)])
        sds = X[:, 1:].std(axis=0)
        assert np.all(np.abs(sds - 1.0) < 0.08)

    def test_deterministic(self):
        design = SimDesign(p=4, seed=9)
        a = simulate_dataset(design, 3)
        b = simulate_dataset(design, 3)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_design_validation(self):
        with pytest.raises(ValueError):
            SimDesign(p=3)
        with pytest.raises(ValueError):
            SimDesign(p=2, n_multiplier=3)
        with pytest.raises(ValueError):
            SimDesign(p=2, covariates="exchangeable")


class TestDetectSeparation:
    def test_perfect_split(self):
        X = np.column_stack([np.ones(6), [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]])
        y = (X[:, 1] > 0).astype(float)
        assert detect_separation(GlmData(X, y))

    def test_constant_response(self):
        X = np.column_stack([np.ones(5), np.linspace(-1, 1, 5)])
        assert detect_separation(GlmData(X, np.ones(5)))
        assert detect_separation(GlmData(X, np.zeros(5)))

    def test_interleaved_labels(self):
        # both labels on both sides of every hyperplane through the data
        X = np.column_stack([np.ones(6), [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]])
        y = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
        assert not detect_separation(GlmData(X, y))

    def test_nonseparated_admits_finite_mle(self):
        design = SimDesign(p=2, n_multiplier=2, seed=77)
        checked = 0
        for rep in range(200):
            data = simulate_dataset(design, rep)
            if detect_separation(data):
                continue
            checked += 1
            # unpenalized likelihood: push the prior out of the picture
            model = ProbitModel(data, prior_variance=1e30)
            stats = find_mode(model)
            assert np.linalg.norm(stats.mode) < 1e3
        assert checked > 50


class TestLoadBenchmark:
    def test_numeric_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "orings.csv"
        with open(path, "w") as fh:
            fh.write("temp,pressure,fail\n")
            for _ in range(23):
                fh.write(
                    f"{rng.normal():.5f},{rng.normal():.5f},{rng.integers(0, 2)}\n"
                )
        data = load_benchmark(path, response_column="fail")
        assert (data.n, data.p) == (23, 3)
        np.testing.assert_array_equal(data.X[:, 0], 1.0)
        # standardized predictors
        assert abs(data.X[:, 1].mean()) < 1e-10
        assert data.X[:, 1].std() == pytest.approx(1.0, rel=1e-9)

    def test_categorical_encoding(self, tmp_path):
        path = tmp_path / "cat.csv"
        with open(path, "w") as fh:
            fh.write("color,y\n")
            for i, color in enumerate(["red", "green", "blue"] * 4):
                fh.write(f"{color},{i % 2}\n")
        data = load_benchmark(path, response_column="y", categorical_columns=["color"])
        assert data.p == 3  # intercept + (3 - 1) dummies

    def test_missing_rows_dropped(self, tmp_path):
        path = tmp_path / "na.csv"
        with open(path, "w") as fh:
            fh.write("x,y\n1.0,0\n,1\n2.0,1\n0.5,0\n")
        data = load_benchmark(path, response_column="y")
        assert data.n == 3

    def test_empty_csv(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x,y\n")
        with pytest.raises(Exception):
            load_benchmark(path, response_column="y")

    def test_non_binary_response(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1.0,0\n2.0,1\n3.0,2\n")
        with pytest.raises(ValueError, match="binary"):
            load_benchmark(path, response_column="y")

    @pytest.mark.parametrize(
        "n,p",
        [(23, 3), (345, 6), (392, 9), (214, 10), (699, 10), (270, 14), (1000, 25), (351, 33)],
    )
    def test_benchmark_shapes(self, tmp_path, n, p):
        # synthetic numeric fixtures mimicking the usual benchmark sizes
        rng = np.random.default_rng(n * p)
        path = tmp_path / f"bench_{n}_{p}.csv"
        cols = [f"x{j}" for j in range(1, p)]
        with open(path, "w") as fh:
            fh.write(",".join(cols + ["label"]) + "\n")
            for _ in range(n):
                vals = ",".join(f"{v:.4f}" for v in rng.standard_normal(p - 1))
                fh.write(f"{vals},{rng.integers(0, 2)}\n")
        data = load_benchmark(path, response_column="label")
        assert (data.n, data.p) == (n, p)


class TestMethodSpec:
    def test_parse_tokens(self):
        assert MethodSpec.parse("laplace").label == "laplace"
        assert MethodSpec.parse("mmh-jensen").label == "mmh-jensen"
        assert MethodSpec.parse("mmh-is").mean_source == "is"
        with pytest.raises(ValueError):
            MethodSpec.parse("mmh-unknown")
        with pytest.raises(ValueError):
            MethodSpec.parse("ep")

    def test_external_requires_base(self):
        with pytest.raises(ValueError, match="base"):
            MethodSpec(scheme="posthoc-mmh")


class TestRunMethod:
    def test_laplace_pure_prior(self):
        data = GlmData(np.empty((0, 2)), np.empty(0))
        model = ProbitModel(data, prior_variance=25.0)
        approx, elapsed, status, _ = run_method(model, MethodSpec(scheme="laplace"))
        assert status == "baseline"
        np.testing.assert_allclose(approx.mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(approx.cov, 25.0 * np.eye(2), rtol=1e-10)
        assert elapsed >= 0.0

    def test_mmh_external_round_trip(self, rng):
        params = random_msn(rng, 3, d_max=2.0)
        model = MsnTargetModel(params)
        base = GaussianApprox(
            mean=params.moments().mean, cov=params.moments().cov, source="external"
        )
        spec = MethodSpec(scheme="mmh", mean_source="external", base=base)
        approx, _, status, _ = run_method(model, spec)
        assert status == "exact"
        np.testing.assert_allclose(approx.mu, params.mu, atol=1e-6)
        np.testing.assert_allclose(approx.d, params.d, atol=1e-5)

    def test_posthoc_mmc_above_threshold_fails(self, rng):
        params = random_msn(rng, 2, d_max=0.5)
        model = MsnTargetModel(params)
        mode = find_mode(model).mode
        cov = params.moments().cov
        shift = 2.0 * np.sqrt(np.diag(cov))
        base = GaussianApprox(mean=mode + shift, cov=cov, source="external")
        delta = base.mean - mode
        g = float(delta @ np.linalg.solve(cov, delta))
        assert g > 1.7519383938841089
        spec = MethodSpec(scheme="posthoc-mmc", base=base)
        approx, _, status, diagnostics = run_method(model, spec)
        assert approx is None and status == "failed"
        assert diagnostics["reason"] == "G above threshold"

    def test_dm_on_msn_target(self, rng):
        params = random_msn(rng, 2, d_max=2.0)
        model = MsnTargetModel(params)
        approx, _, status, diagnostics = run_method(model, MethodSpec(scheme="dm"))
        assert status == "exact"
        np.testing.assert_allclose(approx.d, params.d, atol=1e-5)
        assert diagnostics["residual"] < 1e-8

    def test_importance_methods_need_config(self, rng):
        params = random_msn(rng, 2, d_max=1.0)
        model = MsnTargetModel(params)
        with pytest.raises(ValueError, match="ImportanceConfig"):
            run_method(model, MethodSpec(scheme="mm"))


class TestRunExperiment:
    def test_reference_passthrough(self):
        design = SimDesign(p=2, n_multiplier=2, n_reps=3, seed=21)
        reports, info = run_experiment(
            design, [MethodSpec(scheme="reference")], eval_mode="quadrature"
        )
        assert reports, "all replications separated?"
        for report in reports:
            assert all(a > 1.0 - 1e-9 for a in report.per_marginal_accuracy)
        assert info["skipped_separated"] + len(reports) == design.n_reps

    def test_laplace_and_dm_smoke(self, tmp_path):
        design = SimDesign(p=2, n_multiplier=2, n_reps=4, seed=33)
        out = tmp_path / "report.jsonl"
        methods = [MethodSpec(scheme="laplace"), MethodSpec(scheme="dm")]
        reports, info = run_experiment(design, methods, out_path=out)
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert lines[-1]["summary"]["n_reps"] == 4
        parsed = [AccuracyReport.from_json(line) for line in lines[:-1]]
        assert [r.fingerprint() for r in parsed] == [
            r.fingerprint() for r in reports
        ]
        for report in reports:
            if report.per_marginal_accuracy:
                assert 0.0 <= report.mean_accuracy <= 1.0

    def test_determinism(self):
        design = SimDesign(p=2, n_multiplier=2, n_reps=2, seed=55)
        methods = [MethodSpec(scheme="laplace"), MethodSpec(scheme="mmc")]
        a, _ = run_experiment(design, methods)
        b, _ = run_experiment(design, methods)
        assert [r.fingerprint() for r in a] == [r.fingerprint() for r in b]

    def test_summary_table(self):
        design = SimDesign(p=2, n_multiplier=2, n_reps=3, seed=70)
        reports, _ = run_experiment(design, [MethodSpec(scheme="laplace")])
        summary = summarize_reports(reports)
        assert summary[0]["method"] == "laplace"
        assert 0.0 <= summary[0]["mean_accuracy"] <= 1.0


class TestImprovementDecomposition:
    def test_identity(self):
        base = AccuracyReport(
            method="laplace",
            rep=0,
            per_marginal_accuracy=(0.7, 0.9, 0.8, 0.95),
            mean_accuracy=0.8375,
            elapsed_seconds=0.0,
            status="baseline",
        )
        adjusted = AccuracyReport(
            method="mmh-jensen",
            rep=0,
            per_marginal_accuracy=(0.75, 0.88, 0.81, 0.92),
            mean_accuracy=0.84,
            elapsed_seconds=0.0,
            status="exact",
        )
        imp, det = improvement_decomposition(base, adjusted)
        assert imp == pytest.approx(0.05 + 0.01)
        assert det == pytest.approx(0.02 + 0.03)

    def test_report_validation(self):
        with pytest.raises(ValueError, match="0, 1"):
            AccuracyReport(
                method="x",
                rep=0,
                per_marginal_accuracy=(1.5,),
                mean_accuracy=1.5,
                elapsed_seconds=0.0,
                status="exact",
            )
