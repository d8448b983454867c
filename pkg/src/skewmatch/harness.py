"""Experiment orchestration: data generation, method wiring, and accuracy reports."""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import linprog
from scipy.special import ndtr

from .estimators import (
    GaussianApprox,
    ImportanceConfig,
    QuadratureGrid,
    find_mode,
    improved_laplace_mean,
    importance_moments,
    jensen_mean,
    laplace,
)
from .matching import (
    LossWeights,
    match_derivatives,
    match_mmc,
    match_mmh,
    match_moments,
)
from .models import GlmData, make_model
from .msn import MomentStats, MsnParams
from .reference import grid_marginals, kde, l1_accuracy, mh_sample

__all__ = [
    "SimDesign",
    "MethodSpec",
    "AccuracyReport",
    "simulate_dataset",
    "detect_separation",
    "load_benchmark",
    "run_method",
    "run_dataset",
    "run_experiment",
    "improvement_decomposition",
    "summarize_reports",
]

_log = logging.getLogger(__name__)

_PAPER_DIMS = (2, 4, 8, 16, 24, 40)


@dataclass(frozen=True)
class SimDesign:
    """One simulation setting: dimension, data size, covariate law, model."""

    p: int
    n_multiplier: int = 2
    covariates: str = "independent"
    model_kind: str = "probit"
    n_reps: int = 50
    seed: int = 0
    rho: float = 0.9
    prior_variance: float = 10_000.0

    def __post_init__(self):
        if self.p not in _PAPER_DIMS:
            raise ValueError(f"p must be one of {_PAPER_DIMS}, got {self.p}")
        if self.n_multiplier not in (2, 4):
            raise ValueError("n_multiplier must be 2 or 4")
        if self.covariates not in ("independent", "ar1"):
            raise ValueError("covariates must be 'independent' or 'ar1'")
        if self.model_kind not in ("probit", "logistic"):
            raise ValueError("model_kind must be 'probit' or 'logistic'")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")

    @property
    def n(self):
        return self.n_multiplier * self.p


def true_coefficients(p):
    """The alternating (2, -2, ..., 2, -2)/p coefficient vector."""
    theta = np.empty(p)
    theta[0::2] = 2.0
    theta[1::2] = -2.0
    return theta / p


def simulate_dataset(design, rep_index):
    """Generate one replication of the design, deterministic in (seed, rep_index)."""
    rng = np.random.default_rng([design.seed, rep_index])
    n, p = design.n, design.p
    X = np.ones((n, p))
    if p > 1:
        if design.covariates == "independent":
            X[:, 1:] = rng.standard_normal((n, p - 1))
        else:
            # stationary AR(1) across covariates with unit marginal variance
            innovations = rng.standard_normal((n, p - 1))
            X[:, 1] = innovations[:, 0]
            scale = np.sqrt(1.0 - design.rho**2)
            for j in range(2, p):
                X[:, j] = design.rho * X[:, j - 1] + scale * innovations[:, j - 1]
    linpred = X @ true_coefficients(p)
    if design.model_kind == "probit":
        prob = ndtr(linpred)
    else:
        prob = 1.0 / (1.0 + np.exp(-linpred))
    y = (rng.random(n) < prob).astype(float)
    return GlmData(X, y)


def detect_separation(data):
    """Linear-programming test for complete or quasi-complete separation.

    Separation holds iff some theta satisfies z_i' theta >= 0 for all i with
    at least one strict inequality; maximizing sum_i z_i' theta over the box
    |theta|_inf <= 1 under those constraints yields a positive optimum
    exactly in that case.
    """
    z = data.Z
    if data.n == 0:
        return False
    c = -z.sum(axis=0)
    res = linprog(
        c,
        A_ub=-z,
        b_ub=np.zeros(data.n),
        bounds=[(-1.0, 1.0)] * data.p,
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"separation LP failed: {res.message}")
    return -res.fun > 1e-8 * (1.0 + np.abs(z).sum())


def load_benchmark(path, response_column, categorical_columns=(), standardize=True):
    """Load a benchmark CSV into GlmData.

    Rows with missing values are dropped (with a logged count), categorical
    columns are one-hot encoded dropping one level, numeric columns are
    optionally standardized, and an intercept column is prepended.
    """
    frame = pd.read_csv(path)
    if frame.empty:
        raise ValueError(f"no rows in {path}")
    if response_column not in frame.columns:
        raise ValueError(f"response column {response_column!r} not in {path}")
    n_before = len(frame)
    frame = frame.dropna()
    dropped = n_before - len(frame)
    if dropped:
        _log.info("dropped %d rows with missing values", dropped)
    if frame.empty:
        raise ValueError("all rows dropped due to missing values")

    response = frame[response_column]
    levels = sorted(response.unique().tolist())
    if len(levels) != 2:
        raise ValueError(f"response must be binary, found levels {levels}")
    y = (response == levels[1]).to_numpy(dtype=float)

    predictors = frame.drop(columns=[response_column])
    categorical_columns = list(categorical_columns)
    for col in categorical_columns:
        if col not in predictors.columns:
            raise ValueError(f"categorical column {col!r} not in {path}")
    blocks = []
    for col in predictors.columns:
        if col in categorical_columns or predictors[col].dtype == object:
            dummies = pd.get_dummies(predictors[col], prefix=col, drop_first=True)
            blocks.append(dummies.to_numpy(dtype=float))
        else:
            values = predictors[col].to_numpy(dtype=float)[:, None]
            if standardize:
                sd = values.std()
                values = (values - values.mean()) / (sd if sd > 0 else 1.0)
            blocks.append(values)
    X = np.column_stack([np.ones(len(frame))] + blocks)
    data = GlmData(X, y)
    _log.info("loaded %s: n=%d, p=%d", path, data.n, data.p)
    return data


# ---------------------------------------------------------------------------
# method specifications and the runner


@dataclass(frozen=True)
class MethodSpec:
    """Which approximation to run and where its statistics come from."""

    scheme: str
    mean_source: str = "is"
    cov_source: str = "is"
    base: GaussianApprox | None = None

    _SCHEMES = (
        "laplace",
        "mm",
        "dm",
        "mmh",
        "mmc",
        "posthoc-mmh",
        "posthoc-mmc",
        "reference",
    )

    def __post_init__(self):
        if self.scheme not in self._SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "mmh" and self.mean_source not in (
            "jensen",
            "il",
            "is",
            "external",
        ):
            raise ValueError(f"unknown mean source {self.mean_source!r}")
        if self.scheme == "mmc" and self.cov_source not in ("is", "external"):
            raise ValueError(f"unknown cov source {self.cov_source!r}")
        needs_base = (
            self.scheme in ("posthoc-mmh", "posthoc-mmc")
            or (self.scheme == "mmh" and self.mean_source == "external")
            or (self.scheme == "mmc" and self.cov_source == "external")
        )
        if needs_base and self.base is None:
            raise ValueError(f"{self.label} requires an external Gaussian base")

    @property
    def label(self):
        if self.scheme == "mmh":
            return f"mmh-{self.mean_source}"
        return self.scheme

    @classmethod
    def parse(cls, token, base=None):
        """Build a spec from a CLI token such as 'mmh-jensen' or 'mmc'."""
        token = token.strip().lower()
        if token.startswith("mmh-"):
            return cls(scheme="mmh", mean_source=token[4:], base=base)
        if token in ("posthoc-mmh", "posthoc-mmc"):
            return cls(scheme=token, base=base)
        return cls(scheme=token, base=base)


def run_method(model, spec, is_config=None, weights=None, grid_points=400):
    """Produce one approximation; returns (approx-or-None, elapsed, status, diagnostics).

    The approx is a GaussianApprox for the Laplace baseline and MsnParams
    for the matching schemes; a failed matching scheme returns None with
    status 'failed'.
    """
    weights = weights if weights is not None else LossWeights()
    diagnostics = {}
    start = time.perf_counter()
    if spec.scheme == "laplace":
        approx, status = laplace(model), "baseline"
    elif spec.scheme == "mm":
        stats = find_mode(model)
        imp = importance_moments(model, stats, _require_cfg(is_config))
        diagnostics["ess"] = imp.ess
        diagnostics["unreliable"] = imp.unreliable
        approx, status = _unpack(match_moments(imp.stats, weights), diagnostics)
    elif spec.scheme == "dm":
        approx, status = _unpack(match_derivatives(find_mode(model)), diagnostics)
    elif spec.scheme == "mmh" or spec.scheme == "posthoc-mmh":
        stats = find_mode(model)
        if spec.scheme == "posthoc-mmh" or spec.mean_source == "external":
            mean = spec.base.mean
        elif spec.mean_source == "jensen":
            base = GaussianApprox(
                mean=stats.mode,
                cov=np.linalg.inv(stats.neg_hessian),
                source="laplace",
            )
            grid = QuadratureGrid.from_gaussian(base, n_points=grid_points)
            mean = jensen_mean(model, base, grid)
        elif spec.mean_source == "il":
            base = GaussianApprox(
                mean=stats.mode,
                cov=np.linalg.inv(stats.neg_hessian),
                source="laplace",
            )
            grid = QuadratureGrid.from_gaussian(base, n_points=grid_points)
            mean = improved_laplace_mean(model, grid)
        else:
            imp = importance_moments(model, stats, _require_cfg(is_config))
            diagnostics["ess"] = imp.ess
            mean = imp.stats.mean
        approx, status = _unpack(match_mmh(stats, mean), diagnostics)
    elif spec.scheme == "mmc" or spec.scheme == "posthoc-mmc":
        stats = find_mode(model)
        if spec.scheme == "posthoc-mmc" or spec.cov_source == "external":
            mean, cov = spec.base.mean, spec.base.cov
            allow_adjust = False
        else:
            imp = importance_moments(model, stats, _require_cfg(is_config))
            diagnostics["ess"] = imp.ess
            mean, cov = imp.stats.mean, imp.stats.cov
            allow_adjust = True
        mom = MomentStats(mean=mean, cov=cov, tum=np.zeros(model.p))
        result = match_mmc(stats.mode, mom, weights, allow_adjust=allow_adjust)
        approx, status = _unpack(result, diagnostics)
    else:
        raise ValueError(f"run_method cannot execute scheme {spec.scheme!r}")
    elapsed = time.perf_counter() - start
    return approx, elapsed, status, diagnostics


def _require_cfg(is_config):
    if is_config is None:
        raise ValueError("this method needs an ImportanceConfig (seed required)")
    return is_config


def _unpack(result, diagnostics):
    diagnostics["residual"] = None if np.isnan(result.residual) else result.residual
    if result.kappa is not None:
        diagnostics["kappa"] = result.kappa
    if result.a is not None:
        diagnostics["a"] = result.a
    if not result.ok:
        diagnostics["reason"] = result.reason
        return None, "failed"
    return result.params, result.status


# ---------------------------------------------------------------------------
# accuracy reports


@dataclass(frozen=True)
class AccuracyReport:
    """Per-marginal L1 accuracies and timing for one method on one dataset."""

    method: str
    rep: int
    per_marginal_accuracy: tuple
    mean_accuracy: float
    elapsed_seconds: float
    status: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        acc = tuple(float(a) for a in self.per_marginal_accuracy)
        object.__setattr__(self, "per_marginal_accuracy", acc)
        if acc:
            if not all(0.0 <= a <= 1.0 for a in acc):
                raise ValueError("accuracies must lie in [0, 1]")
            if abs(self.mean_accuracy - sum(acc) / len(acc)) > 1e-12:
                raise ValueError("mean_accuracy must be the mean of the entries")

    def to_json(self):
        return {
            "method": self.method,
            "rep": self.rep,
            "per_marginal_accuracy": list(self.per_marginal_accuracy),
            "mean_accuracy": self.mean_accuracy,
            "elapsed_seconds": self.elapsed_seconds,
            "status": self.status,
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(
            method=obj["method"],
            rep=obj["rep"],
            per_marginal_accuracy=tuple(obj["per_marginal_accuracy"]),
            mean_accuracy=obj["mean_accuracy"],
            elapsed_seconds=obj["elapsed_seconds"],
            status=obj["status"],
            diagnostics=obj.get("diagnostics", {}),
        )

    def fingerprint(self):
        """Canonical JSON with wall-clock timing removed, for determinism checks."""
        blob = self.to_json()
        blob.pop("elapsed_seconds")
        return json.dumps(blob, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def marginal_density(approx, j):
    """Callable density of coordinate j for an MsnParams or GaussianApprox."""
    if isinstance(approx, MsnParams):
        marg = approx.marginal(j)
        return lambda x: np.exp(marg.log_density_batch(np.asarray(x)[:, None]))
    mean, sd = approx.mean[j], np.sqrt(approx.cov[j, j])
    return lambda x: np.exp(-0.5 * ((np.asarray(x) - mean) / sd) ** 2) / (
        sd * np.sqrt(2.0 * np.pi)
    )


def reference_marginals(model, eval_mode, seed):
    """Reference curves plus per-coordinate (mean, sd) for the metric bounds.

    Returns (curves, moments, converged_flag); quadrature references are
    exact (p <= 3), the MCMC reference is gated on split R-hat < 1.1.
    """
    if eval_mode == "quadrature":
        curves = grid_marginals(model)
        moments = [curve.mean_sd() for curve in curves]
        return curves, moments, True
    if eval_mode != "mcmc":
        raise ValueError("eval_mode must be 'quadrature' or 'mcmc'")
    draws, diag = mh_sample(model, seed=seed)
    if not diag.converged:
        return [], [], False
    moments = [(draws[:, j].mean(), draws[:, j].std()) for j in range(model.p)]
    curves = []
    for j, (m, s) in enumerate(moments):
        grid = np.linspace(m - 5.0 * s, m + 5.0 * s, 1001)
        curves.append(kde(draws[:, j], grid))
    return curves, moments, True


def run_dataset(model, methods, eval_mode="quadrature", rep=0, seed=0, weights=None):
    """Score every method on one dataset against a shared reference."""
    curves, moments, converged = reference_marginals(model, eval_mode, seed=[seed, rep])
    if not converged:
        return None
    reports = []
    for spec in methods:
        if spec.scheme == "reference":
            acc = tuple(
                l1_accuracy(curves[j], curves[j], *moments[j])
                for j in range(model.p)
            )
            reports.append(
                AccuracyReport(
                    method="reference",
                    rep=rep,
                    per_marginal_accuracy=acc,
                    mean_accuracy=sum(acc) / len(acc),
                    elapsed_seconds=0.0,
                    status="baseline",
                )
            )
            continue
        cfg = ImportanceConfig(seed=_derive_seed(seed, rep, spec.label))
        approx, elapsed, status, diagnostics = run_method(
            model, spec, is_config=cfg, weights=weights
        )
        if approx is None:
            reports.append(
                AccuracyReport(
                    method=spec.label,
                    rep=rep,
                    per_marginal_accuracy=(),
                    mean_accuracy=float("nan"),
                    elapsed_seconds=elapsed,
                    status=status,
                    diagnostics=diagnostics,
                )
            )
            continue
        acc = tuple(
            l1_accuracy(curves[j], marginal_density(approx, j), *moments[j])
            for j in range(model.p)
        )
        reports.append(
            AccuracyReport(
                method=spec.label,
                rep=rep,
                per_marginal_accuracy=acc,
                mean_accuracy=sum(acc) / len(acc),
                elapsed_seconds=elapsed,
                status=status,
                diagnostics=diagnostics,
            )
        )
    return reports


def _derive_seed(seed, rep, label):
    ss = np.random.SeedSequence(
        [int(seed), int(rep), int.from_bytes(label.encode(), "little") % 2**32]
    )
    return int(ss.generate_state(1)[0])


def _run_replication(design, rep, methods, eval_mode, weights):
    """One replication; returns (rep, 'separated' | None | reports)."""
    data = simulate_dataset(design, rep)
    if detect_separation(data):
        return rep, "separated"
    model = make_model(design.model_kind, data, design.prior_variance)
    return rep, run_dataset(
        model, methods, eval_mode, rep=rep, seed=design.seed, weights=weights
    )


def run_experiment(
    design, methods, eval_mode="quadrature", out_path=None, weights=None, jobs=1
):
    """Run every non-separated replication of a design and collect reports.

    Separated datasets and non-converged MCMC references are skipped; their
    counts land in the returned summary dict. With jobs > 1 replications run
    in parallel processes; per-replication seeding keeps the assembled
    reports identical to a serial run.
    """
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(
                pool.map(
                    _run_replication,
                    [design] * design.n_reps,
                    range(design.n_reps),
                    [methods] * design.n_reps,
                    [eval_mode] * design.n_reps,
                    [weights] * design.n_reps,
                )
            )
    else:
        outcomes = [
            _run_replication(design, rep, methods, eval_mode, weights)
            for rep in range(design.n_reps)
        ]
    reports = []
    skipped_separated = 0
    skipped_reference = 0
    for _, outcome in sorted(outcomes, key=lambda pair: pair[0]):
        if outcome == "separated":
            skipped_separated += 1
        elif outcome is None:
            skipped_reference += 1
        else:
            reports.extend(outcome)
    info = {
        "n_reps": design.n_reps,
        "skipped_separated": skipped_separated,
        "skipped_reference": skipped_reference,
    }
    if out_path is not None:
        with open(out_path, "w") as fh:
            for report in reports:
                fh.write(json.dumps(report.to_json()) + "\n")
            fh.write(json.dumps({"summary": info}) + "\n")
    return reports, info


def improvement_decomposition(base_report, adjusted_report):
    """Total positive and negative per-marginal accuracy changes (Table-3 style).

    improvement - deterioration always equals the sum of the per-marginal
    deltas; both totals are nonnegative.
    """
    base = np.asarray(base_report.per_marginal_accuracy)
    adj = np.asarray(adjusted_report.per_marginal_accuracy)
    if base.shape != adj.shape or base.size == 0:
        raise ValueError("reports must cover the same marginals")
    delta = adj - base
    improvement = float(np.sum(delta[delta > 0.0]))
    deterioration = float(-np.sum(delta[delta < 0.0]))
    assert abs((improvement - deterioration) - delta.sum()) < 1e-12
    return improvement, deterioration


def summarize_reports(reports):
    """Per-method mean accuracy and mean time over successful runs."""
    rows = {}
    for report in reports:
        rows.setdefault(report.method, []).append(report)
    summary = []
    for method, items in rows.items():
        scored = [r for r in items if r.per_marginal_accuracy]
        summary.append(
            {
                "method": method,
                "runs": len(items),
                "scored": len(scored),
                "mean_accuracy": (
                    float(np.mean([r.mean_accuracy for r in scored]))
                    if scored
                    else float("nan")
                ),
                "mean_seconds": float(np.mean([r.elapsed_seconds for r in items])),
            }
        )
    return summary
