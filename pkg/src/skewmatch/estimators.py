"""Posterior statistic estimators feeding the matching schemes.

Covers damped Newton mode finding (with the analytic Hessian and third
derivatives evaluated at the mode), the Laplace approximation, stabilized
importance sampling with a multivariate-t proposal, and two quadrature-based
marginal mean estimators.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .msn import DerivativeStats, MomentStats, _as_vector, _symmetrize_spd
from .specialfns import zeta_vec

__all__ = [
    "NonConvergenceError",
    "GaussianApprox",
    "ImportanceConfig",
    "ImportanceResult",
    "QuadratureGrid",
    "find_mode",
    "laplace",
    "importance_moments",
    "jensen_mean",
    "improved_laplace_mean",
]


class NonConvergenceError(RuntimeError):
    """Newton iteration failed to reach the gradient tolerance."""

    def __init__(self, grad_norm, message="Newton iteration did not converge"):
        self.grad_norm = float(grad_norm)
        super().__init__(f"{message} (|grad| = {self.grad_norm:.3e})")


@dataclass(frozen=True)
class GaussianApprox:
    """A Gaussian posterior approximation, either Laplace or externally supplied."""

    mean: np.ndarray
    cov: np.ndarray
    source: str = "external"

    def __post_init__(self):
        cov, _ = _symmetrize_spd(self.cov, "cov")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(
            self, "mean", _as_vector(self.mean, cov.shape[0], "mean")
        )

    @property
    def p(self):
        return self.mean.shape[0]

    def sds(self):
        return np.sqrt(np.diag(self.cov))

    def to_json(self):
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "source": self.source,
        }

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(
            np.asarray(obj["mean"]),
            np.asarray(obj["cov"]),
            obj.get("source", "external"),
        )


# ---------------------------------------------------------------------------
# mode finding


def _maximize(f, grad, neg_hess, x0, tol, max_iter=500, callback=None):
    """Damped Newton ascent of a strictly concave function.

    Each iteration takes the first step length in {1, 1/2, ..., 2^-20} that
    strictly increases f. Once increments drop below float resolution the
    iterate is polished with up to three full Newton steps (grad norm must
    keep shrinking), which settles the gradient to its rounding floor.
    """
    x = np.asarray(x0, dtype=float).copy()
    fx = f(x)
    for _ in range(max_iter):
        g = grad(x)
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return x
        step = np.linalg.solve(neg_hess(x), g)
        lam = 1.0
        while lam >= 2.0**-20:
            cand = x + lam * step
            fc = f(cand)
            if fc > fx:
                x, fx = cand, fc
                if callback is not None:
                    callback(x, fx, gnorm)
                break
            lam *= 0.5
        else:
            # objective increments fell below float resolution; full Newton
            # steps keep contracting the gradient to its rounding floor
            for _ in range(3):
                x = x + np.linalg.solve(neg_hess(x), grad(x))
                new_gnorm = float(np.linalg.norm(grad(x)))
                if new_gnorm < tol:
                    return x
                if new_gnorm >= gnorm:
                    break
                gnorm = new_gnorm
            raise NonConvergenceError(np.linalg.norm(grad(x)))
    raise NonConvergenceError(np.linalg.norm(grad(x)))


def find_mode(model, theta0=None, tol=None, callback=None):
    """Posterior mode with the negative Hessian and third derivatives there."""
    p = model.p
    if theta0 is None:
        theta0 = np.zeros(p)
    if tol is None:
        tol = 1e-10 * (1.0 + p)
    mode = _maximize(
        model.log_joint,
        model.grad,
        lambda x: -model.hessian(x),
        theta0,
        tol,
        callback=callback,
    )
    return DerivativeStats(
        mode=mode, neg_hessian=-model.hessian(mode), tud=model.tud(mode)
    )


def laplace(model, theta0=None):
    """Gaussian approximation centered at the mode with covariance J^-1."""
    stats = find_mode(model, theta0)
    cov = np.linalg.inv(stats.neg_hessian)
    return GaussianApprox(mean=stats.mode, cov=cov, source="laplace")


# ---------------------------------------------------------------------------
# importance sampling


@dataclass(frozen=True)
class ImportanceConfig:
    """Proposal and stabilization settings for importance sampling."""

    seed: int
    n_samples: int = 50_000
    df: float = 5.0
    stabilization: str = "truncate_sqrt_mean"

    def __post_init__(self):
        if self.n_samples < 1000:
            raise ValueError("n_samples must be >= 1000")
        if self.df <= 3.0:
            raise ValueError("df must exceed 3 for finite third moments")
        if self.stabilization not in ("truncate_sqrt_mean", "none"):
            raise ValueError(f"unknown stabilization {self.stabilization!r}")


@dataclass(frozen=True)
class ImportanceResult:
    """Weighted moment estimates plus sampling diagnostics.

    The se_* fields are delta-method standard errors of the corresponding
    weighted estimates (diagonal entries only for the covariance).
    """

    stats: MomentStats
    ess: float
    se_mean: np.ndarray
    se_cov_diag: np.ndarray
    se_tum: np.ndarray
    unreliable: bool


def importance_moments(model, mode_stats, cfg):
    """Posterior mean/covariance/TUM by a multivariate-t importance sampler.

    The proposal is located at the mode with scale matrix J^-1 and cfg.df
    degrees of freedom. Weights are optionally truncated at mean * sqrt(N)
    before normalization; an effective sample size under 50 flags the
    result as unreliable rather than failing.
    """
    rng = np.random.default_rng(cfg.seed)
    m = mode_stats.mode
    p = m.shape[0]
    scale = np.linalg.inv(mode_stats.neg_hessian)
    scale = 0.5 * (scale + scale.T)
    chol = np.linalg.cholesky(scale)

    z = rng.standard_normal((cfg.n_samples, p))
    u = rng.chisquare(cfg.df, size=cfg.n_samples)
    draws = m + (z @ chol.T) * np.sqrt(cfg.df / u)[:, None]

    qf = np.einsum(
        "ij,ij->i",
        np.linalg.solve(chol, (draws - m).T).T,
        np.linalg.solve(chol, (draws - m).T).T,
    )
    log_q = (
        gammaln(0.5 * (cfg.df + p))
        - gammaln(0.5 * cfg.df)
        - 0.5 * p * np.log(cfg.df * np.pi)
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * (cfg.df + p) * np.log1p(qf / cfg.df)
    )
    log_w = model.log_joint_batch(draws) - log_q
    w = np.exp(log_w - np.max(log_w))
    if cfg.stabilization == "truncate_sqrt_mean":
        w = np.minimum(w, w.mean() * np.sqrt(cfg.n_samples))
    w = w / w.sum()

    mean = w @ draws
    centered = draws - mean
    cov = (centered * w[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    degenerate = False
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # near-zero ESS collapses the weighted covariance; inflate so the
        # result stays usable and rely on the unreliable flag downstream
        degenerate = True
        cov = cov + 1e-10 * (1.0 + np.max(np.abs(np.diag(cov)))) * np.eye(p)
    tum = w @ centered**3
    ess = 1.0 / float(w @ w)
    se_mean = np.sqrt((w**2) @ centered**2)
    se_cov_diag = np.sqrt((w**2) @ (centered**2 - np.diag(cov)) ** 2)
    se_tum = np.sqrt((w**2) @ (centered**3 - tum) ** 2)
    stats = MomentStats(mean=mean, cov=cov, tum=tum)
    return ImportanceResult(
        stats=stats,
        ess=ess,
        se_mean=se_mean,
        se_cov_diag=se_cov_diag,
        se_tum=se_tum,
        unreliable=degenerate or ess < 50.0,
    )


# ---------------------------------------------------------------------------
# quadrature grids and marginal mean estimators


@dataclass(frozen=True)
class QuadratureGrid:
    """Per-coordinate uniform grids used to normalize marginal estimates."""

    points: np.ndarray  # (p, n_points)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] < 2:
            raise ValueError("points must be (p, n_points) with n_points >= 2")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_center(cls, center, half_widths, n_points=400):
        center = np.asarray(center, dtype=float)
        half_widths = np.broadcast_to(
            np.asarray(half_widths, dtype=float), center.shape
        )
        pts = np.stack(
            [
                np.linspace(c - h, c + h, n_points)
                for c, h in zip(center, half_widths)
            ]
        )
        return cls(points=pts)

    @classmethod
    def from_gaussian(cls, approx, half_width_sds=8.0, n_points=400):
        return cls.from_center(
            approx.mean, half_width_sds * approx.sds(), n_points
        )

    @property
    def n_points(self):
        return self.points.shape[1]

    def axis(self, j):
        return self.points[j]


def _grid_mean(grid_values, log_density):
    """Normalize an unnormalized log marginal on a grid and take its mean."""
    log_density = log_density - np.max(log_density)
    dens = np.exp(log_density)
    mass = np.trapezoid(dens, grid_values)
    return float(np.trapezoid(grid_values * dens, grid_values) / mass)


def jensen_mean(model, base, grid):
    """Marginal posterior means for probit models via a Jensen lower bound.

    For each coordinate the remaining coordinates are integrated out under
    the conditional of the Gaussian ``base`` (the Laplace approximation in
    the standard pipeline), with a second-order correction term; the
    resulting closed-form unnormalized marginal is normalized on the grid.
    """
    if getattr(model, "kind", None) != "probit":
        raise ValueError("jensen_mean supports probit models only")
    z_mat = model.data.Z
    p = model.p
    sig2_prior = model.prior_variance
    means = np.zeros(p)
    for j in range(p):
        rest = [k for k in range(p) if k != j]
        z_j = z_mat[:, j]
        z_rest = z_mat[:, rest]
        mu_j, mu_rest = base.mean[j], base.mean[rest]
        sig_jj = base.cov[j, j]
        sig_rj = base.cov[np.ix_(rest, [j])][:, 0]
        slope = sig_rj / sig_jj
        cov_cond = base.cov[np.ix_(rest, rest)] - np.outer(sig_rj, sig_rj) / sig_jj
        _, logdet_cond = np.linalg.slogdet(cov_cond)
        var_cond_sum = float(np.trace(cov_cond))
        sig2_tilde = np.einsum("ij,jk,ik->i", z_rest, cov_cond, z_rest)

        v = grid.axis(j)
        # the conditional mean is linear in v, so the probit argument is too
        arg = (
            v[:, None] * (z_j + z_rest @ slope)[None, :]
            + (z_rest @ (mu_rest - slope * mu_j))[None, :]
        )
        loglik = np.sum(
            zeta_vec(0, arg) + 0.5 * zeta_vec(2, arg) * sig2_tilde, axis=1
        )
        mu_cond_sq = np.sum(
            (mu_rest[None, :] + np.outer(v - mu_j, slope)) ** 2, axis=1
        )
        prior = -0.5 * (v**2 + mu_cond_sq + var_cond_sum) / sig2_prior
        means[j] = _grid_mean(v, loglik + prior + 0.5 * logdet_cond)
    return means


def improved_laplace_mean(model, grid):
    """Marginal posterior means via the profiled (improved Laplace) marginal.

    Each grid value of coordinate j is profiled: the remaining coordinates
    are maximized out by Newton, and the marginal value picks up the
    half-log-determinant of the conditional covariance there.
    """
    p = model.p
    full_mode = find_mode(model).mode
    means = np.zeros(p)
    for j in range(p):
        rest = [k for k in range(p) if k != j]
        v_grid = grid.axis(j)
        logm = np.empty_like(v_grid)
        center = int(np.argmin(np.abs(v_grid - full_mode[j])))
        order = list(range(center, len(v_grid))) + list(range(center - 1, -1, -1))
        warm = {center: full_mode[rest]}
        for idx in order:
            v = v_grid[idx]
            start = warm.get(idx, None)
            if start is None:
                src = idx - 1 if idx > center else idx + 1
                start = warm[src]
            if rest:
                try:
                    sub_mode = _maximize(
                        lambda x: model.log_joint(_embed(x, v, j, p)),
                        lambda x: model.grad(_embed(x, v, j, p))[rest],
                        lambda x: -model.hessian(_embed(x, v, j, p))[
                            np.ix_(rest, rest)
                        ],
                        start,
                        tol=1e-9 * (1.0 + p),
                    )
                except NonConvergenceError as err:
                    raise NonConvergenceError(
                        err.grad_norm,
                        f"conditional mode failed at coordinate {j}, "
                        f"grid index {idx}",
                    ) from err
                warm[idx] = sub_mode
                theta = _embed(sub_mode, v, j, p)
                j_rest = -model.hessian(theta)[np.ix_(rest, rest)]
                _, logdet = np.linalg.slogdet(j_rest)
                logm[idx] = model.log_joint(theta) - 0.5 * logdet
            else:
                warm[idx] = start
                logm[idx] = model.log_joint(np.array([v]))
        means[j] = _grid_mean(v_grid, logm)
    return means


def _embed(x_rest, v, j, p):
    theta = np.empty(p)
    theta[j] = v
    if p > 1:
        theta[np.arange(p) != j] = x_rest
    return theta
