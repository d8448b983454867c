"""Multivariate skew-normal distribution: parameters, densities, moments, sampling."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .specialfns import zeta, zeta_vec

__all__ = [
    "ConstraintError",
    "MsnParams",
    "MomentStats",
    "DerivativeStats",
    "d_from_delta",
]

_TUM_COEF = np.sqrt(2.0) * (4.0 - np.pi) / np.pi**1.5
_SQRT_2_PI = np.sqrt(2.0 / np.pi)

# relative asymmetry below this is treated as floating-point drift and
# symmetrized away; anything larger is a caller error
_SYM_TOL = 1e-8


class ConstraintError(ValueError):
    """The skewness-transform constraint delta' Sigma^-1 delta < 1 is violated."""

    def __init__(self, quad_form):
        self.quad_form = float(quad_form)
        super().__init__(
            f"delta' Sigma^-1 delta = {self.quad_form:.6g} must be < 1"
        )


def _symmetrize_spd(a, name="matrix"):
    """Validate and return (symmetrized matrix, cholesky factor)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    scale = np.max(np.abs(a)) or 1.0
    asym = np.max(np.abs(a - a.T))
    if asym > _SYM_TOL * scale:
        raise ValueError(f"{name} asymmetry {asym:.3g} exceeds {_SYM_TOL} relative")
    a = 0.5 * (a + a.T)
    try:
        cho = cho_factor(a, lower=True)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"{name} is not positive definite") from err
    return a, cho


def _as_vector(v, p, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (p,):
        raise ValueError(f"{name} must have shape ({p},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def d_from_delta(delta, sigma):
    """Recover the skewness vector d from delta = Sigma d / sqrt(1 + d'Sigma d).

    Raises ConstraintError when delta' Sigma^-1 delta >= 1 (no d exists).
    """
    sigma, cho = _symmetrize_spd(sigma, "sigma")
    delta = _as_vector(delta, sigma.shape[0], "delta")
    sol = cho_solve(cho, delta)
    quad = float(delta @ sol)
    if quad >= 1.0:
        raise ConstraintError(quad)
    return sol / np.sqrt(1.0 - quad)


class MsnParams:
    """Skew-normal parameter triple (mu, sigma, d) with density 2 phi(.;mu,sigma) Phi(d'(.-mu)).

    sigma is symmetrized on input (within a 1e-8 relative tolerance) and its
    Cholesky factor is cached; instances are immutable values.
    """

    __slots__ = ("mu", "sigma", "d", "p", "delta", "_cho", "_logdet")

    def __init__(self, mu, sigma, d):
        sigma, cho = _symmetrize_spd(sigma, "sigma")
        p = sigma.shape[0]
        mu = _as_vector(mu, p, "mu")
        d = _as_vector(d, p, "d")
        sd = sigma @ d
        delta = sd / np.sqrt(1.0 + d @ sd)
        # closed under the constraint by construction; re-check numerically
        quad = float(delta @ cho_solve(cho, delta))
        if quad >= 1.0 - 1e-12:
            raise ConstraintError(quad)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "_cho", cho)
        object.__setattr__(self, "_logdet", 2.0 * np.sum(np.log(np.diag(cho[0]))))

    def __setattr__(self, *_):
        raise AttributeError("MsnParams is immutable")

    def __repr__(self):
        return f"MsnParams(mu={self.mu!r}, sigma={self.sigma!r}, d={self.d!r})"

    def _centered(self, theta):
        theta = _as_vector(theta, self.p, "theta")
        return theta - self.mu

    def solve_sigma(self, rhs):
        """Sigma^-1 rhs via the cached Cholesky factor."""
        return cho_solve(self._cho, rhs)

    def log_density(self, theta):
        """log of 2 phi_p(theta; mu, sigma) Phi(d'(theta - mu))."""
        c = self._centered(theta)
        quad = c @ self.solve_sigma(c)
        log_gauss = -0.5 * (self.p * np.log(2.0 * np.pi) + self._logdet + quad)
        return float(np.log(2.0) + log_gauss + zeta(0, float(self.d @ c)))

    def log_density_batch(self, thetas):
        """log density over the rows of an (n, p) array."""
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.p:
            raise ValueError(f"thetas must have shape (n, {self.p})")
        c = thetas - self.mu
        quad = np.einsum("ij,ij->i", c, cho_solve(self._cho, c.T).T)
        log_gauss = -0.5 * (self.p * np.log(2.0 * np.pi) + self._logdet + quad)
        return np.log(2.0) + log_gauss + zeta_vec(0, c @ self.d)

    def grad_log_density(self, theta):
        c = self._centered(theta)
        return -self.solve_sigma(c) + zeta(1, float(self.d @ c)) * self.d

    def hessian_log_density(self, theta):
        c = self._centered(theta)
        sigma_inv = self.solve_sigma(np.eye(self.p))
        return -sigma_inv + zeta(2, float(self.d @ c)) * np.outer(self.d, self.d)

    def tud_log_density(self, theta):
        """Third-order unmixed derivatives of the log density."""
        c = self._centered(theta)
        return zeta(3, float(self.d @ c)) * self.d**3

    def moments(self):
        """Exact mean, covariance and third unmixed central moments."""
        mean = self.mu + _SQRT_2_PI * self.delta
        cov = self.sigma - (2.0 / np.pi) * np.outer(self.delta, self.delta)
        tum = _TUM_COEF * self.delta**3
        return MomentStats(mean=mean, cov=cov, tum=tum)

    def marginal(self, j):
        """Closed-form univariate marginal of coordinate j (itself skew-normal)."""
        if not 0 <= j < self.p:
            raise ValueError(f"marginal index {j} out of range for p={self.p}")
        sigma_jj = self.sigma[j, j]
        delta_j = self.delta[j]
        d_marg = d_from_delta(np.array([delta_j]), np.array([[sigma_jj]]))
        return MsnParams(np.array([self.mu[j]]), np.array([[sigma_jj]]), d_marg)

    def sample(self, n, seed):
        """n i.i.d. draws via the reflection form of the selection representation."""
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        chol = np.linalg.cholesky(self.sigma)
        v = rng.standard_normal((n, self.p)) @ chol.T
        eps = rng.standard_normal(n)
        flip = np.where(v @ self.d + eps >= 0.0, 1.0, -1.0)
        return self.mu + flip[:, None] * v

    def to_json(self):
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "d": self.d.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(np.asarray(obj["mu"]), np.asarray(obj["sigma"]), np.asarray(obj["d"]))


@dataclass(frozen=True)
class MomentStats:
    """Posterior mean, covariance and third unmixed central moments."""

    mean: np.ndarray
    cov: np.ndarray
    tum: np.ndarray

    def __post_init__(self):
        cov, _ = _symmetrize_spd(self.cov, "cov")
        object.__setattr__(self, "cov", cov)
        p = cov.shape[0]
        object.__setattr__(self, "mean", _as_vector(self.mean, p, "mean"))
        object.__setattr__(self, "tum", _as_vector(self.tum, p, "tum"))

    @property
    def p(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class DerivativeStats:
    """Posterior mode, negative Hessian at the mode, and third unmixed log derivatives."""

    mode: np.ndarray
    neg_hessian: np.ndarray
    tud: np.ndarray

    def __post_init__(self):
        neg_hessian, _ = _symmetrize_spd(self.neg_hessian, "neg_hessian")
        object.__setattr__(self, "neg_hessian", neg_hessian)
        p = neg_hessian.shape[0]
        object.__setattr__(self, "mode", _as_vector(self.mode, p, "mode"))
        object.__setattr__(self, "tud", _as_vector(self.tud, p, "tud"))

    @property
    def p(self):
        return self.mode.shape[0]
