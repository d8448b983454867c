"""Bayesian probit and logistic regression: log joint likelihood and derivatives.

Both models place an isotropic zero-mean Gaussian prior on the coefficients
and expose the log joint likelihood together with its gradient, Hessian and
third-order unmixed derivatives, which is everything the matching schemes
and estimators consume.
"""

import numpy as np

from .specialfns import zeta_vec

__all__ = ["GlmData", "ProbitModel", "LogisticModel", "make_model"]


class GlmData:
    """Design matrix, binary responses, and the signed design z_i = (2 y_i - 1) x_i."""

    __slots__ = ("X", "y", "Z", "n", "p")

    def __init__(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D design matrix")
        n, p = X.shape
        if y.shape != (n,):
            raise ValueError(f"y must have shape ({n},), got {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("y must be binary with values in {0, 1}")
        if n and not np.all(X[:, 0] == 1.0):
            raise ValueError("first column of X must be the intercept (all ones)")
        self.X = X
        self.y = y
        self.Z = (2.0 * y - 1.0)[:, None] * X
        self.n = n
        self.p = p


class _GlmModel:
    """Shared prior handling; subclasses provide the likelihood pieces."""

    kind = None

    def __init__(self, data, prior_variance=10_000.0):
        if prior_variance <= 0.0:
            raise ValueError("prior_variance must be positive")
        self.data = data
        self.prior_variance = float(prior_variance)

    @property
    def p(self):
        return self.data.p

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ValueError(f"theta must have shape ({self.p},), got {theta.shape}")
        return theta

    def log_joint(self, theta):
        theta = self._check(theta)
        prior = -0.5 * float(theta @ theta) / self.prior_variance
        return self._log_lik(theta) + prior

    def log_joint_batch(self, thetas):
        """log joint over the rows of an (m, p) array."""
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim != 2 or thetas.shape[1] != self.p:
            raise ValueError(f"thetas must have shape (m, {self.p})")
        prior = -0.5 * np.einsum("ij,ij->i", thetas, thetas) / self.prior_variance
        return self._log_lik_batch(thetas) + prior

    def grad(self, theta):
        theta = self._check(theta)
        return self._grad_lik(theta) - theta / self.prior_variance

    def hessian(self, theta):
        theta = self._check(theta)
        return self._hess_lik(theta) - np.eye(self.p) / self.prior_variance

    def tud(self, theta):
        """Third unmixed derivatives; the Gaussian prior contributes nothing."""
        theta = self._check(theta)
        return self._tud_lik(theta)


class ProbitModel(_GlmModel):
    """Probit regression: log likelihood 1' zeta_0(Z theta)."""

    kind = "probit"

    def _log_lik(self, theta):
        return float(np.sum(zeta_vec(0, self.data.Z @ theta)))

    def _log_lik_batch(self, thetas):
        return np.sum(zeta_vec(0, thetas @ self.data.Z.T), axis=1)

    def _grad_lik(self, theta):
        return self.data.Z.T @ zeta_vec(1, self.data.Z @ theta)

    def _hess_lik(self, theta):
        z2 = zeta_vec(2, self.data.Z @ theta)
        return (self.data.Z * z2[:, None]).T @ self.data.Z

    def _tud_lik(self, theta):
        z3 = zeta_vec(3, self.data.Z @ theta)
        return z3 @ self.data.Z**3


class LogisticModel(_GlmModel):
    """Logistic regression: log likelihood sum y_i eta_i - log(1 + exp(eta_i))."""

    kind = "logistic"

    def _eta(self, theta):
        return self.data.X @ theta

    def _log_lik(self, theta):
        eta = self._eta(theta)
        return float(np.sum(self.data.y * eta - np.logaddexp(0.0, eta)))

    def _log_lik_batch(self, thetas):
        eta = thetas @ self.data.X.T
        return np.sum(self.data.y * eta - np.logaddexp(0.0, eta), axis=1)

    def _grad_lik(self, theta):
        mean = _sigmoid(self._eta(theta))
        return self.data.X.T @ (self.data.y - mean)

    def _hess_lik(self, theta):
        mean = _sigmoid(self._eta(theta))
        w = mean * (1.0 - mean)
        return -(self.data.X * w[:, None]).T @ self.data.X

    def _tud_lik(self, theta):
        # d^3/deta^3 of -log(1+exp(eta)) is -p(1-p)(1-2p)
        mean = _sigmoid(self._eta(theta))
        w = mean * (1.0 - mean) * (1.0 - 2.0 * mean)
        return -(w @ self.data.X**3)


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def make_model(kind, data, prior_variance=10_000.0):
    """Build a probit or logistic model from its lowercase name."""
    if kind == "probit":
        return ProbitModel(data, prior_variance)
    if kind == "logistic":
        return LogisticModel(data, prior_variance)
    raise ValueError(f"unknown model kind {kind!r}")
