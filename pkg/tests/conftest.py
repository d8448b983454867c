import numpy as np
import pytest

from skewmatch.msn import MsnParams


def random_spd(rng, p, eig_low=0.5, eig_high=2.0):
    """Well-conditioned random SPD matrix with eigenvalues in [eig_low, eig_high]."""
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eig = rng.uniform(eig_low, eig_high, size=p)
    return (q * eig) @ q.T


def random_msn(rng, p, d_max=3.0):
    """Random skew-normal parameters with each |d_i| <= d_max."""
    mu = rng.uniform(-2.0, 2.0, size=p)
    sigma = random_spd(rng, p)
    d = rng.uniform(-d_max, d_max, size=p)
    return MsnParams(mu, sigma, d)


def grad_fd(f, x, h=1e-6):
    """4th-order central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (
            8.0 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))
        ) / (12.0 * h)
    return g


def third_diag_fd(f, x, h=1e-3):
    """Central-difference unmixed third derivatives of a scalar function."""
    x = np.asarray(x, dtype=float)
    t = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        t[j] = (
            f(x + 2 * e) - 2.0 * f(x + e) + 2.0 * f(x - e) - f(x - 2 * e)
        ) / (2.0 * h**3)
    return t


def msn_mode(params, tol=1e-12, max_iter=200):
    """Mode of a skew-normal density by damped Newton on its own log density."""
    theta = params.mu.copy()
    f = params.log_density(theta)
    for _ in range(max_iter):
        g = params.grad_log_density(theta)
        if np.linalg.norm(g) < tol:
            return theta
        step = np.linalg.solve(-params.hessian_log_density(theta), g)
        lam = 1.0
        while lam > 2.0**-30:
            cand = theta + lam * step
            fc = params.log_density(cand)
            if fc > f:
                theta, f = cand, fc
                break
            lam *= 0.5
        else:
            # objective increments are below float resolution; polish with
            # two full Newton steps (quadratic contraction) and stop
            for _ in range(2):
                g = params.grad_log_density(theta)
                theta = theta + np.linalg.solve(
                    -params.hessian_log_density(theta), g
                )
            break
    assert np.linalg.norm(params.grad_log_density(theta)) < 1e-9
    return theta


def exact_derivative_stats(params):
    """Analytic (mode, J, t) of a skew-normal distribution."""
    from skewmatch.msn import DerivativeStats

    mode = msn_mode(params)
    return DerivativeStats(
        mode=mode,
        neg_hessian=-params.hessian_log_density(mode),
        tud=params.tud_log_density(mode),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
