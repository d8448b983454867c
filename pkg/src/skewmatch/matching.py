"""Skew-normal matching schemes: fit (mu, sigma, d) to posterior statistics.

Four schemes are provided, each matching a different combination of
statistics to the skew-normal family:

- ``match_moments``      mean + covariance + third unmixed central moments
- ``match_derivatives``  mode + negative Hessian + third unmixed log derivatives
- ``match_mmh``          mean + mode + negative Hessian
- ``match_mmc``          mean + mode + covariance

The derivative-based schemes reduce to a scalar root-find in the recurring
quantity kappa = d'(mode - mu); only strictly positive kappa is searched.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .msn import ConstraintError, MomentStats, MsnParams, d_from_delta
from .specialfns import log_zeta1, zeta

__all__ = [
    "NoRootError",
    "LossWeights",
    "MatchResult",
    "match_moments",
    "match_derivatives",
    "match_mmh",
    "match_mmc",
    "solve_kappa",
    "MM_THRESHOLD",
    "MMC_THRESHOLD",
]

_log = logging.getLogger(__name__)

_SQRT_2_PI = np.sqrt(2.0 / np.pi)

# no-solution boundaries: v'C^-1 v >= MM_THRESHOLD kills moment matching,
# Delta'C^-1 Delta >= MMC_THRESHOLD kills mean-mode-covariance matching
MM_THRESHOLD = 2.0 ** (1.0 / 3.0) * (4.0 - np.pi) ** (2.0 / 3.0) / (np.pi - 2.0)
MMC_THRESHOLD = 2.0 / (np.pi - 2.0)

# residual level certifying an exact (or exactly-shrunk) solution
_RESIDUAL_TOL = 1e-8

# below this the mean-mode gap carries no usable skewness signal and the
# Gaussian member is returned directly
def _skew_eps(mean):
    return 1e-10 * (1.0 + float(np.linalg.norm(mean)))


class NoRootError(RuntimeError):
    """The scalar kappa equation has no sign change on the search grid."""


@dataclass(frozen=True)
class LossWeights:
    """Weights of the shrinkage losses used when a scheme has no exact solution."""

    w_mm: float = 2000.0
    w_mmc: float = 50.0

    def __post_init__(self):
        if self.w_mm <= 0.0 or self.w_mmc <= 0.0:
            raise ValueError("loss weights must be strictly positive")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one matching scheme.

    status is "exact", "adjusted" (statistics shrunk by factor ``a``) or
    "failed" (params is then None and ``reason`` says why). ``residual`` is
    the largest normalized residual of the scheme's defining equations,
    evaluated against the (possibly shrunk) statistics.
    """

    params: MsnParams | None
    status: str
    residual: float = np.nan
    kappa: float | None = None
    a: float | None = None
    reason: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in ("exact", "adjusted", "failed"):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "failed":
            if self.params is not None:
                raise ValueError("failed result cannot carry params")
            return
        if self.params is None:
            raise ValueError(f"{self.status} result requires params")
        if not self.residual < _RESIDUAL_TOL:
            raise ValueError(
                f"{self.status} result has residual {self.residual:.3g} "
                f">= {_RESIDUAL_TOL}"
            )
        if self.status == "adjusted" and not 0.0 < self.a < 1.0:
            raise ValueError(f"adjusted result requires a in (0, 1), got {self.a}")

    @property
    def ok(self):
        return self.status != "failed"

    def to_json(self):
        return {
            "status": self.status,
            "a": self.a,
            "kappa": self.kappa,
            "residual": None if np.isnan(self.residual) else self.residual,
            "params": None if self.params is None else self.params.to_json(),
            "reason": self.reason,
        }


def _failed(reason, **diag):
    return MatchResult(params=None, status="failed", reason=reason, diagnostics=diag)


def _rel(diff, ref):
    return float(np.max(np.abs(diff)) / (1.0 + np.max(np.abs(ref))))


def _moment_residual(params, stats):
    """Max normalized residual of the moment-matching system."""
    mom = params.moments()
    return max(
        _rel(mom.mean - stats.mean, stats.mean),
        _rel(mom.cov - stats.cov, stats.cov),
        _rel(mom.tum - stats.tum, stats.tum),
    )


def _mode_residual(params, mode, kappa):
    # gradient-at-mode equation in the solved form mode = mu + zeta_1 Sigma d
    implied = params.mu + zeta(1, kappa) * (params.sigma @ params.d)
    return _rel(implied - mode, mode)


def _kappa_residual(params, mode, kappa):
    return abs(kappa - float(params.d @ (mode - params.mu))) / (1.0 + abs(kappa))


def _hessian_residual(params, neg_hessian, kappa):
    sigma_inv = np.linalg.inv(params.sigma)
    implied = sigma_inv - zeta(2, kappa) * np.outer(params.d, params.d)
    return _rel(implied - neg_hessian, neg_hessian)


def signed_cbrt(x):
    """Odd cube root, elementwise; keeps the sign of negative components."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# scalar kappa machinery


def kappa_roots(f):
    """Yield verified roots of f on (0, 1e4], smallest first.

    Scans a geometric grid (16 points per decade from 1e-10 up to 1e4) for
    sign changes between finite values and Brent-refines each bracket. A
    refined point counts as a root when |f| collapses there, either in
    absolute terms (< 1e-12 (1 + kappa)) or relative to the bracket
    endpoints; sign changes caused by poles fail both tests and are
    skipped.
    """
    grid = 1e-10 * 10.0 ** (np.arange(0, 225) / 16.0)
    vals = np.array([f(k) for k in grid])
    finite = np.isfinite(vals[:-1]) & np.isfinite(vals[1:])
    flips = finite & (np.sign(vals[:-1]) * np.sign(vals[1:]) < 0.0)
    if np.count_nonzero(flips) > 1:
        _log.debug(
            "kappa equation has %d sign changes on the grid", np.count_nonzero(flips)
        )
    for j in range(len(grid) - 1):
        if np.isfinite(vals[j]) and vals[j] == 0.0:
            yield float(grid[j])
        elif flips[j]:
            root = _refine(f, grid[j], grid[j + 1], vals[j], vals[j + 1])
            if root is not None:
                yield root


def solve_kappa(f, bracket_hint=None):
    """Smallest verified positive root of a scalar function; see ``kappa_roots``.

    Raises NoRootError when no grid sign change survives verification.
    """
    if bracket_hint is not None:
        lo, hi = bracket_hint
        root = _refine(f, lo, hi, f(lo), f(hi))
        if root is not None:
            return root
    for root in kappa_roots(f):
        return root
    raise NoRootError("no sign change of the kappa equation on (0, 1e4]")


def _refine(f, lo, hi, flo, fhi):
    try:
        root = brentq(f, lo, hi, xtol=1e-15, rtol=4e-15, maxiter=200)
    except (ValueError, RuntimeError):
        return None
    fr = abs(f(root))
    if fr < 1e-12 * (1.0 + abs(root)):
        return float(root)
    # steep but genuine roots leave |f| far below the bracket endpoint values,
    # whereas at a pole |f| blows up instead
    if fr <= 1e-4 * max(abs(flo), abs(fhi)):
        return float(root)
    return None


def _kappa_parts(kappa):
    """Quantities shared by the kappa equations, free of tail cancellation.

    Returns (zeta_1, c, h) where h = sqrt(zeta_1^2 + kappa zeta_1) and
    c = (sqrt(2/pi) - h)^2; the identity lambda(kappa)^2 (1 + kappa/zeta_1)
    = c lets every scheme avoid dividing underflowed zeta values.
    """
    z1 = zeta(1, kappa)
    h = np.sqrt(z1 * (z1 + kappa))
    c = (_SQRT_2_PI - h) ** 2
    return z1, c, h


def _lambda_kappa(kappa):
    """lambda(kappa) = sqrt(2/pi) (1 + kappa/zeta_1)^(-1/2) - zeta_1."""
    z1, c, _ = _kappa_parts(kappa)
    return np.sqrt(c) * np.sqrt(z1 / (z1 + kappa))


def _beta_kappa(kappa):
    """beta(kappa) = (2/pi) (1 + kappa/zeta_1)^(-1) / lambda(kappa)^2."""
    _, c, _ = _kappa_parts(kappa)
    return (2.0 / np.pi) / c


def _mmc_equation(g):
    """MMC kappa equation, multiplied through by G for O(1) scaling."""

    def f(kappa):
        z1, c, _ = _kappa_parts(kappa)
        return 1.0 + g * ((2.0 / np.pi) - 1.0 - z1 / kappa) / c

    return f


def _mmh_alpha_inv_base(kappa):
    """A(kappa) with 1/alpha = A(kappa) - Q; increasing through the pole."""
    z1, c, _ = _kappa_parts(kappa)
    return c * (kappa**2 - 1.0 / (kappa + z1) ** 2)


def _mmh_alpha(kappa, q):
    return 1.0 / (_mmh_alpha_inv_base(kappa) - q)


def _mmh_equation(q):
    """MMH kappa equation, multiplied through by Q for O(1) scaling."""

    def f(kappa):
        z1, c, _ = _kappa_parts(kappa)
        return 1.0 - q * _mmh_alpha(kappa, q) - q * (1.0 + z1 / kappa) / c

    return f


def _mmh_kappa_candidates(q):
    """Candidate MMH roots, restricted to kappa below the pole of alpha.

    A valid solution needs sigma = J^-1 - alpha Delta Delta' to dominate
    J^-1, i.e. alpha <= 0, which confines the genuine root to the left of
    the unique pole A(kappa) = Q. The equation runs from -inf at 0+ to
    +inf at the pole, so a bracket always exists on that side.
    """
    f = _mmh_equation(q)
    try:
        pole = solve_kappa(lambda k: _mmh_alpha_inv_base(k) - q)
    except NoRootError:
        yield from kappa_roots(f)
        return
    grid = np.geomspace(1e-10, pole * (1.0 - 1e-9), 300)
    vals = np.array([f(k) for k in grid])
    yielded = False
    for j in range(len(grid) - 1):
        a, b = vals[j], vals[j + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        if a == 0.0:
            yielded = True
            yield float(grid[j])
        elif np.sign(a) * np.sign(b) < 0.0:
            root = _refine(f, grid[j], grid[j + 1], a, b)
            if root is not None:
                yielded = True
                yield root
    if not yielded:
        # root hides in the sliver between the last negative grid value and
        # the pole, where f crosses on its way to +inf
        neg = np.where(np.isfinite(vals) & (vals < 0.0))[0]
        if neg.size:
            lo = grid[neg[-1]]
            hi = pole * (1.0 - 1e-12)
            root = _refine(f, lo, hi, f(lo), f(hi))
            if root is not None:
                yield root


def _dm_equation(r):
    """DM kappa equation, normalized by zeta_1 and R for O(1) scaling.

    Uses zeta_3 = zeta_1 * E with E = (kappa+zeta_1)^2 - 1 + zeta_1 (kappa
    + zeta_1) and log zeta_1 so the left factor survives zeta underflow at
    large kappa.
    """

    def f(kappa):
        z1 = zeta(1, kappa)
        w = kappa + z1
        e = w * w - 1.0 + z1 * w
        log_term = np.log(kappa) + (2.0 / 3.0) * np.log(e) - (1.0 / 3.0) * log_zeta1(
            kappa
        )
        with np.errstate(over="ignore"):
            term = np.exp(log_term)
        return term / r - (kappa * w + 1.0)

    return f


# ---------------------------------------------------------------------------
# moment matching


def match_moments(stats, weights=LossWeights()):
    """Match mean, covariance and third unmixed central moments (exact or shrunk)."""
    cov_inv_v_quad, v = _mm_feasibility(stats)
    if cov_inv_v_quad < MM_THRESHOLD:
        params = _mm_solve(stats, v)
        return MatchResult(
            params=params, status="exact", residual=_moment_residual(params, stats)
        )
    # shrink v_a = a v until the constraint admits a solution, trading the
    # size of the adjustment against the size of the resulting d
    a_max = np.sqrt(MM_THRESHOLD / cov_inv_v_quad)
    v_norm = float(np.linalg.norm(v))

    def loss(a):
        shrunk = _shrunk_moment_stats(stats, v, a)
        try:
            params = _mm_solve(shrunk, a * v)
        except (ConstraintError, ValueError):
            return np.inf
        return weights.w_mm * (1.0 - a) * v_norm + float(np.linalg.norm(params.d))

    a_best = _golden_section(loss, 0.0, a_max)
    if not np.isfinite(loss(a_best)):
        return _failed("loss minimization found no feasible shrink factor")
    shrunk = _shrunk_moment_stats(stats, v, a_best)
    params = _mm_solve(shrunk, a_best * v)
    return MatchResult(
        params=params,
        status="adjusted",
        residual=_moment_residual(params, shrunk),
        a=float(a_best),
        diagnostics={"quad_form": cov_inv_v_quad},
    )


def _mm_feasibility(stats):
    v = signed_cbrt(stats.tum)
    quad = float(v @ np.linalg.solve(stats.cov, v))
    return quad, v


def _shrunk_moment_stats(stats, v, a):
    return MomentStats(mean=stats.mean, cov=stats.cov, tum=(a * v) ** 3)


def _mm_solve(stats, v):
    delta = (np.pi**1.5 / (np.sqrt(2.0) * (4.0 - np.pi))) ** (1.0 / 3.0) * v
    mu = stats.mean - _SQRT_2_PI * delta
    sigma = stats.cov + (2.0 / np.pi) * np.outer(delta, delta)
    d = d_from_delta(delta, sigma)
    return MsnParams(mu, sigma, d)


def _golden_section(loss, lo, hi, rel_shrink=1e-6, tol=1e-10):
    """Golden-section minimization on the open interval (lo, hi)."""
    span = hi - lo
    a, b = lo + rel_shrink * span, hi - rel_shrink * span
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = loss(c), loss(d)
    while b - a > tol * (1.0 + b):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = loss(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = loss(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# derivative matching


def match_derivatives(stats):
    """Match mode, negative Hessian and third unmixed log-density derivatives."""
    m, j_mat, t = stats.mode, stats.neg_hessian, stats.tud
    u = signed_cbrt(t)
    r = float(u @ np.linalg.solve(j_mat, u))
    if r < 1e-10:
        # numerically zero skewness signal; the kappa root would sit below
        # the search grid and the Gaussian member already certifies
        return _gaussian_result(m, np.linalg.inv(j_mat), m)
    return _first_certified(
        kappa_roots(_dm_equation(r)), lambda kappa: _dm_reconstruct(stats, kappa), r=r
    )


def _dm_reconstruct(stats, kappa):
    m, j_mat, t = stats.mode, stats.neg_hessian, stats.tud
    d = signed_cbrt(t / zeta(3, kappa))
    sigma_inv = j_mat + zeta(2, kappa) * np.outer(d, d)
    try:
        sigma = np.linalg.inv(sigma_inv)
        mu = m - zeta(1, kappa) * (sigma @ d)
        params = MsnParams(mu, sigma, d)
    except (np.linalg.LinAlgError, ValueError):
        return _failed("indefinite scale", kappa=kappa)
    residual = max(
        _mode_residual(params, m, kappa),
        _hessian_residual(params, j_mat, kappa),
        _rel(zeta(3, kappa) * params.d**3 - t, t),
        _kappa_residual(params, m, kappa),
    )
    if not residual < _RESIDUAL_TOL:
        return _failed("residual certification failed", kappa=kappa, residual=residual)
    return MatchResult(params=params, status="exact", residual=residual, kappa=kappa)


def _first_certified(candidates, reconstruct, **diag):
    """Reconstruct params at each candidate kappa root, smallest first.

    Roots of the scalar equation are necessary but not sufficient; a
    spurious root fails the residual certification inside ``reconstruct``
    and the scan moves on.
    """
    last = None
    for kappa in candidates:
        result = reconstruct(kappa)
        if result.ok:
            return result
        last = result
    if last is not None:
        return last
    return _failed("no kappa root", **diag)


# ---------------------------------------------------------------------------
# mean-mode-Hessian matching


def match_mmh(stats, mean):
    """Match mean, mode and negative Hessian at the mode."""
    m, j_mat = stats.mode, stats.neg_hessian
    mean = np.asarray(mean, dtype=float)
    delta_vec = mean - m
    if np.linalg.norm(delta_vec) < _skew_eps(mean):
        return _gaussian_result(m, np.linalg.inv(j_mat), m)
    q = float(delta_vec @ j_mat @ delta_vec)
    j_inv = np.linalg.inv(j_mat)

    def reconstruct(kappa):
        sigma = j_inv - _mmh_alpha(kappa, q) * np.outer(delta_vec, delta_vec)
        return _finish_mean_mode(
            sigma, delta_vec, mean, kappa, mode=m, neg_hessian=j_mat
        )

    return _first_certified(_mmh_kappa_candidates(q), reconstruct, q=q)


def _finish_mean_mode(sigma, delta_vec, mean, kappa, mode, neg_hessian=None, cov=None):
    lam = _lambda_kappa(kappa)
    try:
        d = np.linalg.solve(sigma, delta_vec) / lam
        mu = mean - _SQRT_2_PI * (sigma @ d) / np.sqrt(1.0 + d @ sigma @ d)
        params = MsnParams(mu, sigma, d)
    except (np.linalg.LinAlgError, ValueError):
        return _failed("indefinite scale", kappa=kappa)
    mom = params.moments()
    residual = max(
        _mode_residual(params, mode, kappa),
        _rel(mom.mean - mean, mean),
        _kappa_residual(params, mode, kappa),
    )
    if neg_hessian is not None:
        residual = max(residual, _hessian_residual(params, neg_hessian, kappa))
    if cov is not None:
        residual = max(residual, _rel(mom.cov - cov, cov))
    if not residual < _RESIDUAL_TOL:
        return _failed("residual certification failed", kappa=kappa, residual=residual)
    return MatchResult(params=params, status="exact", residual=residual, kappa=kappa)


def _gaussian_result(mean, cov, mode):
    params = MsnParams(mean, cov, np.zeros(len(mean)))
    residual = _rel(params.mu - mode, mode)
    return MatchResult(params=params, status="exact", residual=residual)


# ---------------------------------------------------------------------------
# mean-mode-covariance matching


def match_mmc(mode, stats, weights=LossWeights(), allow_adjust=True):
    """Match mean, mode and covariance (exact, shrunk, or failed).

    When Delta' C^-1 Delta >= 2/(pi-2) there is no exact solution; the gap
    Delta is then shrunk (if ``allow_adjust``) or the scheme fails so the
    caller can fall back to its Gaussian base.
    """
    mode = np.asarray(mode, dtype=float)
    mean, cov = stats.mean, stats.cov
    delta_vec = mean - mode
    if np.linalg.norm(delta_vec) < _skew_eps(mean):
        return _gaussian_result(mean, cov, mode)
    g = float(delta_vec @ np.linalg.solve(cov, delta_vec))
    if g < MMC_THRESHOLD:
        result = _mmc_solve(mode, mean, cov, delta_vec, g)
        if result.ok or not allow_adjust:
            return result
    elif not allow_adjust:
        return _failed("G above threshold", g=g)
    # shrink Delta_a = a Delta; the shrunk system matches mean_a = mode + a Delta
    a_max = min(np.sqrt(MMC_THRESHOLD / g), 1.0)
    delta_norm = float(np.linalg.norm(delta_vec))

    def loss(a):
        res = _mmc_solve(mode, mode + a * delta_vec, cov, a * delta_vec, a * a * g)
        if not res.ok:
            return np.inf
        return weights.w_mmc * (1.0 - a) * delta_norm + float(
            np.linalg.norm(res.params.d)
        )

    a_best = _golden_section(loss, 0.0, a_max)
    if not np.isfinite(loss(a_best)):
        return _failed("loss minimization found no feasible shrink factor", g=g)
    res = _mmc_solve(
        mode, mode + a_best * delta_vec, cov, a_best * delta_vec, a_best**2 * g
    )
    return MatchResult(
        params=res.params,
        status="adjusted",
        residual=res.residual,
        kappa=res.kappa,
        a=float(a_best),
        diagnostics={"g": g},
    )


def _mmc_solve(mode, mean, cov, delta_vec, g):
    def reconstruct(kappa):
        sigma = cov + _beta_kappa(kappa) * np.outer(delta_vec, delta_vec)
        return _finish_mean_mode(sigma, delta_vec, mean, kappa, mode=mode, cov=cov)

    return _first_certified(kappa_roots(_mmc_equation(g)), reconstruct, g=g)
