"""Chi-square family CDFs and the spectral tools behind the replay-attack law.

The generalized chi-square CDF is evaluated by Imhof's characteristic-function
inversion with adaptive quadrature; a Monte-Carlo estimate is used only if the
quadrature fails to converge, and that is reported through ``full_output``.
"""
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize, special

from ._validation import ConfigurationError, DomainError, PSD_TOL, as_matrix, as_vector, symmetrize

POISSON_TAIL = 1e-12
JACOBI_TOL = 1e-12
IMHOF_ABS_TOL = 1e-6
FALLBACK_SAMPLES = 1_000_000


def chi2_cdf(x, n):
    """Regularized lower incomplete gamma ``P(n/2, x/2)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi2_cdf is defined for x >= 0")
    if n < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {n}")
    out = special.gammainc(0.5 * n, 0.5 * x)
    return float(out) if out.ndim == 0 else out


def chi2_quantile(p, n):
    """Inverse of :func:`chi2_cdf` by bracketed root finding."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    hi = max(1.0, float(n))
    while chi2_cdf(hi, n) < p:
        hi *= 2.0
    return optimize.brentq(lambda x: chi2_cdf(x, n) - p, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def _poisson_range(mu):
    """Index range [lo, hi] holding all but ``POISSON_TAIL`` of Poisson(mu) mass."""
    if mu == 0.0:
        return 0, 0
    sd = np.sqrt(mu)
    lo = max(0, int(np.floor(mu - 8.0 * sd - 10.0)))
    while lo > 0 and special.pdtr(lo - 1, mu) > 0.5 * POISSON_TAIL:
        lo = max(0, lo - int(2 * sd + 10))
    hi = int(np.ceil(mu + 8.0 * sd + 10.0))
    while special.pdtrc(hi, mu) > 0.5 * POISSON_TAIL:
        hi += int(2 * sd + 10)
    return lo, hi


def noncentral_chi2_cdf(x, n, lam):
    """Noncentral chi-square CDF as a Poisson mixture of central CDFs.

    The series is summed over the window of Poisson indices around the mode
    whose excluded mass is below ``1e-12``, so large noncentralities stay cheap.
    """
    if x < 0:
        raise DomainError("noncentral_chi2_cdf is defined for x >= 0")
    if n < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {n}")
    if lam < 0:
        raise DomainError(f"noncentrality must be >= 0, got {lam}")
    if lam == 0.0:
        return chi2_cdf(x, n)
    mu = 0.5 * lam
    lo, hi = _poisson_range(mu)
    j = np.arange(lo, hi + 1, dtype=float)
    logw = -mu + j * np.log(mu) - special.gammaln(j + 1.0)
    w = np.exp(logw)
    val = float(np.sum(w * special.gammainc(0.5 * n + j, 0.5 * x)))
    return min(max(val, 0.0), 1.0)


@dataclass(frozen=True)
class Gx2Params:
    """Weighted sum of independent noncentral chi-squares with zero offsets."""

    weights: np.ndarray
    dofs: np.ndarray
    noncentralities: np.ndarray
    linear_coef: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        w = as_vector(self.weights, "weights")
        k = as_vector(self.dofs, "dofs")
        lam = as_vector(self.noncentralities, "noncentralities")
        if not (len(w) == len(k) == len(lam)):
            raise ConfigurationError("weights, dofs and noncentralities must have equal length")
        if np.any(w <= 0):
            raise ConfigurationError("weights must be positive")
        if np.any(k < 1) or np.any(k != np.round(k)):
            raise ConfigurationError("dofs must be positive integers")
        if np.any(lam < 0):
            raise ConfigurationError("noncentralities must be nonnegative")
        if self.linear_coef != 0.0 or self.offset != 0.0:
            raise ConfigurationError("only s = m = 0 is supported")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dofs", k)
        object.__setattr__(self, "noncentralities", lam)

    def mean(self):
        return float(np.sum(self.weights * (self.dofs + self.noncentralities)))

    def sample(self, size, rng):
        """Draw ``size`` variates directly from the definition."""
        out = np.zeros(size)
        for w, k, lam in zip(self.weights, self.dofs, self.noncentralities):
            z = rng.standard_normal((size, int(k)))
            z[:, 0] += np.sqrt(lam)
            out += w * np.einsum("ij,ij->i", z, z)
        return out


class Gx2Cdf(NamedTuple):
    value: float
    abserr: float
    method: str
    converged: bool


def _theta0(u, w, k, lam):
    wu = w * u
    return 0.5 * np.sum(k * np.arctan(wu) + lam * wu / (1.0 + wu * wu))


def _inv_u_rho(u, w, k, lam):
    wu = w * u
    log_rho = np.sum(0.25 * k * np.log1p(wu * wu) + 0.5 * lam * wu * wu / (1.0 + wu * wu))
    return np.exp(-log_rho) / u


def imhof_cdf(p, x, epsabs=1e-9, limit=2000, split=1.0):
    """Imhof inversion, returning ``(value, abserr, converged)``.

    The integrand ``sin(theta(u)) / (u rho(u))`` is integrated directly on
    ``[0, split]``; beyond that ``sin(theta0 - x u / 2)`` is expanded so the
    tail becomes two Fourier integrals with slowly varying amplitudes, which
    QUADPACK's QAWF routine handles despite the algebraic decay.
    """
    w, k, lam = p.weights, p.dofs, p.noncentralities
    scale = float(np.max(w))
    ws = w / scale
    xs = x / scale
    freq = 0.5 * xs

    def head(u):
        if u == 0.0:
            return 0.5 * (np.sum(ws * (k + lam)) - xs)
        return np.sin(_theta0(u, ws, k, lam) - freq * u) * _inv_u_rho(u, ws, k, lam)

    def amp_cos(u):
        return np.sin(_theta0(u, ws, k, lam)) * _inv_u_rho(u, ws, k, lam)

    def amp_sin(u):
        return -np.cos(_theta0(u, ws, k, lam)) * _inv_u_rho(u, ws, k, lam)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        v0, e0 = integrate.quad(head, 0.0, split, epsabs=epsabs, epsrel=0.0, limit=limit)
        v1, e1 = integrate.quad(amp_cos, split, np.inf, weight="cos", wvar=freq, epsabs=epsabs, limlst=200)
        v2, e2 = integrate.quad(amp_sin, split, np.inf, weight="sin", wvar=freq, epsabs=epsabs, limlst=200)
    err = (e0 + e1 + e2) / np.pi
    val = 0.5 - (v0 + v1 + v2) / np.pi
    return val, err, bool(np.isfinite(val) and err <= IMHOF_ABS_TOL)


def gx2_cdf(p, x, full_output=False, rng=None):
    """CDF of a generalized chi-square variable at ``x``.

    Single-term laws reduce exactly to a scaled noncentral chi-square and are
    evaluated through :func:`noncentral_chi2_cdf`; all others go through
    Imhof's inversion. If quadrature does not reach ``1e-6`` absolute error
    the value is replaced by a Monte-Carlo estimate over ``1e6`` draws and
    ``full_output`` reports ``converged=False``.
    """
    x = float(x)
    if x <= 0.0:
        res = Gx2Cdf(0.0, 0.0, "support", True)
    elif len(p.weights) == 1:
        val = noncentral_chi2_cdf(x / p.weights[0], int(p.dofs[0]), float(p.noncentralities[0]))
        res = Gx2Cdf(val, 0.0, "noncentral", True)
    else:
        val, err, ok = imhof_cdf(p, x)
        if ok:
            res = Gx2Cdf(min(max(val, 0.0), 1.0), err, "imhof", True)
        else:
            rng = np.random.default_rng(0) if rng is None else rng
            draws = p.sample(FALLBACK_SAMPLES, rng)
            val = float(np.mean(draws <= x))
            res = Gx2Cdf(val, np.sqrt(val * (1 - val) / FALLBACK_SAMPLES), "monte_carlo", False)
    return res if full_output else res.value


@dataclass(frozen=True)
class EigenPair:
    """Decomposition ``M = P.T @ diag(eigenvalues) @ P``; rows of ``P`` are eigenvectors."""

    P: np.ndarray
    eigenvalues: np.ndarray

    def reconstruct(self):
        return self.P.T @ np.diag(self.eigenvalues) @ self.P


def symmetric_eig(M, tol=JACOBI_TOL, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Sweeps continue until the off-diagonal Frobenius norm falls below
    ``tol * max(1, ||M||_F)``. Eigenvalues are sorted in descending order.
    """
    a = symmetrize(as_matrix(M, "M")).copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise ConfigurationError("M must be square")
    v = np.eye(n)
    bound = tol * max(1.0, np.linalg.norm(a))
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < bound:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    return EigenPair(P=v[:, order].T.copy(), eigenvalues=lam[order])


def psd_sqrt(S, pinv=False):
    """Symmetric square root of a PSD matrix (or of its pseudo-inverse)."""
    e = symmetric_eig(S)
    lam = np.where(e.eigenvalues < PSD_TOL * max(1.0, np.max(np.abs(e.eigenvalues))), 0.0, e.eigenvalues)
    if np.any(e.eigenvalues < -PSD_TOL * max(1.0, np.max(np.abs(e.eigenvalues)))):
        raise ConfigurationError("matrix is not positive semidefinite")
    if pinv:
        d = np.zeros_like(lam)
        d[lam > 0] = 1.0 / np.sqrt(lam[lam > 0])
    else:
        d = np.sqrt(lam)
    return e.P.T @ np.diag(d) @ e.P


def gx2_from_residual_law(m, S, Q, rank_tol=1e-10):
    """Generalized chi-square law of ``r' Q^{-1} r`` for ``r ~ N(m, S)``.

    Uses ``S^{1/2} Q^{-1} S^{1/2} = P' diag(w) P`` and ``b = P S^{-1/2} m``,
    returning weights ``w``, unit dofs and noncentralities ``b**2``. Directions
    in the null space of a singular ``S`` carry no randomness and are dropped;
    ``m`` must then lie in the range of ``S``.
    """
    S = as_matrix(S, "S")
    n = S.shape[0]
    m = as_vector(m, "m", n)
    Q = as_matrix(Q, "Q", (n, n))
    s_half = psd_sqrt(S)
    s_ihalf = psd_sqrt(S, pinv=True)
    q_inv = np.linalg.inv(symmetrize(Q))
    e = symmetric_eig(s_half @ q_inv @ s_half)
    keep = e.eigenvalues > rank_tol * max(e.eigenvalues.max(), 0.0)
    if not np.any(keep):
        raise ConfigurationError("residual covariance is zero; the law is degenerate")
    m_range = s_half @ (s_ihalf @ m)
    if np.linalg.norm(m - m_range) > 1e-8 * max(1.0, np.linalg.norm(m)):
        raise ConfigurationError("mean lies outside the range of a singular covariance")
    b = e.P @ (s_ihalf @ m)
    return Gx2Params(weights=e.eigenvalues[keep], dofs=np.ones(int(keep.sum())), noncentralities=b[keep] ** 2)
