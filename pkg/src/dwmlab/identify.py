"""ARX(1,1) least squares, Gaussian-mixture control surrogates and synthetic motion data."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError

VAR_FLOOR = 1e-10

# operating points of the four-block stepper profile: (A, B, Q, setpoint)
MOTOR_SEGMENTS = (
    (1.0, 0.0075, 5.57e-6, 46.94),
    (1.0, 0.0108, 9.81e-6, 91.38),
    (1.0, 0.0107, 9.38e-6, 46.92),
    (1.0, 0.0076, 5.57e-6, 2.48),
)


@dataclass(frozen=True)
class ArxFit:
    A: float
    B: float
    Q: float
    residual_variance: float
    stderr: tuple
    n_samples: int


def fit_arx(y, u):
    """OLS fit of ``y[t+1] = A y[t] + B u[t] + w[t]``.

    ``Q`` is the unbiased residual variance (two fitted parameters).
    """
    y = np.asarray(y, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if y.shape != u.shape:
        raise ConfigurationError(f"y and u must be aligned, got lengths {y.size} and {u.size}")
    if y.size < 10:
        raise ConfigurationError(f"ARX fit needs at least 10 samples, got {y.size}")
    X = np.column_stack([y[:-1], u[:-1]])
    target = y[1:]
    names = ("y", "u")
    for j, name in enumerate(names):
        if np.linalg.matrix_rank(X[:, : j + 1]) < j + 1:
            raise ConfigurationError(f"regressor column {name!r} is collinear with the preceding columns")
    coef, _, _, _ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ coef
    dof = max(target.size - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    stderr = tuple(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    return ArxFit(A=float(coef[0]), B=float(coef[1]), Q=s2, residual_variance=s2, stderr=stderr, n_samples=int(target.size))


class ArxIdentifier(BaseEstimator, RegressorMixin):
    """Estimator-style ARX(1,1): ``fit(y, u)`` then ``predict(y, u)`` gives one-step predictions."""

    def fit(self, y, u):
        res = fit_arx(y, u)
        self.A_, self.B_, self.Q_ = res.A, res.B, res.Q
        self.stderr_ = res.stderr
        return self

    def predict(self, y, u):
        check_is_fitted(self)
        return self.A_ * np.asarray(y, dtype=float) + self.B_ * np.asarray(u, dtype=float)


def _normal_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def _em(x, k, tol, max_iter, var_floor):
    n = x.size
    order = np.sort(x)
    groups = np.array_split(order, k)
    means = np.array([g.mean() for g in groups])
    variances = np.maximum(np.array([g.var() for g in groups]), max(var_floor, 1e-6 * x.var()))
    weights = np.full(k, 1.0 / k)
    history = []
    prev = -np.inf
    for _ in range(max_iter):
        logp = np.log(weights) + _normal_logpdf(x[:, None], means, variances)
        top = logp.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
        ll = float(lse.sum())
        history.append(ll)
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = resp.T @ x / nk
        variances = np.maximum((resp * (x[:, None] - means) ** 2).sum(axis=0) / nk, var_floor)
        if ll - prev < tol:
            break
        prev = ll
    return weights, means, variances, history


@dataclass(frozen=True)
class GmmComponents:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: tuple = ()
    bic: float = np.nan

    def sample(self, size, rng):
        return self.from_draws(rng.random(size), rng.standard_normal(size))

    def from_draws(self, uniform, normal):
        """Map uniform component draws and standard normals to mixture samples."""
        edges = np.cumsum(self.weights)
        idx = np.minimum(np.searchsorted(edges, uniform, side="right"), len(self.weights) - 1)
        return self.means[idx] + np.sqrt(self.variances[idx]) * normal

    @property
    def mean(self):
        return float(self.weights @ self.means)


def fit_gmm(samples, max_components=4, tol=1e-8, max_iter=200, var_floor=VAR_FLOOR):
    """EM fit of a 1-D Gaussian mixture for ``K = 1..max_components``, ``K`` chosen by BIC.

    Components are initialized from equal-count quantile groups, so the fit
    is deterministic.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise ConfigurationError(f"GMM fit needs at least 10 samples, got {x.size}")
    best = None
    for k in range(1, max_components + 1):
        w, m, v, hist = _em(x, k, tol, max_iter, var_floor)
        bic = -2.0 * hist[-1] + (3 * k - 1) * np.log(x.size)
        if best is None or bic < best.bic:
            best = GmmComponents(w, m, v, tuple(hist), float(bic))
    return best


class GaussianMixtureSurrogate(BaseEstimator):
    """Estimator-style wrapper around :func:`fit_gmm`."""

    def __init__(self, max_components=4, tol=1e-8):
        self.max_components = max_components
        self.tol = tol

    def fit(self, X, y=None):
        self.components_ = fit_gmm(X, self.max_components, self.tol)
        self.n_components_ = len(self.components_.weights)
        return self

    def sample(self, size, rng):
        check_is_fitted(self)
        return self.components_.sample(size, rng)


def synthetic_motion_cycle(rng, segments=MOTOR_SEGMENTS, steps_per_segment=9950, duty=0.5, spread=0.1, y0=0.0):
    """Watermark-free ``(y, u, boundaries)`` for the four-block profile.

    The controller surrogate is pulse-like: each fast sample is either idle
    (``u = 0``) or a drive pulse around ``2 m`` with ``m`` chosen so a block
    takes about ``steps_per_segment`` samples on average. A block ends when
    ``y`` first crosses its setpoint.
    """
    ys, us, bounds = [y0], [], [0]
    y = y0
    for A, B, Q, target in segments:
        sign = 1.0 if target >= y else -1.0
        m = (target - y) / (steps_per_segment * B)
        sd = np.sqrt(Q)
        while (y - target) * sign < 0:
            drive = rng.random() < duty
            u = (m / duty) * (1.0 + spread * rng.standard_normal()) if drive else 0.0
            y = A * y + B * u + sd * rng.standard_normal()
            us.append(u)
            ys.append(y)
        bounds.append(len(us))
    us.append(0.0)
    return np.array(ys), np.array(us), bounds


@lru_cache(maxsize=4)
def default_motor_gmms(seed=20240611, max_components=3):
    """Per-block GMM surrogates fitted to one synthetic motion cycle."""
    _, u, b = synthetic_motion_cycle(np.random.default_rng(seed))
    return tuple(fit_gmm(u[b[i]:b[i + 1]], max_components) for i in range(len(b) - 1))
