"""Chi-square residual detector and the analytic residual laws under attack."""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigurationError, as_matrix, as_vector, check_probability, symmetrize
from .dist import Gx2Params, chi2_cdf, chi2_quantile, gx2_cdf, gx2_from_residual_law, noncentral_chi2_cdf

ESTIMATOR_MODES = ("compensating", "noncompensating", "frozen_flip", "model_only")
FLIP_VARIANTS = {"frozen": "frozen_flip", "model_pre": "model_only", "model_post": "model_only"}


def _q_inverse(Q):
    Q = symmetrize(as_matrix(Q, "Q"))
    n = Q.shape[0]
    lam = np.linalg.eigvalsh(Q)
    if lam.max() <= 0:
        raise ConfigurationError("Q must be positive definite")
    if lam.min() <= 1e-12 * lam.max():
        Q = Q + 1e-15 * np.trace(Q) / n * np.eye(n)
    return np.linalg.inv(Q)


@dataclass(frozen=True)
class DetectorConfig:
    Q: np.ndarray
    threshold: float
    alpha: float
    estimator_mode: str = "compensating"

    def __post_init__(self):
        if self.estimator_mode not in ESTIMATOR_MODES:
            raise ConfigurationError(f"estimator_mode must be one of {ESTIMATOR_MODES}, got {self.estimator_mode!r}")
        if not self.threshold > 0:
            raise ConfigurationError(f"threshold must be positive, got {self.threshold}")
        check_probability(self.alpha, "alpha", open_interval=True)
        Q = symmetrize(as_matrix(self.Q, "Q"))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Q_inv", _q_inverse(Q))

    @classmethod
    def from_alpha(cls, Q, alpha, estimator_mode="compensating"):
        n = as_matrix(Q, "Q").shape[0]
        return cls(Q=Q, threshold=calibrate_threshold(alpha, n), alpha=alpha, estimator_mode=estimator_mode)

    @classmethod
    def from_threshold(cls, Q, threshold, estimator_mode="compensating"):
        """Fix ``g~`` directly; ``alpha`` is then the nominal false-alarm rate it implies."""
        n = as_matrix(Q, "Q").shape[0]
        return cls(Q=Q, threshold=threshold, alpha=1.0 - chi2_cdf(threshold, n), estimator_mode=estimator_mode)

    @property
    def n(self):
        return self.Q.shape[0]


def statistic(r, cfg):
    r = as_vector(r, "r", cfg.n)
    return float(r @ cfg.Q_inv @ r)


def alarm(g, cfg):
    return int(g > cfg.threshold)


def calibrate_threshold(alpha, n, mode="analytic", trace=None):
    check_probability(alpha, "alpha", open_interval=True)
    if mode == "analytic":
        return chi2_quantile(1.0 - alpha, n)
    if mode == "empirical":
        g = np.asarray([] if trace is None else trace, dtype=float).ravel()
        if g.size == 0:
            raise ConfigurationError("empirical calibration needs a non-empty nominal statistic trace")
        return float(np.quantile(g, 1.0 - alpha))
    raise ConfigurationError(f"calibration mode must be 'analytic' or 'empirical', got {mode!r}")


def predict(mode, model, y_prev, u_prev, phi_prev):
    """One-step prediction of the detector for each estimator mode.

    ``u_prev`` is the command the controller issued and ``phi_prev`` the
    watermark the defender added to it.
    """
    A, B = model.A, model.B
    y_prev = as_vector(y_prev, "y_prev", model.n)
    u_prev = as_vector(u_prev, "u_prev", model.c)
    phi_prev = as_vector(phi_prev, "phi_prev", model.c)
    if mode == "compensating":
        return A @ y_prev + B @ (u_prev + phi_prev)
    if mode in ("noncompensating", "model_only"):
        return A @ y_prev + B @ u_prev
    if mode == "frozen_flip":
        return A @ y_prev - B @ u_prev + B @ phi_prev
    raise ConfigurationError(f"unknown estimator mode {mode!r}")


@dataclass(frozen=True)
class ResidualLaw:
    """``r ~ N(mean, cov)`` together with the law of ``g = r' Q^{-1} r``."""

    mean: np.ndarray
    cov: np.ndarray
    family: str
    dof: int
    noncentrality: float = 0.0
    params: Gx2Params = None

    def cdf(self, x):
        if self.family == "central_chi2":
            return chi2_cdf(max(float(x), 0.0), self.dof)
        if self.family == "noncentral_chi2":
            return noncentral_chi2_cdf(max(float(x), 0.0), self.dof, self.noncentrality)
        return gx2_cdf(self.params, x)


def residual_law(m, S, Q, weighting="mahalanobis", rtol=1e-9):
    """Classify ``N(m, S)`` and attach the law of its detector statistic.

    ``weighting="literal"`` uses the unweighted noncentrality ``m'm`` in place
    of ``m' Q^{-1} m``; the two agree only when ``Q = I``.
    """
    Q = symmetrize(as_matrix(Q, "Q"))
    n = Q.shape[0]
    m = as_vector(m, "m", n)
    S = symmetrize(as_matrix(S, "S", (n, n)))
    if weighting not in ("mahalanobis", "literal"):
        raise ConfigurationError(f"weighting must be 'mahalanobis' or 'literal', got {weighting!r}")
    same_cov = np.allclose(S, Q, rtol=rtol, atol=0.0)
    if same_cov and not np.any(m):
        return ResidualLaw(m, S, "central_chi2", n)
    if same_cov:
        lam = float(m @ m) if weighting == "literal" else float(m @ _q_inverse(Q) @ m)
        return ResidualLaw(m, S, "noncentral_chi2", n, noncentrality=lam)
    p = gx2_from_residual_law(m, S, Q)
    return ResidualLaw(m, S, "generalized_chi2", n, noncentrality=float(np.sum(p.noncentralities)), params=p)


def law_nominal_known_wm(phi_prev, B, Q, weighting="mahalanobis"):
    """Watermark known but ignored by the predictor: ``r ~ N(B phi, Q)``."""
    B = as_matrix(B, "B")
    return residual_law(B @ as_vector(phi_prev, "phi_prev", B.shape[1]), Q, Q, weighting)


def law_flip(variant, u_prev, phi_prev, B, Q, estimator_mode=None, weighting="mahalanobis"):
    """Residual law under a flip attack.

    ``frozen`` pairs the post-watermark flip with the frozen-flip predictor,
    giving mean ``-2 B phi``. ``model_pre`` / ``model_post`` pair the pre / post
    flip with the model-only predictor, giving mean ``-2 B u +/- B phi``.
    """
    if variant not in FLIP_VARIANTS:
        raise ConfigurationError(f"flip variant must be one of {tuple(FLIP_VARIANTS)}, got {variant!r}")
    if estimator_mode is not None and FLIP_VARIANTS[variant] != estimator_mode:
        raise ConfigurationError(f"variant {variant!r} requires estimator mode {FLIP_VARIANTS[variant]!r}, got {estimator_mode!r}")
    B = as_matrix(B, "B")
    u = as_vector(u_prev, "u_prev", B.shape[1])
    phi = as_vector(phi_prev, "phi_prev", B.shape[1])
    if variant == "frozen":
        m = -2.0 * B @ phi
    elif variant == "model_pre":
        m = -2.0 * B @ u + B @ phi
    else:
        m = -2.0 * B @ u - B @ phi
    return residual_law(m, Q, Q, weighting)


def replay_moments(t, onset, delta_t, moments, U_history, Q, B):
    """Mean and covariance of the residual of replayed measurement ``t``.

    ``onset`` is the first spoofed index, ``moments`` maps a time index to a
    :class:`~dwmlab.watermark.MomentState` and ``U_history`` maps a time index
    to the covariance applied there.
    """
    B = as_matrix(B, "B")
    Q = symmetrize(as_matrix(Q, "Q"))
    c = B.shape[1]
    if t < onset:
        raise ConfigurationError(f"replay law needs t >= onset, got t={t}, onset={onset}")
    try:
        if t == onset:
            a, b = moments[onset - delta_t], moments[onset]
            return a.mu - b.mu, a.W + a.Z + b.Y + b.Z
        U1 = as_matrix(U_history[t - delta_t - 1], "U", (c, c))
        U2 = as_matrix(U_history[t - 1], "U", (c, c))
    except (KeyError, IndexError) as exc:
        raise ConfigurationError(f"moment or covariance history missing for replay law at t={t}") from exc
    return np.zeros(Q.shape[0]), Q + B @ (U1 + U2) @ B.T


def law_replay(t, onset, delta_t, moments, U_history, Q, B):
    """Residual law of replayed measurement ``t``; see :func:`replay_moments`."""
    m, S = replay_moments(t, onset, delta_t, moments, U_history, Q, B)
    return residual_law(m, S, Q)


class ChiSquareDetector(BaseEstimator):
    """Estimator-style wrapper: ``fit`` calibrates ``g~``, ``predict`` raises alarms.

    Parameters
    ----------
    alpha : float
        Type-I error level.
    threshold : float or None
        Fixed threshold; overrides calibration when given.
    calibration : {"analytic", "empirical"}
        How ``fit`` sets the threshold from ``alpha``.
    """

    def __init__(self, alpha=0.005, threshold=None, calibration="analytic"):
        self.alpha = alpha
        self.threshold = threshold
        self.calibration = calibration

    def fit(self, R, Q):
        """``R`` is an ``(N, n)`` array of nominal residuals, ``Q`` the noise covariance."""
        Q = symmetrize(as_matrix(Q, "Q"))
        self.Q_inv_ = _q_inverse(Q)
        self.n_features_in_ = Q.shape[0]
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
        elif self.calibration == "empirical":
            self.threshold_ = calibrate_threshold(self.alpha, Q.shape[0], "empirical", self._stat(R))
        else:
            self.threshold_ = calibrate_threshold(self.alpha, Q.shape[0])
        return self

    def _stat(self, R):
        R = np.asarray(R, dtype=float).reshape(-1, self.n_features_in_)
        return np.einsum("ij,jk,ik->i", R, self.Q_inv_, R)

    def transform(self, R):
        check_is_fitted(self)
        return self._stat(R)

    def predict(self, R):
        return (self.transform(R) > self.threshold_).astype(int)
