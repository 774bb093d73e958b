"""Bayesian detection confidence and the windowed Type-II error.

The onset of an attack has a geometric prior ``p(k) = (1 - rho)^(k-1) rho``.
The Type-II error sums the miss probability of each onset inside the window
``[t - w_beta, t]`` and adds ``H(g~) (1 - rho)^t`` for onsets still to come;
mass of onsets before the window is dropped, not renormalized.
"""
from dataclasses import dataclass, replace

import numpy as np

from ._validation import as_matrix, check_probability
from .detect import replay_moments, residual_law
from .dist import chi2_cdf, noncentral_chi2_cdf

D_MIN = 1e-12
D_MAX = 1.0 - 1e-12


def onset_pmf(k, rho):
    return (1.0 - rho) ** (k - 1) * rho


def onset_cdf(t, rho):
    """``p(tau <= t)``."""
    return 1.0 - (1.0 - rho) ** t


def _window_mass(a, b, rho):
    """``sum_{k=a}^{b} p(k)``."""
    if b < a:
        return 0.0
    return (1.0 - rho) ** (a - 1) - (1.0 - rho) ** b


def _miss_probability(m, S, Q, threshold):
    if S.shape == (1, 1):
        s = S[0, 0]
        x = threshold * Q[0, 0] / s
        lam = m[0] ** 2 / s
        return noncentral_chi2_cdf(x, 1, lam) if lam > 0 else chi2_cdf(x, 1)
    return residual_law(m, S, Q).cdf(threshold)


def type2_error(U_history, Q, B, threshold, rho, t, w_beta, moments=None, delta_t=0):
    """Windowed Type-II error at measurement index ``t``.

    Onsets strictly before ``t`` share the post-onset replay law, which only
    depends on the covariances at ``t - delta_t - 1`` and ``t - 1``. The onset
    ``k = t`` uses the onset law from ``moments`` when given, and the
    post-onset law otherwise.
    """
    Q = as_matrix(Q, "Q")
    B = as_matrix(B, "B")
    n = Q.shape[0]
    H = chi2_cdf(threshold, n)
    tail = H * (1.0 - rho) ** t
    lo = max(1, t - w_beta)
    if t < 1 or lo > t:
        return H
    if t - delta_t - 1 < 0:
        U1 = as_matrix(U_history[t - 1], "U")
    else:
        U1 = as_matrix(U_history[t - delta_t - 1], "U")
    U2 = as_matrix(U_history[t - 1], "U")
    S_post = Q + B @ (U1 + U2) @ B.T
    F_post = _miss_probability(np.zeros(n), S_post, Q, threshold)
    if moments is not None:
        m, S = replay_moments(t, t, delta_t, moments, U_history, Q, B)
        F_onset = _miss_probability(m, S, Q, threshold)
    else:
        F_onset = F_post
    beta = F_onset * onset_pmf(t, rho) + F_post * _window_mass(lo, t - 1, rho) + tail
    return float(min(max(beta, 0.0), 1.0))


def likelihoods(I, alpha, beta_t, rho, t):
    """``(p(I | attack), p(I | no attack))`` with the onset marginalized."""
    started = onset_cdf(t, rho)
    p0 = alpha if I else 1.0 - alpha
    p_det = 1.0 - beta_t if I else beta_t
    return p_det * started + p0 * (1.0 - started), p0


@dataclass(frozen=True)
class BeliefState:
    d: float = 0.05
    q: float = 0.05
    rho: float = 1e-3
    alpha: float = 0.005
    beta: float = 0.995
    w_beta: int = 50
    t: int = 0
    flagged: bool = False

    def __post_init__(self):
        for name in ("d", "q", "alpha", "beta"):
            check_probability(getattr(self, name), name)
        check_probability(self.rho, "rho", open_interval=True)
        if self.w_beta < 1:
            raise ValueError(f"w_beta must be >= 1, got {self.w_beta}")


def initial_belief(q=0.05, rho=1e-3, alpha=0.005, w_beta=50):
    return BeliefState(d=q, q=q, rho=rho, alpha=alpha, beta=1.0 - alpha, w_beta=w_beta)


def posterior(d, p1, p0):
    den = d * p1 + (1.0 - d) * p0
    if den <= 0.0:
        return d, True
    return min(max(d * p1 / den, D_MIN), D_MAX), False


def update(bs, I, beta_t=None, t=None):
    """Fold alarm flag ``I`` observed at index ``t`` (default ``bs.t + 1``) into ``d``."""
    t = bs.t + 1 if t is None else t
    beta_t = bs.beta if beta_t is None else beta_t
    p1, p0 = likelihoods(I, bs.alpha, beta_t, bs.rho, t)
    d, flagged = posterior(bs.d, p1, p0)
    return replace(bs, d=d, beta=beta_t, t=t, flagged=flagged)
