"""Gaussian watermark draws, injection and moment propagation."""
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector, check_psd


def _cov(U, c=None):
    U = as_matrix(U, "U", None if c is None else (c, c))
    return check_psd(U, "U")


def draw(U, rng):
    """``phi ~ N(0, U)``.

    Exactly ``c`` standard normals are consumed regardless of ``U``, so two
    runs with different covariances stay aligned on the same stream.
    """
    U = _cov(U)
    z = rng.standard_normal(U.shape[0])
    if U.shape[0] == 1:
        return np.sqrt(max(U[0, 0], 0.0)) * z
    lam, vec = np.linalg.eigh(U)
    return vec @ (np.sqrt(np.clip(lam, 0.0, None)) * (vec.T @ z))


def inject(u, phi):
    u = as_vector(u, "u")
    return u + as_vector(phi, "phi", u.shape[0])


@dataclass
class WatermarkSchedule:
    """History of covariances ``U[t]`` and signals ``phi[t]``, trimmed to ``horizon`` entries."""

    horizon: int = None
    cov_history: list = field(default_factory=list)
    signal_history: list = field(default_factory=list)
    offset: int = 0

    def record(self, U, phi):
        self.cov_history.append(np.atleast_2d(np.asarray(U, dtype=float)))
        self.signal_history.append(np.atleast_1d(np.asarray(phi, dtype=float)))
        if self.horizon is not None and len(self.cov_history) > self.horizon:
            drop = len(self.cov_history) - self.horizon
            del self.cov_history[:drop]
            del self.signal_history[:drop]
            self.offset += drop

    def cov(self, t):
        if t < self.offset:
            raise IndexError(f"covariance at t={t} was trimmed from the schedule")
        return self.cov_history[t - self.offset]

    __getitem__ = cov

    def draw(self, U, rng):
        phi = draw(U, rng)
        self.record(U, phi)
        return phi

    def __len__(self):
        return self.offset + len(self.cov_history)


@dataclass(frozen=True)
class MomentState:
    Z: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    mu: np.ndarray
    t: int = 0


def initial_moments(model):
    n = model.n
    return MomentState(Z=np.zeros((n, n)), W=model.Sigma0.copy(), Y=np.zeros((n, n)), mu=model.mu0.copy(), t=0)


def propagate_moments(ms, model, ctrl_input, U_t):
    A, B = model.A, model.B
    U_t = _cov(U_t, model.c)
    u = as_vector(ctrl_input, "ctrl_input", model.c)
    Y = A @ ms.W @ A.T
    return MomentState(
        Z=A @ ms.Z @ A.T + B @ U_t @ B.T,
        W=Y + model.Q,
        Y=Y,
        mu=A @ ms.mu + B @ u,
        t=ms.t + 1,
    )


def z_closed_form(model, U_history, t):
    """``Z[t] = sum_k A^k B U[t-k-1] B' (A^k)'`` evaluated term by term."""
    A, B = model.A, model.B
    Z = np.zeros((model.n, model.n))
    Ak = np.eye(model.n)
    for k in range(t):
        U = as_matrix(U_history[t - k - 1], "U", (model.c, model.c))
        Z += Ak @ B @ U @ B.T @ Ak.T
        Ak = A @ Ak
    return Z
