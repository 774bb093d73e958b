"""Stochastic linear plant, proportional controller and one-step predictor."""
from dataclasses import dataclass, field

import numpy as np

from ._validation import ConfigurationError, as_matrix, as_vector, check_psd


def _noise_factor(Q):
    """Factor ``L`` with ``L @ L.T == Q``; falls back to the symmetric root for singular Q."""
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        lam, vec = np.linalg.eigh(Q)
        return vec @ np.diag(np.sqrt(np.clip(lam, 0.0, None))) @ vec.T


@dataclass
class PlantModel:
    """``y[t+1] = A y[t] + B u'[t] + w[t]`` with ``w ~ N(0, Q)`` and ``y[0] ~ N(mu0, Sigma0)``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    mu0: np.ndarray = None
    Sigma0: np.ndarray = None

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got shape {self.A.shape}")
        self.B = as_matrix(self.B, "B", (n, None))
        self.Q = check_psd(as_matrix(self.Q, "Q", (n, n)), "Q")
        self.mu0 = np.zeros(n) if self.mu0 is None else as_vector(self.mu0, "mu0", n)
        self.Sigma0 = np.zeros((n, n)) if self.Sigma0 is None else check_psd(as_matrix(self.Sigma0, "Sigma0", (n, n)), "Sigma0")
        self._LQ = _noise_factor(self.Q)
        self._L0 = _noise_factor(self.Sigma0)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def c(self):
        return self.B.shape[1]

    def sample_noise(self, rng):
        return self._LQ @ rng.standard_normal(self.n)

    def sample_initial(self, rng):
        return self.mu0 + self._L0 @ rng.standard_normal(self.n)


@dataclass
class Controller:
    kp: np.ndarray
    setpoint: np.ndarray

    def __post_init__(self):
        self.setpoint = as_vector(self.setpoint, "setpoint")
        self.kp = as_matrix(self.kp, "kp", (None, self.setpoint.shape[0]))


def control(ctrl, y):
    y = as_vector(y, "y", ctrl.setpoint.shape[0])
    return ctrl.kp @ (ctrl.setpoint - y)


def step(model, y, u_applied, rng=None, w=None):
    """Advance one step; pass ``w`` to replay a noise draw on a shadow trajectory."""
    y = as_vector(y, "y", model.n)
    u_applied = as_vector(u_applied, "u_applied", model.c)
    if w is None:
        w = model.sample_noise(rng)
    return model.A @ y + model.B @ u_applied + w, w


def estimate(model, y_prev, u_applied_prev):
    return model.A @ as_vector(y_prev, "y_prev", model.n) + model.B @ as_vector(u_applied_prev, "u_prev", model.c)


def residual(y, y_hat):
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ConfigurationError(f"residual operands differ in shape: {y.shape} vs {y_hat.shape}")
    return y - y_hat


@dataclass
class Segment:
    model: PlantModel
    controller: Controller

    @property
    def setpoint(self):
        return float(self.controller.setpoint[0])


@dataclass
class PiecewiseModel:
    """Ordered operating points; the active one hands over when ``y`` first crosses its setpoint.

    The crossing direction is fixed when a segment becomes active, from the
    sign of ``setpoint - y`` at that moment.
    """

    segments: list
    active_index: int = 0
    direction: float = 1.0
    exhausted: bool = False
    switches: list = field(default_factory=list)

    def __post_init__(self):
        if not self.segments:
            raise ConfigurationError("a piecewise model needs at least one segment")
        if any(s.model.n != 1 for s in self.segments):
            raise ConfigurationError("switch conditions require a scalar output")

    @property
    def active(self):
        return self.segments[self.active_index]

    def activate(self, index, y):
        self.active_index = index
        gap = self.segments[index].setpoint - float(np.asarray(y).ravel()[0])
        self.direction = 1.0 if gap >= 0 else -1.0

    def crossed(self, y):
        return (float(np.asarray(y).ravel()[0]) - self.active.setpoint) * self.direction >= 0.0


def piecewise_step(pw, y, u, rng=None, w=None):
    """Step with the active segment; returns ``(y_next, w, switched)``.

    When the last segment's setpoint is crossed ``pw.exhausted`` is set,
    which callers treat as the end of the motion profile.
    """
    if pw.exhausted:
        raise ConfigurationError("all segments of the piecewise model are exhausted")
    y_next, w = step(pw.active.model, y, u, rng, w)
    switched = False
    if pw.crossed(y_next):
        if pw.active_index + 1 < len(pw.segments):
            pw.activate(pw.active_index + 1, y_next)
            switched = True
        else:
            pw.exhausted = True
    return y_next, w, switched
